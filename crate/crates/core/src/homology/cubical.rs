//! Elementary cubical complexes of unions of closed grid boxes, graded by
//! the filtration level at which each cell first appears.

use super::chain::SparseComplex;
use super::raster::{Grid, Mask};
use super::HomologyError;

const ABSENT: u8 = u8::MAX;

/// Cells are encoded in doubled coordinates `x_j ∈ [0, 2 n_j]`; odd
/// coordinates are nondegenerate intervals.
#[derive(Debug, Clone)]
pub struct CubicalComplex {
    grid: Grid,
    radix: Vec<usize>,
    level: Vec<u8>,
    levels: usize,
}

impl CubicalComplex {
    /// Complex of the largest mask with each cell tagged by the first mask
    /// whose closure contains it. Masks must be nested.
    pub fn from_filtration(masks: &[Mask]) -> Result<Self, HomologyError> {
        let Some(first) = masks.first() else {
            return Err(HomologyError::InvalidGrid("empty filtration".into()));
        };
        let grid = first.grid.clone();
        if masks.len() >= ABSENT as usize {
            return Err(HomologyError::InvalidGrid("too many filtration levels".into()));
        }
        for (k, w) in masks.windows(2).enumerate() {
            if w[1].grid != grid {
                return Err(HomologyError::GridMismatch);
            }
            if let Some(cell) = (0..grid.len()).find(|&i| w[0].bits[i] && !w[1].bits[i]) {
                return Err(HomologyError::NestingViolation { level: k + 1, cell });
            }
        }
        let radix: Vec<usize> = grid.shape.iter().map(|n| 2 * n + 1).collect();
        let total: usize = radix.iter().product();
        let mut level = vec![ABSENT; total];
        let d = grid.dim();
        let offsets: Vec<Vec<isize>> = (0..3usize.pow(d as u32))
            .map(|mut t| {
                (0..d)
                    .map(|_| {
                        let o = (t % 3) as isize - 1;
                        t /= 3;
                        o
                    })
                    .collect()
            })
            .collect();
        for b in 0..grid.len() {
            let Some(lvl) = masks.iter().position(|m| m.bits[b]) else { continue };
            let lvl = lvl as u8;
            let m = grid.multi_index(b);
            for off in &offsets {
                let mut code = 0;
                for j in (0..d).rev() {
                    code = code * radix[j] + (2 * m[j] + 1).wrapping_add_signed(off[j]);
                }
                if level[code] > lvl {
                    level[code] = lvl;
                }
            }
        }
        Ok(Self { grid, radix, level, levels: masks.len() })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn level_of(&self, code: usize) -> Option<usize> {
        (self.level[code] != ABSENT).then_some(self.level[code] as usize)
    }

    pub fn coords(&self, mut code: usize) -> Vec<usize> {
        self.radix
            .iter()
            .map(|&r| {
                let x = code % r;
                code /= r;
                x
            })
            .collect()
    }

    pub fn cell_dim(&self, code: usize) -> usize {
        self.coords(code).iter().filter(|&&x| x % 2 == 1).count()
    }

    /// Geometric center of a cell.
    pub fn cell_point(&self, code: usize) -> Vec<f64> {
        self.coords(code).iter().enumerate().map(|(j, &x)| self.grid.lower[j] + 0.5 * x as f64 * self.grid.h[j]).collect()
    }

    /// `∂(I₁×…×I_d) = Σ_j (−1)^{#nondegenerate before j} (… × ∂I_j × …)`.
    pub fn boundary(&self, code: usize) -> Vec<(usize, i64)> {
        let x = self.coords(code);
        let mut out = Vec::new();
        let mut stride = 1;
        let mut sign = 1;
        for (j, &xj) in x.iter().enumerate() {
            if xj % 2 == 1 {
                out.push((code - stride, -sign));
                out.push((code + stride, sign));
                sign = -sign;
            }
            stride *= self.radix[j];
        }
        out
    }

    /// Cells of level exactly `k`, ascending by code.
    pub fn level_cells(&self, k: usize) -> Vec<usize> {
        (0..self.level.len()).filter(|&c| self.level[c] as usize == k).collect()
    }

    /// Relative complex `cl(M_k) ∖ cl(M_{k−1})` with local ids in the order
    /// of [`Self::level_cells`].
    pub fn level_complex(&self, k: usize) -> (SparseComplex, Vec<usize>) {
        let cells = self.level_cells(k);
        let mut local = std::collections::HashMap::with_capacity(cells.len());
        for (i, &c) in cells.iter().enumerate() {
            local.insert(c, i as u32);
        }
        let mut cx = SparseComplex::default();
        for &c in &cells {
            let faces = self.boundary(c).into_iter().filter_map(|(f, s)| local.get(&f).map(|&i| (i, s))).collect();
            cx.push(self.cell_dim(c) as u8, faces);
        }
        (cx, cells)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homology::chain::ChainHomology;

    #[test]
    fn square_boundary_squares_to_zero() {
        let g = Grid::from_box(&[0.0, 0.0, 0.0], &[2.0, 2.0, 2.0], 1.0).unwrap();
        let cx = CubicalComplex::from_filtration(&[Mask::full(&g)]).unwrap();
        for c in 0..cx.level.len() {
            let mut acc = std::collections::HashMap::new();
            for (f, s) in cx.boundary(c) {
                for (ff, t) in cx.boundary(f) {
                    *acc.entry(ff).or_insert(0) += s * t;
                }
            }
            assert!(acc.values().all(|&v| v == 0));
        }
    }

    #[test]
    fn closed_box_is_contractible() {
        let g = Grid::from_box(&[0.0, 0.0], &[1.0, 1.0], 0.1).unwrap();
        let cx = CubicalComplex::from_filtration(&[Mask::full(&g)]).unwrap();
        let (sc, cells) = cx.level_complex(0);
        assert_eq!(cells.len(), 21 * 21);
        let h = ChainHomology::compute(sc, false).unwrap();
        assert_eq!(h.betti_numbers(), vec![1, 0, 0]);
    }

    #[test]
    fn nesting_is_checked() {
        let g = Grid::from_box(&[0.0], &[1.0], 0.5).unwrap();
        let a = Mask { grid: g.clone(), bits: vec![true, false] };
        let b = Mask { grid: g, bits: vec![false, true] };
        assert!(matches!(CubicalComplex::from_filtration(&[a, b]), Err(HomologyError::NestingViolation { level: 1, cell: 0 })));
    }
}
