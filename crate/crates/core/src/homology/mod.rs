//! Integer homology of rasterized sets: relative cubical homology, the
//! cellular complex of a filtration and its comparison with a Morse complex.

pub mod chain;
pub mod cubical;
pub mod raster;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::snf::{IntMatrix, SnfError};
use chain::{Chain, ChainHomology, SparseComplex};
use cubical::CubicalComplex;
pub use raster::{rasterize, Grid, Mask, Raster};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HomologyError {
    #[error("grid dimension {0} outside 1..=4")]
    Dimension(usize),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("masks live on different grids")]
    GridMismatch,
    #[error("filtration level {level} does not contain cell {cell} of the level below")]
    NestingViolation { level: usize, cell: usize },
    #[error("chain is not a relative cycle")]
    NotACycle,
    #[error("elimination maps were not retained")]
    MapsNotRetained,
    #[error("boundary composition ∂{degree}∂{} is nonzero", degree + 1)]
    BoundarySquareNonzero { degree: usize },
    #[error("not a Morse filtration in degree {degree}: {reason}")]
    NotAMorseFiltration { degree: usize, reason: String },
    #[error("malformed mask file: {0}")]
    MaskFormat(String),
    #[error(transparent)]
    Snf(#[from] SnfError),
}

/// Betti numbers and torsion per degree, with cycle representatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomologyResult {
    pub betti: Vec<usize>,
    pub torsion: Vec<Vec<i64>>,
    /// Free generators for degrees ≤ 2, as chains of cell codes.
    #[serde(skip)]
    pub generators: Vec<Vec<Vec<(usize, i64)>>>,
}

impl HomologyResult {
    fn from_chain(h: &ChainHomology, ids: Option<&[usize]>) -> Result<Self, HomologyError> {
        let top = h.top_degree();
        let mut generators = Vec::new();
        if let Some(ids) = ids {
            for m in 0..=top.min(2) {
                let gens = h.generators(m)?;
                generators.push(gens.into_iter().map(|g| g.into_iter().map(|(c, k)| (ids[c as usize], k)).collect()).collect());
            }
        }
        let mut out = Self {
            betti: (0..=top).map(|m| h.betti(m)).collect(),
            torsion: (0..=top).map(|m| h.degree(m).torsion).collect(),
            generators,
        };
        out.trim();
        Ok(out)
    }

    fn trim(&mut self) {
        while self.betti.len() > 1 && self.betti.last() == Some(&0) && self.torsion.last().is_some_and(Vec::is_empty) {
            self.betti.pop();
            self.torsion.pop();
        }
        if self.betti.is_empty() {
            self.betti.push(0);
            self.torsion.push(Vec::new());
        }
    }

    pub fn betti(&self, m: usize) -> usize {
        self.betti.get(m).copied().unwrap_or(0)
    }

    pub fn torsion(&self, m: usize) -> &[i64] {
        self.torsion.get(m).map_or(&[], Vec::as_slice)
    }

    pub fn is_trivial(&self) -> bool {
        self.betti.iter().all(|&b| b == 0) && self.torsion.iter().all(Vec::is_empty)
    }

    /// `ℤ` in degree `k`, zero elsewhere.
    pub fn is_sphere_like(&self, k: usize) -> bool {
        (0..self.betti.len().max(k + 1)).all(|m| self.betti(m) == usize::from(m == k) && self.torsion(m).is_empty())
    }

    /// Same groups, ignoring representatives and trailing zeros.
    pub fn same_groups(&self, other: &HomologyResult) -> bool {
        let n = self.betti.len().max(other.betti.len());
        (0..n).all(|m| self.betti(m) == other.betti(m) && self.torsion(m) == other.torsion(m))
    }
}

/// A rasterized pair `(big, small)`.
#[derive(Debug, Clone)]
pub struct CubicalPair {
    pub big: Mask,
    pub small: Mask,
}

impl CubicalPair {
    pub fn new(big: Mask, small: Mask) -> Result<Self, HomologyError> {
        if big.grid != small.grid {
            return Err(HomologyError::GridMismatch);
        }
        if let Some(cell) = (0..big.bits.len()).find(|&i| small.bits[i] && !big.bits[i]) {
            return Err(HomologyError::NestingViolation { level: 1, cell });
        }
        Ok(Self { big, small })
    }
}

/// `H_*(|big|, |small|)` of the unions of closed cells.
pub fn relative_homology(pair: &CubicalPair) -> Result<HomologyResult, HomologyError> {
    let cx = CubicalComplex::from_filtration(&[pair.small.clone(), pair.big.clone()])?;
    let (sc, ids) = cx.level_complex(1);
    let h = ChainHomology::compute(sc, true)?;
    HomologyResult::from_chain(&h, Some(&ids))
}

/// Absolute homology of one mask.
pub fn homology(mask: &Mask) -> Result<HomologyResult, HomologyError> {
    relative_homology(&CubicalPair::new(mask.clone(), Mask::empty(&mask.grid))?)
}

/// Homology of an abstract complex given by `boundaries[k]: C_k → C_{k−1}`
/// (with `boundaries[0]` of shape `0 × n₀`).
pub fn homology_of_matrices(boundaries: &[IntMatrix]) -> Result<HomologyResult, HomologyError> {
    let mut sc = SparseComplex::default();
    let mut offset = Vec::new();
    for (k, d) in boundaries.iter().enumerate() {
        offset.push(sc.len() as u32);
        for j in 0..d.cols() {
            let faces: Chain =
                if k == 0 { Vec::new() } else { (0..d.rows()).filter(|&i| d.get(i, j) != 0).map(|i| (offset[k - 1] + i as u32, d.get(i, j))).collect() };
            sc.push(k as u8, faces);
        }
    }
    if sc.is_empty() {
        return Ok(HomologyResult { betti: vec![0], torsion: vec![Vec::new()], generators: Vec::new() });
    }
    let h = ChainHomology::compute(sc, false)?;
    let mut out = HomologyResult::from_chain(&h, None)?;
    out.trim();
    Ok(out)
}

/// `boundaries[k] · boundaries[k+1] = 0` for all k; returns the first failing degree.
pub fn check_boundary_square(boundaries: &[IntMatrix]) -> Result<(), HomologyError> {
    for k in 1..boundaries.len().saturating_sub(1) {
        if !boundaries[k].checked_mul(&boundaries[k + 1])?.is_zero() {
            return Err(HomologyError::BoundarySquareNonzero { degree: k });
        }
    }
    Ok(())
}

/// The cellular chain complex `C_k = H_k(F_k, F_{k−1})` of a filtration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellularComplex {
    /// `rank C_k`.
    pub ranks: Vec<usize>,
    /// `H_*(F_k, F_{k−1})` in all degrees, per level.
    pub level_homology: Vec<HomologyResult>,
    /// `∂_k: C_k → C_{k−1}` in the generator bases; `boundaries[0]` is `0 × rank C₀`.
    pub boundaries: Vec<IntMatrix>,
    pub homology: HomologyResult,
}

impl CellularComplex {
    /// Degrees `(k, ℓ)` with `H_ℓ(F_k, F_{k−1}) ≠ 0` for `ℓ ≠ k`.
    pub fn off_diagonal(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (k, h) in self.level_homology.iter().enumerate() {
            for l in 0..h.betti.len() {
                if l != k && (h.betti(l) > 0 || !h.torsion(l).is_empty()) {
                    out.push((k, l));
                }
            }
        }
        out
    }
}

/// Triple boundary operators of nested masks `F₀ ⊂ F₁ ⊂ …`, computed by
/// lifting generators of `H_k(F_k, F_{k−1})` and reading their boundaries
/// in `H_{k−1}(F_{k−1}, F_{k−2})`.
pub fn triple_boundary(masks: &[Mask]) -> Result<CellularComplex, HomologyError> {
    let cx = CubicalComplex::from_filtration(masks)?;
    let mut levels = Vec::with_capacity(masks.len());
    let mut level_homology = Vec::with_capacity(masks.len());
    for k in 0..masks.len() {
        let (sc, ids) = cx.level_complex(k);
        let h = ChainHomology::compute(sc, true)?;
        level_homology.push(HomologyResult::from_chain(&h, None)?);
        let local: std::collections::HashMap<usize, u32> = ids.iter().enumerate().map(|(i, &c)| (c, i as u32)).collect();
        levels.push((h, ids, local));
    }
    let ranks: Vec<usize> = levels.iter().enumerate().map(|(k, (h, _, _))| h.betti(k)).collect();
    let mut boundaries = vec![IntMatrix::zeros(0, ranks.first().copied().unwrap_or(0))];
    for k in 1..masks.len() {
        let (h, ids, _) = &levels[k];
        let (h_below, _, local_below) = &levels[k - 1];
        let mut d = IntMatrix::zeros(ranks[k - 1], ranks[k]);
        for j in 0..ranks[k] {
            let gen = h.generator(k, j)?;
            let mut acc: std::collections::HashMap<u32, i64> = std::collections::HashMap::new();
            for (c, coef) in gen {
                for (f, s) in cx.boundary(ids[c as usize]) {
                    if cx.level_of(f) == Some(k - 1) {
                        *acc.entry(local_below[&f]).or_default() += coef * s;
                    }
                }
            }
            let mut image: Chain = acc.into_iter().filter(|&(_, v)| v != 0).collect();
            image.sort_unstable();
            let coords = h_below.coordinates(k - 1, &image)?;
            for (i, x) in coords.into_iter().enumerate() {
                d.set(i, j, x);
            }
        }
        boundaries.push(d);
    }
    check_boundary_square(&boundaries)?;
    let homology = homology_of_matrices(&boundaries)?;
    Ok(CellularComplex { ranks, level_homology, boundaries, homology })
}

/// Outcome of matching a cellular complex against a Morse complex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoReport {
    pub ranks_match: bool,
    /// `signs[k][j] · e_{perm[k][j]}` is the cellular image of the j-th Morse generator.
    pub permutation: Option<Vec<Vec<usize>>>,
    pub signs: Option<Vec<Vec<i64>>>,
    pub homology_equal: bool,
}

impl IsoReport {
    pub fn matched(&self) -> bool {
        self.ranks_match && self.permutation.is_some() && self.homology_equal
    }
}

/// Signed permutations `S_k` with `cell_k · S_k = S_{k−1} · morse_k` in every degree.
pub fn match_signed_permutation(cell: &[IntMatrix], morse: &[IntMatrix]) -> Option<(Vec<Vec<usize>>, Vec<Vec<i64>>)> {
    if cell.len() != morse.len() || cell.iter().zip(morse).any(|(a, b)| a.cols() != b.cols()) {
        return None;
    }
    let mut perms: Vec<Vec<usize>> = Vec::new();
    let mut signs: Vec<Vec<i64>> = Vec::new();
    let mut budget = 1_000_000usize;
    if search_degree(cell, morse, 0, &mut perms, &mut signs, &mut budget) {
        Some((perms, signs))
    } else {
        None
    }
}

fn search_degree(
    cell: &[IntMatrix],
    morse: &[IntMatrix],
    k: usize,
    perms: &mut Vec<Vec<usize>>,
    signs: &mut Vec<Vec<i64>>,
    budget: &mut usize,
) -> bool {
    if k == cell.len() {
        return true;
    }
    let n = cell[k].cols();
    let mut perm = Vec::with_capacity(n);
    let mut sign = Vec::with_capacity(n);
    let mut used = vec![false; n];
    search_column(cell, morse, k, &mut perm, &mut sign, &mut used, perms, signs, budget)
}

#[allow(clippy::too_many_arguments)]
fn search_column(
    cell: &[IntMatrix],
    morse: &[IntMatrix],
    k: usize,
    perm: &mut Vec<usize>,
    sign: &mut Vec<i64>,
    used: &mut Vec<bool>,
    perms: &mut Vec<Vec<usize>>,
    signs: &mut Vec<Vec<i64>>,
    budget: &mut usize,
) -> bool {
    let n = cell[k].cols();
    let j = perm.len();
    if j == n {
        perms.push(perm.clone());
        signs.push(sign.clone());
        if search_degree(cell, morse, k + 1, perms, signs, budget) {
            return true;
        }
        perms.pop();
        signs.pop();
        return false;
    }
    for target in 0..n {
        if used[target] {
            continue;
        }
        for s in [1i64, -1] {
            if *budget == 0 {
                return false;
            }
            *budget -= 1;
            // column j of cell_k · S_k is s · cell_k[:, target]; column j of
            // S_{k−1} · morse_k places morse_k[i, j] at row perm_{k−1}[i].
            let ok = k == 0 || {
                let (pp, ps) = (&perms[k - 1], &signs[k - 1]);
                let mut expect = vec![0i64; cell[k].rows()];
                for i in 0..morse[k].rows() {
                    expect[pp[i]] += ps[i] * morse[k].get(i, j);
                }
                (0..cell[k].rows()).all(|r| s * cell[k].get(r, target) == expect[r])
            };
            if !ok {
                continue;
            }
            used[target] = true;
            perm.push(target);
            sign.push(s);
            if search_column(cell, morse, k, perm, sign, used, perms, signs, budget) {
                return true;
            }
            perm.pop();
            sign.pop();
            used[target] = false;
        }
    }
    false
}

/// Compares ranks, boundary matrices (up to signed permutation) and
/// homology of a cellular complex with Morse data.
pub fn compare_complexes(
    cellular: &CellularComplex,
    crit_counts: &[usize],
    morse_boundaries: &[IntMatrix],
    morse_homology: &HomologyResult,
) -> Result<IsoReport, HomologyError> {
    if let Some(&(k, l)) = cellular.off_diagonal().first() {
        return Err(HomologyError::NotAMorseFiltration { degree: k, reason: format!("H_{l}(F_{k}, F_{}) is nonzero", k as i64 - 1) });
    }
    let n = cellular.ranks.len().max(crit_counts.len());
    for k in 0..n {
        let (r, c) = (cellular.ranks.get(k).copied().unwrap_or(0), crit_counts.get(k).copied().unwrap_or(0));
        if r != c {
            return Err(HomologyError::NotAMorseFiltration { degree: k, reason: format!("rank {r} but {c} critical points") });
        }
    }
    let pad = |b: &[IntMatrix], ranks: &[usize]| -> Vec<IntMatrix> {
        (0..n)
            .map(|k| {
                b.get(k).cloned().unwrap_or_else(|| {
                    IntMatrix::zeros(if k == 0 { 0 } else { ranks.get(k - 1).copied().unwrap_or(0) }, ranks.get(k).copied().unwrap_or(0))
                })
            })
            .collect()
    };
    let cell = pad(&cellular.boundaries, &cellular.ranks);
    let morse = pad(morse_boundaries, crit_counts);
    let found = match_signed_permutation(&cell, &morse);
    Ok(IsoReport {
        ranks_match: true,
        homology_equal: cellular.homology.same_groups(morse_homology),
        permutation: found.as_ref().map(|f| f.0.clone()),
        signs: found.map(|f| f.1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn grid2(h: f64) -> Grid {
        Grid::from_box(&[-2.0, -2.0], &[2.0, 2.0], h).unwrap()
    }

    #[test]
    fn disk_relative_to_collar() {
        let g = grid2(0.1);
        let big = Mask::from_fn(&g, |p| p.norm() < 1.5);
        let small = Mask::from_fn(&g, |p| p.norm() < 1.5 && p.norm() > 1.0);
        let h = relative_homology(&CubicalPair::new(big, small).unwrap()).unwrap();
        assert!(h.is_sphere_like(2), "{h:?}");
        assert_eq!(h.generators[2].len(), 1);
    }

    #[test]
    fn strip_relative_to_ends() {
        let g = grid2(0.1);
        let big = Mask::from_fn(&g, |p| p[0].abs() < 1.5 && p[1].abs() < 0.3);
        let small = Mask::from_fn(&g, |p| p[0].abs() < 1.5 && p[0].abs() > 1.2 && p[1].abs() < 0.3);
        let h = relative_homology(&CubicalPair::new(big, small).unwrap()).unwrap();
        assert!(h.is_sphere_like(1), "{h:?}");
    }

    #[test]
    fn equal_sets_give_trivial_pair() {
        let g = grid2(0.2);
        let m = Mask::from_fn(&g, |p| p.norm() < 1.0);
        assert!(relative_homology(&CubicalPair::new(m.clone(), m).unwrap()).unwrap().is_trivial());
    }

    #[test]
    fn annulus_homology() {
        let g = grid2(0.1);
        let m = Mask::from_fn(&g, |p| p.norm() < 1.5 && p.norm() > 0.7);
        assert_eq!(homology(&m).unwrap().betti, vec![1, 1]);
    }

    #[test]
    fn two_disks_joined_by_bridge() {
        // F0 = two disks, F1 = F0 plus a bridge
        let g = grid2(0.1);
        let disks = |p: &DVector<f64>| (p[0] - 1.0).hypot(p[1]) < 0.6 || (p[0] + 1.0).hypot(p[1]) < 0.6;
        let f0 = Mask::from_fn(&g, disks);
        let f1 = Mask::from_fn(&g, |p| disks(p) || (p[0].abs() < 1.0 && p[1].abs() < 0.15));
        let cc = triple_boundary(&[f0, f1]).unwrap();
        assert_eq!(cc.ranks, vec![2, 1]);
        assert!(cc.off_diagonal().is_empty());
        let d = &cc.boundaries[1];
        assert_eq!(d.rows(), 2);
        assert_eq!(d.get(0, 0) * d.get(1, 0), -1);
        assert_eq!(cc.homology.betti, vec![1]);
        let morse = vec![IntMatrix::zeros(0, 2), IntMatrix::from_rows(&[vec![1], vec![-1]])];
        let mh = homology_of_matrices(&morse).unwrap();
        let rep = compare_complexes(&cc, &[2, 1], &morse, &mh).unwrap();
        assert!(rep.matched(), "{rep:?}");
    }

    #[test]
    fn single_level_has_zero_boundaries() {
        let g = grid2(0.2);
        let cc = triple_boundary(&[Mask::from_fn(&g, |p| p.norm() < 1.0)]).unwrap();
        assert_eq!(cc.ranks, vec![1]);
        assert_eq!(cc.boundaries.len(), 1);
    }

    #[test]
    fn equal_masks_give_zero_groups_above_base() {
        let g = grid2(0.2);
        let m = Mask::from_fn(&g, |p| p.norm() < 1.0);
        let cc = triple_boundary(&[m.clone(), m.clone(), m]).unwrap();
        assert_eq!(cc.ranks, vec![1, 0, 0]);
        assert!(cc.level_homology[1].is_trivial() && cc.level_homology[2].is_trivial());
    }

    #[test]
    fn off_diagonal_level_is_reported() {
        let g = grid2(0.1);
        let f0 = Mask::from_fn(&g, |p| p[0].abs() < 1.5 && p[1].abs() < 0.5);
        let cc = triple_boundary(&[f0]).unwrap();
        let err = compare_complexes(&cc, &[2], &[IntMatrix::zeros(0, 2)], &homology_of_matrices(&[IntMatrix::zeros(0, 2)]).unwrap());
        assert!(matches!(err, Err(HomologyError::NotAMorseFiltration { degree: 0, .. })));
    }

    #[test]
    fn matrix_homology_of_circle() {
        let b = vec![IntMatrix::zeros(0, 1), IntMatrix::zeros(1, 1)];
        assert_eq!(homology_of_matrices(&b).unwrap().betti, vec![1, 1]);
        assert_eq!(homology_of_matrices(&[]).unwrap().betti, vec![0]);
    }
}
