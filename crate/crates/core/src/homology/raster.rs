//! Uniform grids, cell masks, rasterization of membership oracles and
//! portable-bitmap mask files.

use std::collections::VecDeque;
use std::io::{self, BufRead, Read, Write};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::HomologyError;

pub const MAX_DIM: usize = 4;

/// Axis-aligned box split into `shape[j]` cells of width `h[j]` per axis.
/// Linear cell indices run with axis 0 fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lower: Vec<f64>,
    pub h: Vec<f64>,
    pub shape: Vec<usize>,
}

impl Grid {
    pub fn new(lower: Vec<f64>, h: Vec<f64>, shape: Vec<usize>) -> Result<Self, HomologyError> {
        let d = lower.len();
        if d == 0 || d > MAX_DIM {
            return Err(HomologyError::Dimension(d));
        }
        if h.len() != d || shape.len() != d {
            return Err(HomologyError::InvalidGrid("lower, h and shape must have equal length".into()));
        }
        if h.iter().any(|&x| !(x > 0.0 && x.is_finite())) || shape.iter().any(|&n| n == 0) {
            return Err(HomologyError::InvalidGrid("cell widths must be positive and shapes nonzero".into()));
        }
        Ok(Self { lower, h, shape })
    }

    /// Box `[lower, upper]` with cubic cells of width close to `h`.
    pub fn from_box(lower: &[f64], upper: &[f64], h: f64) -> Result<Self, HomologyError> {
        if lower.len() != upper.len() || lower.iter().zip(upper).any(|(l, u)| u <= l) {
            return Err(HomologyError::InvalidGrid("box bounds must satisfy lower < upper".into()));
        }
        let shape: Vec<usize> = lower.iter().zip(upper).map(|(l, u)| ((u - l) / h).round().max(1.0) as usize).collect();
        let hs = lower.iter().zip(upper).zip(&shape).map(|((l, u), &n)| (u - l) / n as f64).collect();
        Self::new(lower.to_vec(), hs, shape)
    }

    /// Odd cell counts per axis so that `center` is a cell center; the box
    /// covers at least `center ± half_width`.
    pub fn centered(center: &[f64], half_width: &[f64], h: f64) -> Result<Self, HomologyError> {
        if center.len() != half_width.len() {
            return Err(HomologyError::InvalidGrid("center and half-width lengths differ".into()));
        }
        let shape: Vec<usize> = half_width.iter().map(|&w| 2 * ((w / h - 0.5).ceil().max(0.0) as usize) + 1).collect();
        let lower = center.iter().zip(&shape).map(|(c, &n)| c - 0.5 * n as f64 * h).collect();
        Self::new(lower, vec![h; center.len()], shape)
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn upper(&self) -> Vec<f64> {
        (0..self.dim()).map(|j| self.lower[j] + self.h[j] * self.shape[j] as f64).collect()
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        self.shape
            .iter()
            .map(|&n| {
                let i = idx % n;
                idx /= n;
                i
            })
            .collect()
    }

    pub fn linear_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.shape).rev().fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn cell_center(&self, idx: usize) -> DVector<f64> {
        let m = self.multi_index(idx);
        DVector::from_fn(self.dim(), |j, _| self.lower[j] + (m[j] as f64 + 0.5) * self.h[j])
    }

    /// Cell containing `p`, if inside the box.
    pub fn locate(&self, p: &DVector<f64>) -> Option<usize> {
        if p.len() != self.dim() {
            return None;
        }
        let mut multi = Vec::with_capacity(self.dim());
        for j in 0..self.dim() {
            let x = ((p[j] - self.lower[j]) / self.h[j]).floor();
            if x < 0.0 || x >= self.shape[j] as f64 {
                return None;
            }
            multi.push(x as usize);
        }
        Some(self.linear_index(&multi))
    }

    /// Face-adjacent cells.
    pub fn neighbors(&self, idx: usize) -> Vec<usize> {
        let m = self.multi_index(idx);
        let mut out = Vec::with_capacity(2 * self.dim());
        let mut stride = 1;
        for j in 0..self.dim() {
            if m[j] > 0 {
                out.push(idx - stride);
            }
            if m[j] + 1 < self.shape[j] {
                out.push(idx + stride);
            }
            stride *= self.shape[j];
        }
        out
    }

    /// Same box, every cell split in two along each axis.
    pub fn refine(&self) -> Grid {
        Grid {
            lower: self.lower.clone(),
            h: self.h.iter().map(|h| h / 2.0).collect(),
            shape: self.shape.iter().map(|n| 2 * n).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    pub grid: Grid,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn empty(grid: &Grid) -> Self {
        Self { grid: grid.clone(), bits: vec![false; grid.len()] }
    }

    pub fn full(grid: &Grid) -> Self {
        Self { grid: grid.clone(), bits: vec![true; grid.len()] }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&DVector<f64>) -> bool) -> Self {
        Self { grid: grid.clone(), bits: (0..grid.len()).map(|i| f(&grid.cell_center(i))).collect() }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn get(&self, idx: usize) -> bool {
        self.bits[idx]
    }

    pub fn contains_point(&self, p: &DVector<f64>) -> bool {
        self.grid.locate(p).is_some_and(|i| self.bits[i])
    }

    fn zip(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Result<Mask, HomologyError> {
        if self.grid != other.grid {
            return Err(HomologyError::GridMismatch);
        }
        Ok(Mask { grid: self.grid.clone(), bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect() })
    }

    pub fn union(&self, other: &Mask) -> Result<Mask, HomologyError> {
        self.zip(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &Mask) -> Result<Mask, HomologyError> {
        self.zip(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &Mask) -> Result<Mask, HomologyError> {
        self.zip(other, |a, b| a && !b)
    }

    /// First set cell (if any) lying in `other` too.
    pub fn first_common(&self, other: &Mask) -> Option<usize> {
        (0..self.bits.len()).find(|&i| self.bits[i] && other.bits.get(i).copied().unwrap_or(false))
    }

    pub fn is_subset(&self, other: &Mask) -> bool {
        self.grid == other.grid && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Face-connected component of `cell`; empty when `cell` is unset.
    pub fn component(&self, cell: usize) -> Mask {
        let mut out = Mask::empty(&self.grid);
        if !self.bits[cell] {
            return out;
        }
        let mut queue = VecDeque::from([cell]);
        out.bits[cell] = true;
        while let Some(c) = queue.pop_front() {
            for n in self.grid.neighbors(c) {
                if self.bits[n] && !out.bits[n] {
                    out.bits[n] = true;
                    queue.push_back(n);
                }
            }
        }
        out
    }

    pub fn component_count(&self) -> usize {
        let mut seen = Mask::empty(&self.grid);
        let mut count = 0;
        for i in 0..self.bits.len() {
            if self.bits[i] && !seen.bits[i] {
                count += 1;
                let c = self.component(i);
                for (s, b) in seen.bits.iter_mut().zip(&c.bits) {
                    *s |= *b;
                }
            }
        }
        count
    }

    /// Portable bitmap (P4). Width is the axis-0 cell count; each further
    /// axis stacks rows, so a row is one axis-0 line of cells.
    pub fn write_pbm(&self, mut w: impl Write) -> io::Result<()> {
        let g = &self.grid;
        let width = g.shape[0];
        let height = g.len() / width;
        writeln!(w, "P4")?;
        writeln!(w, "# dims {}", g.dim())?;
        writeln!(w, "# shape {}", join(&g.shape))?;
        writeln!(w, "# lower {}", join(&g.lower))?;
        writeln!(w, "# h {}", join(&g.h))?;
        writeln!(w, "{width} {height}")?;
        let stride = width.div_ceil(8);
        let mut buf = vec![0u8; stride * height];
        for r in 0..height {
            for c in 0..width {
                if self.bits[r * width + c] {
                    buf[r * stride + c / 8] |= 0x80 >> (c % 8);
                }
            }
        }
        w.write_all(&buf)
    }

    pub fn read_pbm(r: impl Read) -> Result<Mask, HomologyError> {
        let bad = |m: &str| HomologyError::MaskFormat(m.to_string());
        let mut r = io::BufReader::new(r);
        let mut header = Vec::new();
        let mut shape = None;
        let mut lower = None;
        let mut h = None;
        while header.len() < 2 {
            let mut line = String::new();
            if r.read_line(&mut line).map_err(|e| bad(&e.to_string()))? == 0 {
                return Err(bad("truncated header"));
            }
            let line = line.trim();
            if let Some(rest) = line.strip_prefix('#') {
                let mut it = rest.split_whitespace();
                let key = it.next().unwrap_or("");
                let vals: Vec<&str> = it.collect();
                match key {
                    "shape" => shape = Some(parse_all::<usize>(&vals).ok_or_else(|| bad("shape"))?),
                    "lower" => lower = Some(parse_all::<f64>(&vals).ok_or_else(|| bad("lower"))?),
                    "h" => h = Some(parse_all::<f64>(&vals).ok_or_else(|| bad("h"))?),
                    _ => {}
                }
            } else if !line.is_empty() {
                header.push(line.to_string());
            }
        }
        if header[0] != "P4" {
            return Err(bad("missing P4 magic"));
        }
        let dims = parse_all::<usize>(&header[1].split_whitespace().collect::<Vec<_>>()).ok_or_else(|| bad("size line"))?;
        let (shape, lower, h) = (shape.ok_or_else(|| bad("no shape"))?, lower.ok_or_else(|| bad("no lower"))?, h.ok_or_else(|| bad("no h"))?);
        let grid = Grid::new(lower, h, shape)?;
        let width = grid.shape[0];
        let height = grid.len() / width;
        if dims != [width, height] {
            return Err(bad("size line disagrees with shape"));
        }
        let stride = width.div_ceil(8);
        let mut buf = vec![0u8; stride * height];
        r.read_exact(&mut buf).map_err(|e| bad(&e.to_string()))?;
        let bits = (0..grid.len()).map(|i| buf[(i / width) * stride + (i % width) / 8] & (0x80 >> (i % width % 8)) != 0).collect();
        Ok(Mask { grid, bits })
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

fn parse_all<T: std::str::FromStr>(v: &[&str]) -> Option<Vec<T>> {
    v.iter().map(|s| s.parse().ok()).collect()
}

#[derive(Debug, Clone)]
pub struct Raster {
    pub mask: Mask,
    /// Cells whose oracle evaluation failed; they are left unset.
    pub errors: usize,
}

/// Evaluates `oracle` at every cell center, optionally keeping only the
/// face-connected component of the cell containing `seed`.
pub fn rasterize<E, F>(grid: &Grid, oracle: F, seed: Option<&DVector<f64>>) -> Raster
where
    F: Fn(&DVector<f64>) -> Result<bool, E> + Sync,
{
    let results: Vec<Option<bool>> = (0..grid.len()).into_par_iter().map(|i| oracle(&grid.cell_center(i)).ok()).collect();
    let errors = results.iter().filter(|r| r.is_none()).count();
    let mask = Mask { grid: grid.clone(), bits: results.into_iter().map(|r| r.unwrap_or(false)).collect() };
    let mask = match seed {
        Some(p) => match grid.locate(p) {
            Some(cell) => mask.component(cell),
            None => Mask::empty(grid),
        },
        None => mask,
    };
    Raster { mask, errors }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        let g = Grid::new(vec![0.0; 3], vec![1.0; 3], vec![3, 4, 5]).unwrap();
        for i in 0..g.len() {
            assert_eq!(g.linear_index(&g.multi_index(i)), i);
            assert_eq!(g.locate(&g.cell_center(i)), Some(i));
        }
    }

    #[test]
    fn centered_grid_has_center_cell() {
        let g = Grid::centered(&[0.0, 1.0], &[1.0, 0.5], 0.1).unwrap();
        assert!(g.shape.iter().all(|n| n % 2 == 1));
        let c = g.cell_center(g.locate(&DVector::from_vec(vec![0.0, 1.0])).unwrap());
        assert!(c[0].abs() < 1e-12 && (c[1] - 1.0).abs() < 1e-12);
        assert!(g.lower[0] <= -1.0 && g.upper()[1] >= 1.5);
    }

    #[test]
    fn oracle_true_fills_grid() {
        let g = Grid::from_box(&[0.0, 0.0], &[1.0, 1.0], 0.1).unwrap();
        let r = rasterize(&g, |_| Ok::<_, ()>(true), None);
        assert_eq!(r.mask.count(), 100);
        assert_eq!(r.errors, 0);
    }

    #[test]
    fn disk_area_and_connectivity() {
        let g = Grid::from_box(&[-2.0, -2.0], &[2.0, 2.0], 0.1).unwrap();
        let r = rasterize(&g, |p| Ok::<_, ()>(p.norm() < 1.0), None);
        let n = r.mask.count() as f64;
        assert!((n - std::f64::consts::PI / 0.01).abs() < 20.0, "{n}");
        assert_eq!(r.mask.component_count(), 1);
    }

    #[test]
    fn seed_keeps_one_component() {
        let g = Grid::from_box(&[-2.0, -1.0], &[2.0, 1.0], 0.1).unwrap();
        let two = |p: &DVector<f64>| Ok::<_, ()>((p[0] - 1.0).hypot(p[1]) < 0.5 || (p[0] + 1.0).hypot(p[1]) < 0.5);
        let all = rasterize(&g, two, None).mask;
        let one = rasterize(&g, two, Some(&DVector::from_vec(vec![1.0, 0.0]))).mask;
        assert_eq!(all.component_count(), 2);
        assert_eq!(one.component_count(), 1);
        assert_eq!(2 * one.count(), all.count());
        assert!(one.contains_point(&DVector::from_vec(vec![1.0, 0.0])));
    }

    #[test]
    fn errors_are_counted_and_unset() {
        let g = Grid::from_box(&[0.0], &[1.0], 0.25).unwrap();
        let r = rasterize(&g, |p| if p[0] < 0.5 { Err("boom") } else { Ok(true) }, None);
        assert_eq!(r.errors, 2);
        assert_eq!(r.mask.bits, vec![false, false, true, true]);
    }

    #[test]
    fn pbm_round_trip() {
        let g = Grid::new(vec![-1.0, 0.5, 2.0], vec![0.1, 0.2, 0.3], vec![11, 3, 2]).unwrap();
        let m = Mask::from_fn(&g, |p| (p[0] * 7.0 + p[1] * 3.0 + p[2]).sin() > 0.0);
        let mut bytes = Vec::new();
        m.write_pbm(&mut bytes).unwrap();
        assert!(bytes.starts_with(b"P4\n# dims 3\n# shape 11 3 2\n"));
        assert_eq!(Mask::read_pbm(bytes.as_slice()).unwrap(), m);
    }
}
