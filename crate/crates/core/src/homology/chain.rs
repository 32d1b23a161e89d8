//! Sparse integer chain complexes: reduction by unit-pivot elimination,
//! Smith-form homology, generators and coordinates on original cells.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::HomologyError;
use crate::snf::{smith_normal_form, IntMatrix};

/// Sparse chain as `(cell, coefficient)` pairs.
pub type Chain = Vec<(u32, i64)>;

/// Finite chain complex on cells `0..n`; `boundary[c]` lists faces of `c`.
#[derive(Debug, Clone, Default)]
pub struct SparseComplex {
    pub dims: Vec<u8>,
    pub boundary: Vec<Chain>,
}

impl SparseComplex {
    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn top_dim(&self) -> Option<usize> {
        self.dims.iter().max().map(|&d| d as usize)
    }

    pub fn push(&mut self, dim: u8, boundary: Chain) -> u32 {
        self.dims.push(dim);
        self.boundary.push(boundary);
        (self.dims.len() - 1) as u32
    }

    /// Boundary of a chain.
    pub fn apply(&self, chain: &[(u32, i64)]) -> Chain {
        let mut acc: HashMap<u32, i64> = HashMap::new();
        for &(c, k) in chain {
            for &(f, m) in &self.boundary[c as usize] {
                *acc.entry(f).or_default() += k * m;
            }
        }
        sorted(acc)
    }
}

fn sorted(map: HashMap<u32, i64>) -> Chain {
    let mut v: Chain = map.into_iter().filter(|&(_, k)| k != 0).collect();
    v.sort_unstable();
    v
}

fn add_entry(v: &mut Chain, id: u32, k: i64) {
    match v.iter().position(|&(c, _)| c == id) {
        Some(p) => {
            v[p].1 += k;
            if v[p].1 == 0 {
                v.swap_remove(p);
            }
        }
        None if k != 0 => v.push((id, k)),
        None => {}
    }
}

fn remove_entry(v: &mut Chain, id: u32) {
    if let Some(p) = v.iter().position(|&(c, _)| c == id) {
        v.swap_remove(p);
    }
}

#[derive(Debug, Clone)]
struct Step {
    a: u32,
    b: u32,
    u: i64,
    dim_a: u8,
    boundary_b: Chain,
    coboundary_a: Chain,
}

struct Reducer {
    dims: Vec<u8>,
    alive: Vec<bool>,
    bd: Vec<Chain>,
    cob: Vec<Chain>,
    log: Option<Vec<Step>>,
}

impl Reducer {
    fn new(cx: SparseComplex, keep_log: bool) -> Self {
        let n = cx.len();
        let mut cob = vec![Vec::new(); n];
        for (c, faces) in cx.boundary.iter().enumerate() {
            for &(f, k) in faces {
                cob[f as usize].push((c as u32, k));
            }
        }
        Self { dims: cx.dims, alive: vec![true; n], bd: cx.boundary, cob, log: keep_log.then(Vec::new) }
    }

    fn simple_pair(&self, x: u32) -> Option<(u32, u32, i64)> {
        let xi = x as usize;
        if !self.alive[xi] {
            return None;
        }
        if let [(b, u)] = self.cob[xi][..] {
            if u.abs() == 1 {
                return Some((x, b, u));
            }
        }
        if let [(a, u)] = self.bd[xi][..] {
            if u.abs() == 1 {
                return Some((a, x, u));
            }
        }
        None
    }

    fn eliminate(&mut self, a: u32, b: u32, u: i64, touched: &mut Vec<u32>) {
        let (ai, bi) = (a as usize, b as usize);
        let boundary_b = self.bd[bi].clone();
        let coboundary_a = self.cob[ai].clone();
        for &(c, lambda) in &coboundary_a {
            if c == b {
                continue;
            }
            let scale = lambda * u;
            for &(f, mu) in &boundary_b {
                let delta = -scale * mu;
                add_entry(&mut self.bd[c as usize], f, delta);
                add_entry(&mut self.cob[f as usize], c, delta);
            }
            touched.push(c);
        }
        for &(c, _) in &self.cob[bi].clone() {
            remove_entry(&mut self.bd[c as usize], b);
            touched.push(c);
        }
        for &(f, _) in &boundary_b {
            remove_entry(&mut self.cob[f as usize], b);
            touched.push(f);
        }
        for &(f, _) in &self.bd[ai].clone() {
            remove_entry(&mut self.cob[f as usize], a);
            touched.push(f);
        }
        for &(c, _) in &coboundary_a {
            for &(f, _) in &self.bd[c as usize] {
                touched.push(f);
            }
        }
        self.alive[ai] = false;
        self.alive[bi] = false;
        self.bd[ai].clear();
        self.bd[bi].clear();
        self.cob[ai].clear();
        self.cob[bi].clear();
        if let Some(log) = &mut self.log {
            log.push(Step { a, b, u, dim_a: self.dims[ai], boundary_b, coboundary_a });
        }
    }

    fn drain(&mut self, queue: &mut VecDeque<u32>) {
        let mut touched = Vec::new();
        while let Some(x) = queue.pop_front() {
            if let Some((a, b, u)) = self.simple_pair(x) {
                touched.clear();
                self.eliminate(a, b, u, &mut touched);
                queue.extend(touched.iter().copied().filter(|&t| self.alive[t as usize]));
            }
        }
    }

    /// Unit pivot minimizing fill-in, lowest ids on ties.
    fn markowitz_pair(&self) -> Option<(u32, u32, i64)> {
        let mut best: Option<(usize, u32, u32, i64)> = None;
        for b in 0..self.bd.len() {
            if !self.alive[b] {
                continue;
            }
            for &(a, u) in &self.bd[b] {
                if u.abs() != 1 {
                    continue;
                }
                let cost = (self.cob[a as usize].len() - 1) * (self.bd[b].len() - 1);
                let key = (cost, b as u32, a, u);
                if best.map_or(true, |(c, bb, aa, _)| (cost, b as u32, a) < (c, bb, aa)) {
                    best = Some(key);
                }
            }
        }
        best.map(|(_, b, a, u)| (a, b, u))
    }

    fn run(&mut self) {
        let mut queue: VecDeque<u32> = (0..self.dims.len() as u32).collect();
        self.drain(&mut queue);
        let mut touched = Vec::new();
        while let Some((a, b, u)) = self.markowitz_pair() {
            touched.clear();
            self.eliminate(a, b, u, &mut touched);
            queue.extend(touched.iter().copied().filter(|&t| self.alive[t as usize]));
            self.drain(&mut queue);
        }
    }
}

/// Homology of one degree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeHomology {
    pub betti: usize,
    pub torsion: Vec<i64>,
}

#[derive(Debug, Clone)]
struct DegreeData {
    survivors: Vec<u32>,
    position: HashMap<u32, usize>,
    p: IntMatrix,
    rank_in: usize,
    q_kernel_inv: IntMatrix,
    rank_out: usize,
    /// Free generators in survivor coordinates (columns).
    generators: IntMatrix,
    torsion: Vec<i64>,
}

/// Integer homology of a sparse complex with optional chain maps to and
/// from the reduced complex.
#[derive(Debug, Clone)]
pub struct ChainHomology {
    degrees: Vec<DegreeData>,
    log: Option<Vec<Step>>,
}

impl ChainHomology {
    /// `keep_maps` retains the elimination log needed by
    /// [`Self::generator`] and [`Self::coordinates`].
    pub fn compute(cx: SparseComplex, keep_maps: bool) -> Result<Self, HomologyError> {
        let top = cx.top_dim().unwrap_or(0);
        let mut red = Reducer::new(cx, keep_maps);
        red.run();
        let mut survivors: Vec<Vec<u32>> = vec![Vec::new(); top + 2];
        for c in 0..red.dims.len() {
            if red.alive[c] {
                survivors[red.dims[c] as usize].push(c as u32);
            }
        }
        let position: Vec<HashMap<u32, usize>> =
            survivors.iter().map(|s| s.iter().enumerate().map(|(i, &c)| (c, i)).collect()).collect();
        // matrix[m] : C_m → C_{m−1}
        let matrix = |m: usize| -> IntMatrix {
            if m == 0 || m > top {
                let rows = if m == 0 { 0 } else { survivors[m - 1].len() };
                return IntMatrix::zeros(rows, survivors.get(m).map_or(0, Vec::len));
            }
            let mut d = IntMatrix::zeros(survivors[m - 1].len(), survivors[m].len());
            for (j, &c) in survivors[m].iter().enumerate() {
                for &(f, k) in &red.bd[c as usize] {
                    let i = position[m - 1][&f];
                    d.set(i, j, d.get(i, j) + k);
                }
            }
            d
        };
        let mut degrees = Vec::with_capacity(top + 1);
        for m in 0..=top {
            let n = survivors[m].len();
            let d_in = matrix(m + 1);
            let d_out = matrix(m);
            let s_in = smith_normal_form(&d_in)?;
            let r = s_in.rank();
            let tail = s_in.p_inv.columns(r..n);
            let e = d_out.checked_mul(&tail)?;
            let s_out = smith_normal_form(&e)?;
            let r2 = s_out.rank();
            let generators = tail.checked_mul(&s_out.q.columns(r2..n - r))?;
            degrees.push(DegreeData {
                survivors: survivors[m].clone(),
                position: position[m].clone(),
                p: s_in.p,
                rank_in: r,
                q_kernel_inv: s_out.q_inv,
                rank_out: r2,
                generators,
                torsion: s_in.diagonal.into_iter().filter(|&x| x > 1).collect(),
            });
        }
        Ok(Self { degrees, log: red.log })
    }

    pub fn top_degree(&self) -> usize {
        self.degrees.len().saturating_sub(1)
    }

    pub fn degree(&self, m: usize) -> DegreeHomology {
        match self.degrees.get(m) {
            Some(d) => DegreeHomology { betti: d.generators.cols(), torsion: d.torsion.clone() },
            None => DegreeHomology { betti: 0, torsion: Vec::new() },
        }
    }

    pub fn betti(&self, m: usize) -> usize {
        self.degree(m).betti
    }

    pub fn betti_numbers(&self) -> Vec<usize> {
        (0..self.degrees.len()).map(|m| self.betti(m)).collect()
    }

    /// Number of cells left after reduction, per degree.
    pub fn reduced_sizes(&self) -> Vec<usize> {
        self.degrees.iter().map(|d| d.survivors.len()).collect()
    }

    fn log(&self) -> Result<&[Step], HomologyError> {
        self.log.as_deref().ok_or(HomologyError::MapsNotRetained)
    }

    /// Cycle on original cells representing the `j`-th free generator in degree `m`.
    pub fn generator(&self, m: usize, j: usize) -> Result<Chain, HomologyError> {
        let log = self.log()?;
        let d = &self.degrees[m];
        let mut chain: HashMap<u32, i64> = HashMap::new();
        for (i, &c) in d.survivors.iter().enumerate() {
            let k = d.generators.get(i, j);
            if k != 0 {
                chain.insert(c, k);
            }
        }
        for step in log.iter().rev() {
            if step.dim_a as usize + 1 != m {
                continue;
            }
            let pairing: i64 = step.coboundary_a.iter().map(|(c, l)| chain.get(c).copied().unwrap_or(0) * l).sum();
            if pairing != 0 {
                *chain.entry(step.b).or_default() -= pairing * step.u;
            }
        }
        Ok(sorted(chain))
    }

    pub fn generators(&self, m: usize) -> Result<Vec<Chain>, HomologyError> {
        (0..self.betti(m)).map(|j| self.generator(m, j)).collect()
    }

    /// Coordinates of the homology class of a degree-`m` cycle (given on
    /// original cells) in the free generator basis.
    pub fn coordinates(&self, m: usize, cycle: &[(u32, i64)]) -> Result<Vec<i64>, HomologyError> {
        let log = self.log()?;
        let Some(d) = self.degrees.get(m) else {
            return Ok(Vec::new());
        };
        let mut chain: HashMap<u32, i64> = cycle.iter().copied().collect();
        for step in log {
            if step.dim_a as usize == m {
                if let Some(k) = chain.remove(&step.a) {
                    let s = k * step.u;
                    for &(f, mu) in &step.boundary_b {
                        if f != step.a {
                            *chain.entry(f).or_default() -= s * mu;
                        }
                    }
                }
            } else if step.dim_a as usize + 1 == m {
                chain.remove(&step.b);
            }
        }
        let mut z = vec![0i64; d.survivors.len()];
        for (c, k) in chain {
            if k == 0 {
                continue;
            }
            match d.position.get(&c) {
                Some(&i) => z[i] += k,
                None => return Err(HomologyError::NotACycle),
            }
        }
        let y = d.p.mul_vec(&z);
        let w = d.q_kernel_inv.mul_vec(&y[d.rank_in..]);
        if w[..d.rank_out].iter().any(|&x| x != 0) {
            return Err(HomologyError::NotACycle);
        }
        Ok(w[d.rank_out..].to_vec())
    }
}
