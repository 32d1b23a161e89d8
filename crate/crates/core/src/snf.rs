//! Integer matrices and Smith normal form with unimodular transforms.

use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{CheckedAdd, CheckedMul, CheckedSub, One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SnfError {
    #[error("transform entries exceed the 64-bit range")]
    CoefficientOverflow,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Dense row-major integer matrix.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntMatrix {
    rows: usize,
    cols: usize,
    data: Vec<i64>,
}

impl fmt::Debug for IntMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "IntMatrix {}x{} ", self.rows, self.cols)?;
        f.debug_list().entries((0..self.rows).map(|i| self.row(i))).finish()
    }
}

impl IntMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1);
        }
        m
    }

    /// Panics on ragged input.
    pub fn from_rows(rows: &[Vec<i64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self { rows: rows.len(), cols, data: rows.concat() }
    }

    pub fn with_shape(rows: usize, cols: usize, data: Vec<i64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> i64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: i64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[i64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<i64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn column(&self, j: usize) -> Vec<i64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0)
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    /// Product with overflow detection.
    pub fn checked_mul(&self, rhs: &IntMatrix) -> Result<IntMatrix, SnfError> {
        if self.cols != rhs.rows {
            return Err(SnfError::Shape(format!("{}x{} · {}x{}", self.rows, self.cols, rhs.rows, rhs.cols)));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    let v = (a as i128) * (rhs.get(k, j) as i128) + out.get(i, j) as i128;
                    out.set(i, j, i64::try_from(v).map_err(|_| SnfError::CoefficientOverflow)?);
                }
            }
        }
        Ok(out)
    }

    /// Panicking product for small matrices known not to overflow.
    pub fn mul(&self, rhs: &IntMatrix) -> IntMatrix {
        self.checked_mul(rhs).expect("integer matrix product")
    }

    pub fn mul_vec(&self, v: &[i64]) -> Vec<i64> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }

    /// Columns `range` as a new matrix.
    pub fn columns(&self, range: std::ops::Range<usize>) -> IntMatrix {
        let mut out = Self::zeros(self.rows, range.len());
        for i in 0..self.rows {
            for (jj, j) in range.clone().enumerate() {
                out.set(i, jj, self.get(i, j));
            }
        }
        out
    }

    /// Rows `range` as a new matrix.
    pub fn row_block(&self, range: std::ops::Range<usize>) -> IntMatrix {
        let cols = self.cols;
        Self { rows: range.len(), cols, data: self.data[range.start * cols..range.end * cols].to_vec() }
    }
}

/// Ring operations the elimination needs; implemented for `i64` (checked)
/// and `BigInt` (never overflows).
pub trait Coeff: Clone + PartialEq + fmt::Debug + Zero + One + Integer + Signed + CheckedAdd + CheckedSub + CheckedMul {
    fn from_i64(v: i64) -> Self;
    fn to_i64(&self) -> Option<i64>;
}

impl Coeff for i64 {
    fn from_i64(v: i64) -> Self {
        v
    }
    fn to_i64(&self) -> Option<i64> {
        Some(*self)
    }
}

impl Coeff for BigInt {
    fn from_i64(v: i64) -> Self {
        BigInt::from(v)
    }
    fn to_i64(&self) -> Option<i64> {
        ToPrimitive::to_i64(self)
    }
}

struct Overflow;

type Dense<T> = Vec<Vec<T>>;

fn ident<T: Coeff>(n: usize) -> Dense<T> {
    (0..n).map(|i| (0..n).map(|j| if i == j { T::one() } else { T::zero() }).collect()).collect()
}

fn axpy<T: Coeff>(k: &T, src: &[T], dst: &mut [T]) -> Result<(), Overflow> {
    for (d, s) in dst.iter_mut().zip(src) {
        if s.is_zero() {
            continue;
        }
        let prod = k.checked_mul(s).ok_or(Overflow)?;
        *d = d.checked_add(&prod).ok_or(Overflow)?;
    }
    Ok(())
}

/// `P · A · Q = D` with `D` diagonal, `d₁ | d₂ | …`, all `dᵢ > 0`.
struct Work<T: Coeff> {
    a: Dense<T>,
    p: Dense<T>,
    p_inv: Dense<T>,
    q: Dense<T>,
    q_inv: Dense<T>,
}

impl<T: Coeff> Work<T> {
    fn swap_rows(&mut self, i: usize, j: usize) {
        if i == j {
            return;
        }
        self.a.swap(i, j);
        self.p.swap(i, j);
        for row in &mut self.p_inv {
            row.swap(i, j);
        }
    }

    fn swap_cols(&mut self, i: usize, j: usize) {
        if i == j {
            return;
        }
        for row in self.a.iter_mut().chain(self.q.iter_mut()) {
            row.swap(i, j);
        }
        self.q_inv.swap(i, j);
    }

    /// row_i += k · row_j
    fn add_row(&mut self, i: usize, j: usize, k: &T) -> Result<(), Overflow> {
        let (src, dst) = pair_mut(&mut self.a, j, i);
        axpy(k, src, dst)?;
        let (src, dst) = pair_mut(&mut self.p, j, i);
        axpy(k, src, dst)?;
        let neg = -k.clone();
        for row in &mut self.p_inv {
            let add = neg.checked_mul(&row[i]).ok_or(Overflow)?;
            row[j] = row[j].checked_add(&add).ok_or(Overflow)?;
        }
        Ok(())
    }

    /// col_i += k · col_j
    fn add_col(&mut self, i: usize, j: usize, k: &T) -> Result<(), Overflow> {
        for row in self.a.iter_mut().chain(self.q.iter_mut()) {
            let add = k.checked_mul(&row[j]).ok_or(Overflow)?;
            row[i] = row[i].checked_add(&add).ok_or(Overflow)?;
        }
        let neg = -k.clone();
        let (src, dst) = pair_mut(&mut self.q_inv, i, j);
        axpy(&neg, src, dst)
    }

    fn negate_row(&mut self, i: usize) {
        for x in self.a[i].iter_mut().chain(self.p[i].iter_mut()) {
            *x = -x.clone();
        }
        for row in &mut self.p_inv {
            row[i] = -row[i].clone();
        }
    }

    fn run(&mut self) -> Result<usize, Overflow> {
        let m = self.a.len();
        let n = self.a.first().map_or(0, Vec::len);
        let mut t = 0;
        while t < m.min(n) {
            let Some((pi, pj)) = self.min_entry(t) else { break };
            self.swap_rows(t, pi);
            self.swap_cols(t, pj);
            loop {
                let mut dirty = false;
                for i in t + 1..m {
                    if self.a[i][t].is_zero() {
                        continue;
                    }
                    let q = self.a[i][t].div_floor(&self.a[t][t]);
                    self.add_row(i, t, &-q)?;
                    if !self.a[i][t].is_zero() {
                        dirty = true;
                    }
                }
                for j in t + 1..n {
                    if self.a[t][j].is_zero() {
                        continue;
                    }
                    let q = self.a[t][j].div_floor(&self.a[t][t]);
                    self.add_col(j, t, &-q)?;
                    if !self.a[t][j].is_zero() {
                        dirty = true;
                    }
                }
                if dirty {
                    let (pi, pj) = self.min_in_cross(t);
                    self.swap_rows(t, pi);
                    self.swap_cols(t, pj);
                    continue;
                }
                let bad = (t + 1..m).find(|&i| (t + 1..n).any(|j| !self.a[i][j].is_multiple_of(&self.a[t][t])));
                match bad {
                    Some(i) => self.add_row(t, i, &T::one())?,
                    None => break,
                }
            }
            if self.a[t][t].is_negative() {
                self.negate_row(t);
            }
            t += 1;
        }
        Ok(t)
    }

    fn min_entry(&self, t: usize) -> Option<(usize, usize)> {
        let mut best: Option<(usize, usize)> = None;
        for (i, row) in self.a.iter().enumerate().skip(t) {
            for (j, x) in row.iter().enumerate().skip(t) {
                if x.is_zero() {
                    continue;
                }
                if best.map_or(true, |(bi, bj)| x.abs() < self.a[bi][bj].abs()) {
                    best = Some((i, j));
                }
            }
        }
        best
    }

    fn min_in_cross(&self, t: usize) -> (usize, usize) {
        let mut best = (t, t);
        let mut val: Option<T> = None;
        let n = self.a[t].len();
        let cands = (t..self.a.len()).map(|i| (i, t)).chain((t + 1..n).map(|j| (t, j)));
        for (i, j) in cands {
            let x = &self.a[i][j];
            if x.is_zero() {
                continue;
            }
            if val.as_ref().map_or(true, |v| x.abs() < *v) {
                val = Some(x.abs());
                best = (i, j);
            }
        }
        best
    }
}

fn pair_mut<T>(rows: &mut [Vec<T>], src: usize, dst: usize) -> (&[T], &mut [T]) {
    assert_ne!(src, dst);
    if src < dst {
        let (lo, hi) = rows.split_at_mut(dst);
        (&lo[src], &mut hi[0])
    } else {
        let (lo, hi) = rows.split_at_mut(src);
        (&hi[0], &mut lo[dst])
    }
}

/// Smith normal form `P · A · Q = D`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snf {
    /// Nonzero invariant factors, ascending by divisibility.
    pub diagonal: Vec<i64>,
    pub p: IntMatrix,
    pub p_inv: IntMatrix,
    pub q: IntMatrix,
    pub q_inv: IntMatrix,
}

impl Snf {
    pub fn rank(&self) -> usize {
        self.diagonal.len()
    }

    /// The full diagonal matrix `D` with the shape of `A`.
    pub fn d_matrix(&self) -> IntMatrix {
        let mut d = IntMatrix::zeros(self.p.rows(), self.q.rows());
        for (i, &x) in self.diagonal.iter().enumerate() {
            d.set(i, i, x);
        }
        d
    }
}

fn generic<T: Coeff>(a: &IntMatrix) -> Result<(Vec<T>, [Dense<T>; 4]), Overflow> {
    let (m, n) = (a.rows(), a.cols());
    let mut w = Work {
        a: (0..m).map(|i| a.row(i).iter().map(|&x| T::from_i64(x)).collect()).collect(),
        p: ident(m),
        p_inv: ident(m),
        q: ident(n),
        q_inv: ident(n),
    };
    let r = w.run()?;
    let diag = (0..r).map(|i| w.a[i][i].clone()).collect();
    Ok((diag, [w.p, w.p_inv, w.q, w.q_inv]))
}

fn to_int(rows: usize, cols: usize, d: &Dense<impl Coeff>) -> Result<IntMatrix, SnfError> {
    let mut data = Vec::with_capacity(rows * cols);
    for row in d {
        for x in row {
            data.push(x.to_i64().ok_or(SnfError::CoefficientOverflow)?);
        }
    }
    Ok(IntMatrix::with_shape(rows, cols, data))
}

fn assemble<T: Coeff>(m: usize, n: usize, diag: Vec<T>, mats: [Dense<T>; 4]) -> Result<Snf, SnfError> {
    let [p, p_inv, q, q_inv] = mats;
    Ok(Snf {
        diagonal: diag.iter().map(|x| x.to_i64().ok_or(SnfError::CoefficientOverflow)).collect::<Result<_, _>>()?,
        p: to_int(m, m, &p)?,
        p_inv: to_int(m, m, &p_inv)?,
        q: to_int(n, n, &q)?,
        q_inv: to_int(n, n, &q_inv)?,
    })
}

/// Smith normal form in checked 64-bit arithmetic, falling back to
/// arbitrary precision when intermediate entries overflow.
pub fn smith_normal_form(a: &IntMatrix) -> Result<Snf, SnfError> {
    let (m, n) = (a.rows(), a.cols());
    match generic::<i64>(a) {
        Ok((diag, mats)) => assemble(m, n, diag, mats),
        Err(Overflow) => match generic::<BigInt>(a) {
            Ok((diag, mats)) => assemble(m, n, diag, mats),
            Err(Overflow) => unreachable!("BigInt arithmetic is unbounded"),
        },
    }
}

/// Invariant factors only.
pub fn invariant_factors(a: &IntMatrix) -> Result<Vec<i64>, SnfError> {
    smith_normal_form(a).map(|s| s.diagonal)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classic_example() {
        let a = IntMatrix::from_rows(&[vec![2, 4, 4], vec![-6, 6, 12], vec![10, -4, -16]]);
        let s = smith_normal_form(&a).unwrap();
        assert_eq!(s.diagonal, vec![2, 6, 12]);
        assert_eq!(s.p.mul(&a).mul(&s.q), s.d_matrix());
        assert_eq!(s.p.mul(&s.p_inv), IntMatrix::identity(3));
        assert_eq!(s.q_inv.mul(&s.q), IntMatrix::identity(3));
    }

    #[test]
    fn empty_and_zero_shapes() {
        let s = smith_normal_form(&IntMatrix::zeros(0, 3)).unwrap();
        assert_eq!(s.rank(), 0);
        assert_eq!(s.q, IntMatrix::identity(3));
        let s = smith_normal_form(&IntMatrix::zeros(2, 2)).unwrap();
        assert!(s.diagonal.is_empty());
    }

    #[test]
    fn boundary_of_segment_pair() {
        let a = IntMatrix::from_rows(&[vec![-1], vec![1]]);
        let s = smith_normal_form(&a).unwrap();
        assert_eq!(s.diagonal, vec![1]);
        assert_eq!(s.p.mul(&a).mul(&s.q), s.d_matrix());
    }

    #[test]
    fn overflow_falls_back_to_bigint() {
        let big = 3_000_000_000i64;
        let a = IntMatrix::from_rows(&[vec![big, big + 1], vec![big - 1, big]]);
        let s = smith_normal_form(&a).unwrap();
        assert_eq!(s.diagonal, vec![1, 1]);
    }
}
