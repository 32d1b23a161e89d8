//! State spaces and energy functionals.
//!
//! Two kinds of systems are supported. Loop systems discretize the free loop
//! space of a flat manifold (circle, flat torus, Euclidean space) by `N`
//! equi-spaced samples and carry the discrete action
//!
//! ```text
//! S(x) = (1/N) Σ_i [ ½ N² |x_{i+1} − x_i|² − V(i/N, x_i) ],   x_N = x_0 + w
//! ```
//!
//! where `w` is the winding vector of the homotopy sector. Analytic systems
//! are low-dimensional energies with closed-form derivatives.
//!
//! Gradients are taken with respect to the discrete L² product
//! `⟨u, v⟩ = (1/N) Σ u_i · v_i` (the Euclidean product for analytic systems),
//! and Hessians are the derivative of that gradient.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const TAU: f64 = 2.0 * PI;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid state: expected dimension {expected}, got {got}")]
    InvalidState { expected: usize, got: usize },
    #[error("invalid system: {0}")]
    InvalidSystem(String),
}

/// The closed manifold `M` (or a Euclidean stand-in) the loops live in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ManifoldDescriptor {
    /// `S¹ = ℝ/ℤ`.
    Circle,
    /// `ℝ^dim / ℤ^dim`.
    FlatTorus { dim: usize },
    Euclidean { dim: usize },
}

impl ManifoldDescriptor {
    pub fn dim(&self) -> usize {
        match self {
            ManifoldDescriptor::Circle => 1,
            ManifoldDescriptor::FlatTorus { dim } | ManifoldDescriptor::Euclidean { dim } => *dim,
        }
    }

    /// Whether the unit lattice acts by deck translations.
    pub fn is_periodic(&self) -> bool {
        !matches!(self, ManifoldDescriptor::Euclidean { .. })
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.dim() == 0 {
            return Err(ModelError::InvalidSystem("manifold dimension must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trig {
    Cos,
    Sin,
}

impl Trig {
    fn eval(self, x: f64) -> f64 {
        match self {
            Trig::Cos => x.cos(),
            Trig::Sin => x.sin(),
        }
    }

    fn deriv(self, x: f64) -> f64 {
        match self {
            Trig::Cos => -x.sin(),
            Trig::Sin => x.cos(),
        }
    }
}

/// One term `coeff · T(2π m t) · Q(2π w·q)` of a potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierTerm {
    pub coeff: f64,
    #[serde(default)]
    pub time_mode: i32,
    #[serde(default = "default_cos")]
    pub time_trig: Trig,
    pub wave: Vec<i32>,
    #[serde(default = "default_cos")]
    pub space_trig: Trig,
}

fn default_cos() -> Trig {
    Trig::Cos
}

/// Truncated Fourier series `V(t, q)`, 1-periodic in `t` and ℤ^d-periodic in `q`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Potential {
    pub terms: Vec<FourierTerm>,
}

impl Potential {
    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    /// `κ cos(2π q)` on the circle.
    pub fn pendulum(kappa: f64) -> Self {
        Self {
            terms: vec![FourierTerm {
                coeff: kappa,
                time_mode: 0,
                time_trig: Trig::Cos,
                wave: vec![1],
                space_trig: Trig::Cos,
            }],
        }
    }

    pub fn dim(&self) -> Option<usize> {
        self.terms.first().map(|t| t.wave.len())
    }

    fn time_factor(term: &FourierTerm, t: f64) -> f64 {
        term.time_trig.eval(TAU * term.time_mode as f64 * t)
    }

    fn phase(term: &FourierTerm, q: &[f64]) -> f64 {
        TAU * term.wave.iter().zip(q).map(|(&w, &x)| w as f64 * x).sum::<f64>()
    }

    pub fn value(&self, t: f64, q: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|term| term.coeff * Self::time_factor(term, t) * term.space_trig.eval(Self::phase(term, q)))
            .sum()
    }

    /// Adds `∇_q V(t, q)` into `out`.
    pub fn add_gradient(&self, t: f64, q: &[f64], scale: f64, out: &mut [f64]) {
        for term in &self.terms {
            let amp = scale * term.coeff * Self::time_factor(term, t) * term.space_trig.deriv(Self::phase(term, q)) * TAU;
            for (o, &w) in out.iter_mut().zip(&term.wave) {
                *o += amp * w as f64;
            }
        }
    }

    /// Adds `∇²_q V(t, q)` (row-major `d × d`) into `out`.
    pub fn add_hessian(&self, t: f64, q: &[f64], scale: f64, out: &mut [f64]) {
        let d = q.len();
        for term in &self.terms {
            // second derivative of cos/sin is the negated function
            let amp = -scale * term.coeff * Self::time_factor(term, t) * term.space_trig.eval(Self::phase(term, q)) * TAU * TAU;
            for a in 0..d {
                for b in 0..d {
                    out[a * d + b] += amp * term.wave[a] as f64 * term.wave[b] as f64;
                }
            }
        }
    }

    /// True when no term depends on `q`.
    pub fn is_q_independent(&self) -> bool {
        self.terms.iter().all(|t| t.wave.iter().all(|&w| w == 0) && t.space_trig == Trig::Cos)
    }
}

/// Named closed-form energies on `ℝ^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum AnalyticEnergy {
    /// `(x² − 1)² + y²`.
    DoubleWell,
    /// `½ Σ d_i z_i²`.
    Quadratic { diag: Vec<f64> },
    /// `−½ z₁² + ¼ z₁⁴ + ½ z₂²`, flow `ż₁ = z₁ − z₁³`, `ż₂ = −z₂`.
    CubicSaddle,
    /// `−½ x² + ¼ x⁴ + ½ y² + ½ c x² y²`.
    CoupledSaddle { coupling: f64 },
    /// `(x² − s²)²/s² + (y² − s²)²/s² + z²`: four minima, four index-1 saddles,
    /// one index-2 saddle at the origin.
    SaddleChain3d { scale: f64 },
}

impl AnalyticEnergy {
    pub fn dim(&self) -> usize {
        match self {
            AnalyticEnergy::DoubleWell | AnalyticEnergy::CubicSaddle | AnalyticEnergy::CoupledSaddle { .. } => 2,
            AnalyticEnergy::Quadratic { diag } => diag.len(),
            AnalyticEnergy::SaddleChain3d { .. } => 3,
        }
    }

    fn value(&self, z: &[f64]) -> f64 {
        match self {
            AnalyticEnergy::DoubleWell => {
                let (x, y) = (z[0], z[1]);
                (x * x - 1.0).powi(2) + y * y
            }
            AnalyticEnergy::Quadratic { diag } => 0.5 * diag.iter().zip(z).map(|(d, x)| d * x * x).sum::<f64>(),
            AnalyticEnergy::CubicSaddle => {
                let (x, y) = (z[0], z[1]);
                -0.5 * x * x + 0.25 * x.powi(4) + 0.5 * y * y
            }
            AnalyticEnergy::CoupledSaddle { coupling } => {
                let (x, y) = (z[0], z[1]);
                -0.5 * x * x + 0.25 * x.powi(4) + 0.5 * y * y + 0.5 * coupling * x * x * y * y
            }
            AnalyticEnergy::SaddleChain3d { scale } => {
                let s2 = scale * scale;
                (z[0] * z[0] - s2).powi(2) / s2 + (z[1] * z[1] - s2).powi(2) / s2 + z[2] * z[2]
            }
        }
    }

    fn gradient(&self, z: &[f64], out: &mut [f64]) {
        match self {
            AnalyticEnergy::DoubleWell => {
                let (x, y) = (z[0], z[1]);
                out[0] = 4.0 * x * (x * x - 1.0);
                out[1] = 2.0 * y;
            }
            AnalyticEnergy::Quadratic { diag } => {
                for ((o, d), x) in out.iter_mut().zip(diag).zip(z) {
                    *o = d * x;
                }
            }
            AnalyticEnergy::CubicSaddle => {
                out[0] = -z[0] + z[0].powi(3);
                out[1] = z[1];
            }
            AnalyticEnergy::CoupledSaddle { coupling } => {
                let (x, y) = (z[0], z[1]);
                out[0] = -x + x.powi(3) + coupling * x * y * y;
                out[1] = y + coupling * x * x * y;
            }
            AnalyticEnergy::SaddleChain3d { scale } => {
                let s2 = scale * scale;
                out[0] = 4.0 * z[0] * (z[0] * z[0] - s2) / s2;
                out[1] = 4.0 * z[1] * (z[1] * z[1] - s2) / s2;
                out[2] = 2.0 * z[2];
            }
        }
    }

    fn hessian(&self, z: &[f64], out: &mut DMatrix<f64>) {
        out.fill(0.0);
        match self {
            AnalyticEnergy::DoubleWell => {
                out[(0, 0)] = 12.0 * z[0] * z[0] - 4.0;
                out[(1, 1)] = 2.0;
            }
            AnalyticEnergy::Quadratic { diag } => {
                for (i, d) in diag.iter().enumerate() {
                    out[(i, i)] = *d;
                }
            }
            AnalyticEnergy::CubicSaddle => {
                out[(0, 0)] = -1.0 + 3.0 * z[0] * z[0];
                out[(1, 1)] = 1.0;
            }
            AnalyticEnergy::CoupledSaddle { coupling } => {
                let (x, y) = (z[0], z[1]);
                out[(0, 0)] = -1.0 + 3.0 * x * x + coupling * y * y;
                out[(1, 1)] = 1.0 + coupling * x * x;
                out[(0, 1)] = 2.0 * coupling * x * y;
                out[(1, 0)] = 2.0 * coupling * x * y;
            }
            AnalyticEnergy::SaddleChain3d { scale } => {
                let s2 = scale * scale;
                out[(0, 0)] = (12.0 * z[0] * z[0] - 4.0 * s2) / s2;
                out[(1, 1)] = (12.0 * z[1] * z[1] - 4.0 * s2) / s2;
                out[(2, 2)] = 2.0;
            }
        }
    }
}

/// Discretized loop space `ΛM` in one homotopy sector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopSpace {
    pub manifold: ManifoldDescriptor,
    pub potential: Potential,
    pub segments: usize,
    pub winding: Vec<i64>,
}

/// A loop as `N` samples in fundamental-domain coordinates plus its winding.
///
/// Converting to a state vector unwraps consecutive samples by the nearest
/// lattice image, which is exact whenever neighbouring samples of the lifted
/// loop are less than half a period apart.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopState {
    pub points: Vec<Vec<f64>>,
    pub winding: Vec<i64>,
}

impl LoopState {
    pub fn segments(&self) -> usize {
        self.points.len()
    }

    /// Reduces a lifted state vector to fundamental-domain samples.
    pub fn from_lifted(space: &LoopSpace, z: &DVector<f64>) -> Result<Self, ModelError> {
        let d = space.manifold.dim();
        check_dim(space.segments * d, z.len())?;
        let periodic = space.manifold.is_periodic();
        let points = (0..space.segments)
            .map(|i| {
                (0..d)
                    .map(|j| {
                        let x = z[i * d + j];
                        if periodic {
                            x.rem_euclid(1.0)
                        } else {
                            x
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self { points, winding: space.winding.clone() })
    }

    /// Lifts the samples to the universal cover, starting from the first sample.
    pub fn to_lifted(&self, space: &LoopSpace) -> Result<DVector<f64>, ModelError> {
        let d = space.manifold.dim();
        if self.points.len() != space.segments || self.points.iter().any(|p| p.len() != d) {
            return Err(ModelError::InvalidState { expected: space.segments * d, got: self.points.iter().map(Vec::len).sum() });
        }
        let periodic = space.manifold.is_periodic();
        let mut z = DVector::zeros(space.segments * d);
        for j in 0..d {
            z[j] = self.points[0][j];
        }
        for i in 1..space.segments {
            for j in 0..d {
                let prev = z[(i - 1) * d + j];
                let mut x = self.points[i][j];
                if periodic {
                    x += (prev - x).round();
                }
                z[i * d + j] = x;
            }
        }
        Ok(z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum SystemKind {
    LoopSpace(LoopSpace),
    Analytic(AnalyticEnergy),
}

/// A gradient semi-flow generator: energy, L² gradient and Hessian on a
/// finite-dimensional state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSystem {
    kind: SystemKind,
}

fn check_dim(expected: usize, got: usize) -> Result<(), ModelError> {
    if expected == got {
        Ok(())
    } else {
        Err(ModelError::InvalidState { expected, got })
    }
}

impl ModelSystem {
    pub fn analytic(energy: AnalyticEnergy) -> Result<Self, ModelError> {
        if energy.dim() == 0 {
            return Err(ModelError::InvalidSystem("analytic system needs dimension ≥ 1".into()));
        }
        if let AnalyticEnergy::SaddleChain3d { scale } = &energy {
            if *scale <= 0.0 {
                return Err(ModelError::InvalidSystem("scale must be positive".into()));
            }
        }
        Ok(Self { kind: SystemKind::Analytic(energy) })
    }

    pub fn loop_space(
        manifold: ManifoldDescriptor,
        potential: Potential,
        segments: usize,
        winding: Vec<i64>,
    ) -> Result<Self, ModelError> {
        manifold.validate()?;
        let d = manifold.dim();
        if segments < 8 || segments % 2 != 0 {
            return Err(ModelError::InvalidSystem(format!("segment count must be even and ≥ 8, got {segments}")));
        }
        if winding.len() != d {
            return Err(ModelError::InvalidSystem(format!("winding has length {}, manifold dimension is {d}", winding.len())));
        }
        if !manifold.is_periodic() && winding.iter().any(|&w| w != 0) {
            return Err(ModelError::InvalidSystem("Euclidean loops have zero winding".into()));
        }
        if let Some(t) = potential.terms.iter().find(|t| t.wave.len() != d) {
            return Err(ModelError::InvalidSystem(format!("potential term wave vector {:?} does not match dimension {d}", t.wave)));
        }
        Ok(Self { kind: SystemKind::LoopSpace(LoopSpace { manifold, potential, segments, winding }) })
    }

    pub fn kind(&self) -> &SystemKind {
        &self.kind
    }

    pub fn as_loop(&self) -> Option<&LoopSpace> {
        match &self.kind {
            SystemKind::LoopSpace(l) => Some(l),
            SystemKind::Analytic(_) => None,
        }
    }

    pub fn is_loop(&self) -> bool {
        self.as_loop().is_some()
    }

    /// `n_state`.
    pub fn dim(&self) -> usize {
        match &self.kind {
            SystemKind::LoopSpace(l) => l.segments * l.manifold.dim(),
            SystemKind::Analytic(e) => e.dim(),
        }
    }

    fn check(&self, z: &DVector<f64>) -> Result<(), ModelError> {
        check_dim(self.dim(), z.len())
    }

    pub fn action(&self, z: &DVector<f64>) -> Result<f64, ModelError> {
        self.check(z)?;
        Ok(match &self.kind {
            SystemKind::Analytic(e) => e.value(z.as_slice()),
            SystemKind::LoopSpace(l) => loop_action(l, z.as_slice()),
        })
    }

    pub fn gradient(&self, z: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        self.check(z)?;
        let mut out = DVector::zeros(self.dim());
        match &self.kind {
            SystemKind::Analytic(e) => e.gradient(z.as_slice(), out.as_mut_slice()),
            SystemKind::LoopSpace(l) => loop_gradient(l, z.as_slice(), out.as_mut_slice()),
        }
        Ok(out)
    }

    /// Hessian as assembled, before symmetrization.
    pub fn hessian_raw(&self, z: &DVector<f64>) -> Result<DMatrix<f64>, ModelError> {
        self.check(z)?;
        let n = self.dim();
        let mut h = DMatrix::zeros(n, n);
        match &self.kind {
            SystemKind::Analytic(e) => e.hessian(z.as_slice(), &mut h),
            SystemKind::LoopSpace(l) => loop_hessian(l, z.as_slice(), &mut h),
        }
        Ok(h)
    }

    /// Symmetric Hessian, the derivative of [`ModelSystem::gradient`].
    pub fn hessian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>, ModelError> {
        let h = self.hessian_raw(z)?;
        Ok((&h + h.transpose()) * 0.5)
    }

    /// The constant linear part `L` of the gradient, `∇S(z) = L z + rest(z)`,
    /// treated implicitly by the semi-implicit integrator.
    pub fn linear_part(&self) -> Option<DMatrix<f64>> {
        let l = self.as_loop()?;
        let d = l.manifold.dim();
        let n = l.segments;
        let n2 = (n * n) as f64;
        let mut m = DMatrix::zeros(n * d, n * d);
        for i in 0..n {
            let ip = (i + 1) % n;
            let im = (i + n - 1) % n;
            for j in 0..d {
                m[(i * d + j, i * d + j)] += 2.0 * n2;
                m[(i * d + j, ip * d + j)] -= n2;
                m[(i * d + j, im * d + j)] -= n2;
            }
        }
        Some(m)
    }

    /// Number of L² weights: `N` for loops, 1 for analytic systems.
    fn weight(&self) -> f64 {
        match &self.kind {
            SystemKind::LoopSpace(l) => l.segments as f64,
            SystemKind::Analytic(_) => 1.0,
        }
    }

    /// Discrete L² inner product.
    pub fn l2_dot(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        u.dot(v) / self.weight()
    }

    pub fn l2_norm(&self, u: &DVector<f64>) -> f64 {
        self.l2_dot(u, u).sqrt()
    }

    /// Discrete `W^{1,p}` norm of a tangent vector (a difference of states).
    /// Analytic systems have no derivative part and use the Euclidean norm.
    pub fn w1p_norm(&self, u: &DVector<f64>, p: f64) -> f64 {
        match &self.kind {
            SystemKind::Analytic(_) => u.norm(),
            SystemKind::LoopSpace(l) => {
                let d = l.manifold.dim();
                let n = l.segments;
                let nf = n as f64;
                let mut sum = 0.0;
                for i in 0..n {
                    let ip = (i + 1) % n;
                    let mut a2 = 0.0;
                    let mut b2 = 0.0;
                    for j in 0..d {
                        a2 += u[i * d + j].powi(2);
                        b2 += (nf * (u[ip * d + j] - u[i * d + j])).powi(2);
                    }
                    sum += a2.powf(p / 2.0) + b2.powf(p / 2.0);
                }
                (sum / nf).powf(1.0 / p)
            }
        }
    }

    /// Max-norm distance modulo deck translations of the lattice.
    pub fn lattice_distance(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        match &self.kind {
            SystemKind::Analytic(_) => (a - b).amax(),
            SystemKind::LoopSpace(l) => {
                let d = l.manifold.dim();
                let shift: Vec<f64> = (0..d)
                    .map(|j| if l.manifold.is_periodic() { (a[j] - b[j]).round() } else { 0.0 })
                    .collect();
                (0..a.len()).map(|k| (a[k] - b[k] - shift[k % d]).abs()).fold(0.0, f64::max)
            }
        }
    }

    /// The deck translation `k ∈ ℤ^d` with `a ≈ b + k` (zero for analytic systems).
    pub fn lattice_offset(&self, a: &DVector<f64>, b: &DVector<f64>) -> Vec<i64> {
        match &self.kind {
            SystemKind::Analytic(_) => Vec::new(),
            SystemKind::LoopSpace(l) => {
                let d = l.manifold.dim();
                if !l.manifold.is_periodic() {
                    return vec![0; d];
                }
                (0..d).map(|j| (a[j] - b[j]).round() as i64).collect()
            }
        }
    }

    /// Translates a loop so its first sample lies in `[0, 1)^d`.
    pub fn canonicalize(&self, z: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            SystemKind::LoopSpace(l) if l.manifold.is_periodic() => {
                let d = l.manifold.dim();
                let shift: Vec<f64> = (0..d).map(|j| z[j].floor()).collect();
                DVector::from_fn(z.len(), |k, _| z[k] - shift[k % d])
            }
            _ => z.clone(),
        }
    }

    /// Translates `z` by the lattice vector `k` (no-op for analytic systems).
    pub fn translate(&self, z: &DVector<f64>, k: &[i64]) -> DVector<f64> {
        match &self.kind {
            SystemKind::LoopSpace(l) => {
                let d = l.manifold.dim();
                DVector::from_fn(z.len(), |i, _| z[i] + k[i % d] as f64)
            }
            SystemKind::Analytic(_) => z.clone(),
        }
    }

    /// The constant loop `q` (repeated across samples) plus winding line.
    pub fn loop_from_fn(&self, f: impl Fn(f64, usize) -> f64) -> Result<DVector<f64>, ModelError> {
        let l = self.as_loop().ok_or_else(|| ModelError::InvalidSystem("not a loop system".into()))?;
        let d = l.manifold.dim();
        let n = l.segments;
        Ok(DVector::from_fn(n * d, |k, _| {
            let (i, j) = (k / d, k % d);
            let t = i as f64 / n as f64;
            f(t, j) + l.winding[j] as f64 * t
        }))
    }
}

fn loop_action(l: &LoopSpace, z: &[f64]) -> f64 {
    let d = l.manifold.dim();
    let n = l.segments;
    let nf = n as f64;
    let mut kinetic = 0.0;
    let mut potential = 0.0;
    for i in 0..n {
        let ip = (i + 1) % n;
        let wrap = if ip == 0 { 1.0 } else { 0.0 };
        for j in 0..d {
            let dx = z[ip * d + j] + wrap * l.winding[j] as f64 - z[i * d + j];
            kinetic += dx * dx;
        }
        potential += l.potential.value(i as f64 / nf, &z[i * d..(i + 1) * d]);
    }
    0.5 * nf * kinetic - potential / nf
}

fn loop_gradient(l: &LoopSpace, z: &[f64], out: &mut [f64]) {
    let d = l.manifold.dim();
    let n = l.segments;
    let nf = n as f64;
    let n2 = nf * nf;
    for i in 0..n {
        let ip = (i + 1) % n;
        let im = (i + n - 1) % n;
        let wp = if ip == 0 { 1.0 } else { 0.0 };
        let wm = if i == 0 { 1.0 } else { 0.0 };
        for j in 0..d {
            let w = l.winding[j] as f64;
            let next = z[ip * d + j] + wp * w;
            let prev = z[im * d + j] - wm * w;
            out[i * d + j] = n2 * (2.0 * z[i * d + j] - next - prev);
        }
        l.potential.add_gradient(i as f64 / nf, &z[i * d..(i + 1) * d], -1.0, &mut out[i * d..(i + 1) * d]);
    }
}

fn loop_hessian(l: &LoopSpace, z: &[f64], h: &mut DMatrix<f64>) {
    let d = l.manifold.dim();
    let n = l.segments;
    let nf = n as f64;
    let n2 = nf * nf;
    let mut block = vec![0.0; d * d];
    for i in 0..n {
        let ip = (i + 1) % n;
        let im = (i + n - 1) % n;
        for j in 0..d {
            h[(i * d + j, i * d + j)] += 2.0 * n2;
            h[(i * d + j, ip * d + j)] -= n2;
            h[(i * d + j, im * d + j)] -= n2;
        }
        block.iter_mut().for_each(|b| *b = 0.0);
        l.potential.add_hessian(i as f64 / nf, &z[i * d..(i + 1) * d], -1.0, &mut block);
        for a in 0..d {
            for b in 0..d {
                h[(i * d + a, i * d + b)] += block[a * d + b];
            }
        }
    }
}
