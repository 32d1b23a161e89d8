//! Critical points below a regular level: Newton multistart, Morse indices,
//! spectral gaps and oriented negative eigenspaces.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, ModelSystem};
use crate::sampling;
use crate::semiflow::{Flow, FlowError};

/// Newton limits closer than this (max-norm modulo deck translations) are merged.
pub const MERGE_DISTANCE: f64 = 1e-5;
/// A critical point with spectral gap at or below this is degenerate.
pub const DEGENERACY_THRESHOLD: f64 = 1e-6;
/// Critical values closer than this to the level make it non-regular.
pub const LEVEL_MARGIN: f64 = 1e-3;
/// Required `‖∇S‖₂` at accepted critical points.
pub const GRADIENT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CriticalError {
    #[error("degenerate critical point with action {action} (spectral gap {gap:e})")]
    DegenerateCritical { action: f64, gap: f64 },
    #[error("level {level} is not regular: critical value {value} lies within {LEVEL_MARGIN}")]
    NonRegularLevel { level: f64, value: f64 },
    #[error("ε = {eps} crosses the critical value {value} below c = {c}")]
    EpsilonTooLarge { eps: f64, c: f64, value: f64 },
    #[error("invalid multistart configuration: {0}")]
    InvalidMultistart(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Where Newton starts are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StartRegion {
    /// Axis-aligned box in state space.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// Loops `c + Σ_m (a_m cos 2πmt + b_m sin 2πmt) + w t` with `c ∈ [0,1)^d`
    /// and Fourier amplitudes in `[−amplitude, amplitude]`.
    LoopModes { modes: usize, amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multistart {
    pub count: usize,
    pub seed: u64,
    pub region: StartRegion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalPoint {
    pub state: DVector<f64>,
    pub action: f64,
    pub grad_norm: f64,
    pub morse_index: usize,
    /// Hessian eigenvalues, ascending.
    pub spectrum: Vec<f64>,
    pub spectral_gap: f64,
    /// Oriented orthonormal basis of the negative eigenspace, ascending eigenvalue.
    pub neg_frame: Vec<DVector<f64>>,
    /// Orthonormal basis of the positive eigenspace, ascending eigenvalue.
    pub pos_frame: Vec<DVector<f64>>,
}

impl CriticalPoint {
    /// Builds the spectral data of a (numerical) critical point.
    pub fn analyze(sys: &ModelSystem, state: DVector<f64>) -> Result<Self, ModelError> {
        let grad_norm = sys.l2_norm(&sys.gradient(&state)?);
        let action = sys.action(&state)?;
        let hess = sys.hessian(&state)?;
        let eig = SymmetricEigen::new(hess);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
        let spectrum: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let morse_index = spectrum.iter().filter(|&&l| l < 0.0).count();
        let spectral_gap = spectrum.iter().map(|l| l.abs()).fold(f64::INFINITY, f64::min);
        let vectors: Vec<DVector<f64>> = order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
        let (neg, pos) = vectors.split_at(morse_index);
        Ok(Self {
            state,
            action,
            grad_norm,
            morse_index,
            spectrum,
            spectral_gap,
            neg_frame: orient_negative_space(neg),
            pos_frame: pos.iter().map(|v| v.normalize()).collect(),
        })
    }

    /// Orthogonal projector `π₋` onto the negative eigenspace.
    pub fn projector_minus(&self) -> DMatrix<f64> {
        projector(&self.neg_frame, self.state.len())
    }

    /// Orthogonal projector `π₊` onto the positive eigenspace.
    pub fn projector_plus(&self) -> DMatrix<f64> {
        projector(&self.pos_frame, self.state.len())
    }

    /// Reverses the orientation of one negative direction.
    pub fn flip_frame_vector(&mut self, i: usize) {
        self.neg_frame[i] = -&self.neg_frame[i];
    }
}

fn projector(frame: &[DVector<f64>], n: usize) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(n, n);
    for v in frame {
        p += v * v.transpose();
    }
    p
}

/// Applies the global sign convention to an eigenbasis: each vector's entry
/// of largest magnitude is made positive, ties going to the lowest index.
pub fn orient_negative_space(frame: &[DVector<f64>]) -> Vec<DVector<f64>> {
    frame
        .iter()
        .map(|v| {
            let v = v.normalize();
            let max = v.amax();
            let lead = v.iter().position(|x| x.abs() >= max - 1e-12 * max.max(1.0)).unwrap_or(0);
            if v[lead] < 0.0 {
                -v
            } else {
                v
            }
        })
        .collect()
}

/// All critical points with action below a regular level `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct CritSet {
    pub level: f64,
    pub points: Vec<CriticalPoint>,
}

impl CritSet {
    /// `n_a`.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.points.iter().map(|p| p.morse_index).max()
    }

    /// Global positions of the index-`k` points (`Crit_k`).
    pub fn indices_of(&self, k: usize) -> Vec<usize> {
        (0..self.points.len()).filter(|&i| self.points[i].morse_index == k).collect()
    }

    pub fn of_index(&self, k: usize) -> Vec<&CriticalPoint> {
        self.points.iter().filter(|p| p.morse_index == k).collect()
    }

    /// `#Crit_k` for `k = 0..=max_index`.
    pub fn counts(&self) -> Vec<usize> {
        let top = self.max_index().map_or(0, |m| m + 1);
        (0..top).map(|k| self.indices_of(k).len()).collect()
    }

    /// Sorted distinct critical values.
    pub fn critical_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.points.iter().map(|p| p.action).collect();
        v.sort_by(f64::total_cmp);
        v.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        v
    }

    /// Smallest gap between distinct critical values (∞ with fewer than two).
    pub fn min_value_gap(&self) -> f64 {
        self.critical_values().windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }

    /// Matches a state to a critical point modulo deck translations.
    /// Returns `(position, lattice offset)` with `z ≈ x + offset`.
    pub fn locate(&self, sys: &ModelSystem, z: &DVector<f64>, tol: f64) -> Option<(usize, Vec<i64>)> {
        self.points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, sys.lattice_distance(z, &p.state)))
            .filter(|(_, d)| *d < tol)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| (i, sys.lattice_offset(z, &self.points[i].state)))
    }
}

/// Damped Newton iteration on `∇S = 0` with Armijo backtracking on `½‖∇S‖²`.
pub fn newton(sys: &ModelSystem, start: &DVector<f64>, max_iter: usize) -> Result<Option<DVector<f64>>, ModelError> {
    let mut z = start.clone();
    let mut g = sys.gradient(&z)?;
    let mut merit = 0.5 * g.norm_squared();
    for _ in 0..max_iter {
        if sys.l2_norm(&g) < 1e-13 {
            break;
        }
        let h = sys.hessian(&z)?;
        let mut dir = match h.clone().lu().solve(&(-&g)) {
            Some(d) if d.iter().all(|x| x.is_finite()) => d,
            _ => {
                let eig = SymmetricEigen::new(h);
                let scale = eig.eigenvalues.amax().max(1.0);
                let inv = eig.eigenvalues.map(|l| if l.abs() > 1e-12 * scale { 1.0 / l } else { 0.0 });
                -(&eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose() * &g)
            }
        };
        let len = dir.amax();
        if len > 0.5 {
            dir *= 0.5 / len;
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha > 1e-10 {
            let trial = &z + &dir * alpha;
            let gt = sys.gradient(&trial)?;
            let mt = 0.5 * gt.norm_squared();
            if mt <= merit - 1e-4 * alpha * 2.0 * merit || mt < 1e-30 {
                z = trial;
                g = gt;
                merit = mt;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if sys.l2_norm(&g) <= GRADIENT_TOLERANCE && z.iter().all(|x| x.is_finite()) {
        Ok(Some(z))
    } else {
        Ok(None)
    }
}

fn start_points(sys: &ModelSystem, ms: &Multistart) -> Result<Vec<DVector<f64>>, CriticalError> {
    if ms.count == 0 {
        return Err(CriticalError::InvalidMultistart("start count must be ≥ 1".into()));
    }
    match &ms.region {
        StartRegion::Box { lower, upper } => {
            if lower.len() != sys.dim() || upper.len() != sys.dim() {
                return Err(CriticalError::InvalidMultistart(format!("box dimension must be {}", sys.dim())));
            }
            Ok(sampling::halton(ms.count, sys.dim(), ms.seed)
                .into_iter()
                .map(|u| DVector::from_fn(sys.dim(), |i, _| lower[i] + u[i] * (upper[i] - lower[i])))
                .collect())
        }
        StartRegion::LoopModes { modes, amplitude } => {
            let l = sys.as_loop().ok_or_else(|| CriticalError::InvalidMultistart("loop modes need a loop system".into()))?;
            let d = l.manifold.dim();
            let qdim = d * (1 + 2 * modes);
            let pts = sampling::halton(ms.count, qdim, ms.seed);
            pts.into_iter()
                .map(|u| {
                    let z = sys.loop_from_fn(|t, j| {
                        let mut x = u[j];
                        for m in 1..=*modes {
                            let base = d + 2 * (m - 1) * d + 2 * j;
                            let arg = 2.0 * std::f64::consts::PI * m as f64 * t;
                            x += amplitude * (2.0 * u[base] - 1.0) * arg.cos() + amplitude * (2.0 * u[base + 1] - 1.0) * arg.sin();
                        }
                        x
                    })?;
                    Ok(z)
                })
                .collect()
        }
    }
}

fn compare_points(a: &CriticalPoint, b: &CriticalPoint) -> Ordering {
    a.morse_index.cmp(&b.morse_index).then_with(|| {
        if (a.action - b.action).abs() > 1e-9 {
            a.action.total_cmp(&b.action)
        } else {
            a.state.iter().zip(b.state.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| *o != Ordering::Equal).unwrap_or(Ordering::Equal)
        }
    })
}

/// Newton multistart for all critical points below the regular level `level`.
pub fn find_critical_points(sys: &ModelSystem, level: f64, ms: &Multistart) -> Result<CritSet, CriticalError> {
    let starts = start_points(sys, ms)?;
    let limits: Vec<Option<DVector<f64>>> =
        starts.par_iter().map(|s| newton(sys, s, 200)).collect::<Result<_, _>>()?;
    let mut points: Vec<CriticalPoint> = Vec::new();
    for z in limits.into_iter().flatten() {
        let z = sys.canonicalize(&z);
        if points.iter().any(|p| sys.lattice_distance(&p.state, &z) < MERGE_DISTANCE) {
            continue;
        }
        let cp = CriticalPoint::analyze(sys, z)?;
        if (cp.action - level).abs() < LEVEL_MARGIN {
            return Err(CriticalError::NonRegularLevel { level, value: cp.action });
        }
        if cp.action > level {
            continue;
        }
        if cp.spectral_gap <= DEGENERACY_THRESHOLD {
            return Err(CriticalError::DegenerateCritical { action: cp.action, gap: cp.spectral_gap });
        }
        points.push(cp);
    }
    points.sort_by(compare_points);
    Ok(CritSet { level, points })
}

/// A point on the descending sphere `S^u_ε(x)`.
#[derive(Debug, Clone)]
pub struct SphereSeed {
    pub state: DVector<f64>,
    pub frame_index: usize,
    /// `+1` for the seed along `+v`, `−1` along `−v`.
    pub sign: i8,
}

/// First-order unstable seeds `x ± δ v`, flowed onto the level `{S = c − ε}`.
pub fn unstable_sphere_seed(
    flow: &Flow,
    crit: &CritSet,
    cp: &CriticalPoint,
    eps: f64,
    offset: f64,
) -> Result<Vec<SphereSeed>, CriticalError> {
    let c = cp.action;
    if let Some(value) = crit.points.iter().map(|p| p.action).find(|&v| v < c - 1e-9 && v >= c - eps) {
        return Err(CriticalError::EpsilonTooLarge { eps, c, value });
    }
    let sys = flow.system();
    let target = c - eps;
    let mut seeds = Vec::with_capacity(2 * cp.morse_index);
    for (i, v) in cp.neg_frame.iter().enumerate() {
        let unit = v / sys.l2_norm(v);
        for sign in [1i8, -1] {
            let start = &cp.state + &unit * (sign as f64 * offset);
            let state = descend_to_level(flow, &start, target)?;
            seeds.push(SphereSeed { state, frame_index: i, sign });
        }
    }
    Ok(seeds)
}

/// Flows `start` forward until the action first reaches `target`, then
/// bisects the last step so that `|S − target| ≤ 1e-8`.
pub fn descend_to_level(flow: &Flow, start: &DVector<f64>, target: f64) -> Result<DVector<f64>, CriticalError> {
    let sys = flow.system();
    let h = flow.config().step;
    let mut z = start.clone();
    let mut s = sys.action(&z)?;
    if s <= target {
        return Ok(z);
    }
    let max_steps = flow.config().max_steps;
    for _ in 0..max_steps {
        let next = flow.flow(&z, h)?;
        let sn = sys.action(&next)?;
        if sn <= target {
            let (mut lo, mut hi) = (0.0, h);
            let mut best = next;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let zm = flow.flow(&z, mid)?;
                let sm = sys.action(&zm)?;
                if (sm - target).abs() <= 1e-10 {
                    return Ok(zm);
                }
                if sm > target {
                    lo = mid;
                } else {
                    hi = mid;
                    best = zm;
                }
                if hi - lo < 1e-15 * h {
                    break;
                }
            }
            return Ok(best);
        }
        z = next;
        s = sn;
    }
    let _ = s;
    Err(CriticalError::Flow(FlowError::StepLimitExceeded { needed: max_steps + 1, limit: max_steps }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AnalyticEnergy, ManifoldDescriptor, Potential};
    use crate::semiflow::FlowConfig;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn double_well() -> ModelSystem {
        ModelSystem::analytic(AnalyticEnergy::DoubleWell).unwrap()
    }

    fn box_starts(count: usize) -> Multistart {
        Multistart { count, seed: 1, region: StartRegion::Box { lower: vec![-1.5, -1.0], upper: vec![1.5, 1.0] } }
    }

    #[test]
    fn double_well_critical_set() {
        let sys = double_well();
        let crit = find_critical_points(&sys, 2.0, &box_starts(40)).unwrap();
        assert_eq!(crit.counts(), vec![2, 1]);
        let minima = crit.of_index(0);
        assert!(minima.iter().all(|p| p.action.abs() < 1e-12 && (p.state[0].abs() - 1.0).abs() < 1e-12));
        let saddle = crit.of_index(1)[0];
        assert!((saddle.action - 1.0).abs() < 1e-12);
        assert_eq!(saddle.neg_frame, vec![DVector::from_vec(vec![1.0, 0.0])]);
        assert!((saddle.spectral_gap - 2.0).abs() < 1e-12);
    }

    #[test]
    fn doubling_starts_gives_same_set() {
        let sys = double_well();
        let a = find_critical_points(&sys, 2.0, &box_starts(40)).unwrap();
        let b = find_critical_points(&sys, 2.0, &box_starts(80)).unwrap();
        assert_eq!(a.len(), b.len());
        for (p, q) in a.points.iter().zip(&b.points) {
            assert!(sys.lattice_distance(&p.state, &q.state) < MERGE_DISTANCE);
        }
    }

    #[test]
    fn non_regular_level_is_rejected() {
        let sys = double_well();
        let err = find_critical_points(&sys, 1.0005, &box_starts(40)).unwrap_err();
        assert!(matches!(err, CriticalError::NonRegularLevel { .. }));
    }

    #[test]
    fn degenerate_torus_loops_are_rejected() {
        let sys = ModelSystem::loop_space(ManifoldDescriptor::FlatTorus { dim: 2 }, Potential::zero(), 8, vec![0, 0]).unwrap();
        let ms = Multistart { count: 4, seed: 3, region: StartRegion::LoopModes { modes: 1, amplitude: 0.05 } };
        let err = find_critical_points(&sys, 1.0, &ms).unwrap_err();
        assert!(matches!(err, CriticalError::DegenerateCritical { .. }));
    }

    #[test]
    fn index_zero_frame_is_empty() {
        let sys = double_well();
        let cp = CriticalPoint::analyze(&sys, DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_eq!(cp.morse_index, 0);
        assert!(cp.neg_frame.is_empty());
    }

    #[test]
    fn pendulum_maximum_frame_is_constant_mode() {
        let sys = ModelSystem::loop_space(ManifoldDescriptor::Circle, Potential::pendulum(0.5), 16, vec![0]).unwrap();
        let cp = CriticalPoint::analyze(&sys, sys.loop_from_fn(|_, _| 0.5).unwrap()).unwrap();
        assert_eq!(cp.morse_index, 1);
        let v = &cp.neg_frame[0];
        for x in v.iter() {
            assert!((x - 0.25).abs() < 1e-9);
        }
        assert!((cp.spectrum[0] + 2.0 * PI * PI).abs() < 1e-9);
    }

    #[test]
    fn saddle_sphere_seeds_on_level() {
        let sys = Arc::new(double_well());
        let crit = find_critical_points(&sys, 2.0, &box_starts(40)).unwrap();
        let flow = Flow::new(sys.clone(), FlowConfig::rk4(0.005)).unwrap();
        let saddle = crit.of_index(1)[0].clone();
        let seeds = unstable_sphere_seed(&flow, &crit, &saddle, 0.2, 1e-4).unwrap();
        assert_eq!(seeds.len(), 2);
        let expected = (1.0 - 0.8f64.sqrt()).sqrt();
        for s in &seeds {
            assert!((sys.action(&s.state).unwrap() - 0.8).abs() <= 1e-8);
            assert!((s.state[0].abs() - expected).abs() < 1e-6);
            assert!(s.state[1].abs() < 1e-12);
            assert_eq!(s.state[0].signum(), s.sign as f64);
        }
        let minimum = crit.of_index(0)[0].clone();
        assert!(unstable_sphere_seed(&flow, &crit, &minimum, 0.2, 1e-4).unwrap().is_empty());
        assert!(matches!(
            unstable_sphere_seed(&flow, &crit, &saddle, 1.5, 1e-4),
            Err(CriticalError::EpsilonTooLarge { .. })
        ));
    }
}
