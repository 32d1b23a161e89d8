//! Local charts at a critical point: mixed Cauchy problems, graph maps
//! `G^T_γ` and their stable limit, foliation leaves and the induced semi-flow.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::critical::{CritSet, CriticalError, CriticalPoint};
use crate::homology::{CubicalPair, Grid, Mask};
use crate::model::{ModelError, ModelSystem};
use crate::sampling;

/// Residual tolerance of the shooting solve.
pub const TOL_BVP: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FoliationError {
    #[error("T = {t} does not exceed T₀ = {t0}")]
    TTooSmall { t: f64, t0: f64 },
    #[error("shooting diverged (residual {residual:e}, condition estimate {condition:e})")]
    ShootingDivergence { residual: f64, condition: f64 },
    #[error("{failed} of {total} graph samples failed")]
    SampleRejected { failed: usize, total: usize },
    #[error("the action cutoff removes every leaf sample")]
    EmptyLeaf,
    #[error("α = {alpha:e} is degenerate; shrink the chart radius")]
    AlphaDegenerate { alpha: f64 },
    #[error("invalid chart: {0}")]
    InvalidChart(String),
    #[error("non-finite state in chart integration")]
    NonFinite,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Critical(#[from] CriticalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartConfig {
    /// Chart ball radius; default half the distance to the nearest other critical point (at most 1).
    pub rho0: Option<f64>,
    /// `μ = mu_fraction · d`.
    pub mu_fraction: f64,
    pub t0: f64,
    /// RK4 step; default `min(0.01, 0.5/‖Hessian‖)`.
    pub step: Option<f64>,
    /// Radius of the sampled ball `B⁺`.
    pub plus_radius: f64,
    /// Grid points per `X⁺` axis (odd).
    pub plus_points: usize,
}

impl Default for ChartConfig {
    fn default() -> Self {
        Self { rho0: None, mu_fraction: 0.5, t0: 1.0, step: None, plus_radius: 0.5, plus_points: 21 }
    }
}

/// Linear splitting `z = x + V p + W q` at a critical point.
#[derive(Debug, Clone)]
pub struct LocalChart {
    pub point: CriticalPoint,
    pub v: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub gap: f64,
    pub mu: f64,
    pub rho0: f64,
    pub t0: f64,
    pub step: f64,
    pub plus_radius: f64,
    pub plus_points: usize,
    /// Unstable eigenvalues `λ_i > 0` of the linearized flow.
    pub expansion: Vec<f64>,
    sys: Arc<ModelSystem>,
    offset: DVector<f64>,
}

impl LocalChart {
    pub fn new(sys: Arc<ModelSystem>, crit: &CritSet, point: usize, cfg: &ChartConfig) -> Result<Self, FoliationError> {
        let cp = crit.points[point].clone();
        Self::from_point(sys, cp, crit, cfg)
    }

    pub fn from_point(sys: Arc<ModelSystem>, cp: CriticalPoint, crit: &CritSet, cfg: &ChartConfig) -> Result<Self, FoliationError> {
        let n = cp.state.len();
        let k = cp.morse_index;
        if !(cfg.mu_fraction > 0.0 && cfg.mu_fraction < 1.0) {
            return Err(FoliationError::InvalidChart(format!("μ/d = {} must lie in (0, 1)", cfg.mu_fraction)));
        }
        let nearest = crit
            .points
            .iter()
            .map(|p| sys.lattice_distance(&p.state, &cp.state))
            .filter(|&d| d > 1e-9)
            .fold(f64::INFINITY, f64::min);
        let rho0 = cfg.rho0.unwrap_or((0.5 * nearest).min(1.0));
        if rho0 >= nearest {
            return Err(FoliationError::InvalidChart(format!("ρ₀ = {rho0} reaches another critical point at distance {nearest}")));
        }
        let v = DMatrix::from_fn(n, k, |i, j| cp.neg_frame[j][i]);
        let w = DMatrix::from_fn(n, n - k, |i, j| cp.pos_frame[j][i]);
        let spectral_radius = cp.spectrum.iter().map(|l| l.abs()).fold(0.0, f64::max);
        let step = cfg.step.unwrap_or((0.5 / spectral_radius.max(1e-12)).min(0.01));
        let offset = sys.gradient(&cp.state)?;
        Ok(Self {
            gap: cp.spectral_gap,
            mu: cfg.mu_fraction * cp.spectral_gap,
            rho0,
            t0: cfg.t0,
            step,
            plus_radius: cfg.plus_radius,
            plus_points: cfg.plus_points.max(3) | 1,
            expansion: cp.spectrum[..k].iter().map(|l| -l).collect(),
            v,
            w,
            point: cp,
            sys,
            offset,
        })
    }

    pub fn system(&self) -> &ModelSystem {
        &self.sys
    }

    pub fn index(&self) -> usize {
        self.v.ncols()
    }

    pub fn plus_dim(&self) -> usize {
        self.w.ncols()
    }

    /// `π₋` coordinates.
    pub fn minus_coords(&self, z: &DVector<f64>) -> DVector<f64> {
        self.v.tr_mul(&(z - &self.point.state))
    }

    /// `π₊` coordinates.
    pub fn plus_coords(&self, z: &DVector<f64>) -> DVector<f64> {
        self.w.tr_mul(&(z - &self.point.state))
    }

    pub fn state(&self, p: &DVector<f64>, q: &DVector<f64>) -> DVector<f64> {
        &self.point.state + &self.v * p + &self.w * q
    }

    /// Time-`T₀` stable threshold `e^{−T d} < 1e-10`.
    pub fn t_stable(&self) -> f64 {
        (1e10f64).ln() / self.gap
    }

    fn field(&self, z: &DVector<f64>) -> Result<DVector<f64>, FoliationError> {
        Ok(-(self.sys.gradient(z)? - &self.offset))
    }

    /// `φ_t` with the vector field taken relative to `∇S(x)` so that `x`
    /// is an exact rest point.
    pub fn flow(&self, z: &DVector<f64>, t: f64) -> Result<DVector<f64>, FoliationError> {
        let (n, rem) = schedule(t, self.step);
        let mut z = z.clone();
        for i in 0..n + usize::from(rem > 0.0) {
            let h = if i < n { self.step } else { rem };
            let k1 = self.field(&z)?;
            let k2 = self.field(&(&z + &k1 * (0.5 * h)))?;
            let k3 = self.field(&(&z + &k2 * (0.5 * h)))?;
            let k4 = self.field(&(&z + &k3 * h))?;
            z += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            if z.iter().any(|x| !x.is_finite()) {
                return Err(FoliationError::NonFinite);
            }
        }
        Ok(z)
    }

    /// `φ_t` together with its derivative applied to `tangent`.
    pub fn flow_tangent(&self, z: &DVector<f64>, tangent: &DMatrix<f64>, t: f64) -> Result<(DVector<f64>, DMatrix<f64>), FoliationError> {
        let (n, rem) = schedule(t, self.step);
        let mut z = z.clone();
        let mut j = tangent.clone();
        for i in 0..n + usize::from(rem > 0.0) {
            let h = if i < n { self.step } else { rem };
            let k1 = self.field(&z)?;
            let a1 = -self.sys.hessian(&z)? * &j;
            let z2 = &z + &k1 * (0.5 * h);
            let k2 = self.field(&z2)?;
            let a2 = -self.sys.hessian(&z2)? * (&j + &a1 * (0.5 * h));
            let z3 = &z + &k2 * (0.5 * h);
            let k3 = self.field(&z3)?;
            let a3 = -self.sys.hessian(&z3)? * (&j + &a2 * (0.5 * h));
            let z4 = &z + &k3 * h;
            let k4 = self.field(&z4)?;
            let a4 = -self.sys.hessian(&z4)? * (&j + &a3 * h);
            z += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            j += (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (h / 6.0);
            if z.iter().any(|x| !x.is_finite()) {
                return Err(FoliationError::NonFinite);
            }
        }
        Ok((z, j))
    }

    /// Chart-appropriate deviation norm: discrete `W^{1,4}` on loops,
    /// max-norm otherwise.
    pub fn deviation_norm(&self, u: &DVector<f64>) -> f64 {
        if self.sys.is_loop() {
            self.sys.w1p_norm(u, 4.0)
        } else {
            u.amax()
        }
    }

    /// Points of `B⁺`: a centered grid when `dim X⁺ ≤ 4`, otherwise seeded
    /// uniform samples.
    pub fn plus_grid(&self) -> PlusGrid {
        let m = self.plus_dim();
        let r = self.plus_radius;
        let h = 2.0 * r / (self.plus_points - 1) as f64;
        match Grid::centered(&vec![0.0; m], &vec![r; m], h) {
            Ok(grid) if m > 0 => {
                let keep = Mask::from_fn(&grid, |p| p.norm() <= r + 1e-12);
                let points = (0..grid.len()).filter(|&i| keep.bits[i]).map(|i| grid.cell_center(i)).collect();
                PlusGrid { points, grid: Some((grid, keep)) }
            }
            _ => {
                let mut rng = sampling::rng(0);
                let mut points = vec![DVector::zeros(m)];
                points.extend(sampling::ball(&DVector::zeros(m), r, self.plus_points.pow(2), &mut rng));
                PlusGrid { points, grid: None }
            }
        }
    }
}

fn schedule(t: f64, h: f64) -> (usize, f64) {
    let n = (t / h).floor() as usize;
    let rem = t - n as f64 * h;
    if rem <= 1e-12 * h.max(t) {
        (n, 0.0)
    } else {
        (n, rem)
    }
}

#[derive(Debug, Clone)]
pub struct PlusGrid {
    pub points: Vec<DVector<f64>>,
    grid: Option<(Grid, Mask)>,
}

/// Solution `ξ` of `π₊ξ(0) = z₊`, `π₋ξ(T) = γ⁻`.
#[derive(Debug, Clone)]
pub struct MixedSolution {
    /// `G^T_γ(z₊) = π₋ξ(0)`.
    pub minus: DVector<f64>,
    pub start: DVector<f64>,
    pub end: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Single shooting on `p = π₋ξ(0)` with Newton steps from the tangent flow,
/// started at `e^{−λT} γ⁻`.
pub fn solve_mixed_cauchy(chart: &LocalChart, t: f64, gamma: &DVector<f64>, z_plus: &DVector<f64>) -> Result<MixedSolution, FoliationError> {
    if t <= chart.t0 {
        return Err(FoliationError::TTooSmall { t, t0: chart.t0 });
    }
    let k = chart.index();
    let mut p = DVector::from_fn(k, |i, _| gamma[i] * (-chart.expansion[i] * t).exp());
    if k == 0 {
        let start = chart.state(&p, z_plus);
        let end = chart.flow(&start, t)?;
        return Ok(MixedSolution { minus: p, start, end, residual: 0.0, iterations: 0 });
    }
    let scale = gamma.amax().max(1e-300);
    let mut condition = 1.0;
    for it in 0..50 {
        let start = chart.state(&p, z_plus);
        let (end, jac) = chart.flow_tangent(&start, &chart.v, t)?;
        let resid = chart.minus_coords(&end) - gamma;
        let rn = resid.amax();
        if rn <= TOL_BVP * scale.max(1.0) && it > 0 || rn == 0.0 {
            return Ok(MixedSolution { minus: p, start, end, residual: rn, iterations: it });
        }
        let a = chart.v.tr_mul(&jac);
        let sv = a.clone().singular_values();
        condition = sv.max() / sv.min().max(1e-300);
        let Some(dp) = a.lu().solve(&resid) else {
            return Err(FoliationError::ShootingDivergence { residual: rn, condition });
        };
        p -= dp;
        if p.iter().any(|x| !x.is_finite()) {
            return Err(FoliationError::ShootingDivergence { residual: rn, condition });
        }
    }
    let start = chart.state(&p, z_plus);
    let end = chart.flow(&start, t)?;
    let rn = (chart.minus_coords(&end) - gamma).amax();
    if rn <= TOL_BVP * scale.max(1.0) {
        Ok(MixedSolution { minus: p, start, end, residual: rn, iterations: 50 })
    } else {
        Err(FoliationError::ShootingDivergence { residual: rn, condition })
    }
}

/// Values of `G^T_γ` on a set of `z₊` with central-difference differentials.
#[derive(Debug, Clone)]
pub struct GraphMapSample {
    pub t: f64,
    pub gamma: DVector<f64>,
    pub points: Vec<DVector<f64>>,
    pub values: Vec<Option<DVector<f64>>>,
    pub residuals: Vec<f64>,
    /// `dG^T_γ(z₊)` (`k × dim X⁺`).
    pub differentials: Vec<Option<DMatrix<f64>>>,
    pub failures: usize,
}

impl GraphMapSample {
    /// Full state `𝒢^T_γ(z₊)` at sample `i`.
    pub fn graph_state(&self, chart: &LocalChart, i: usize) -> Option<DVector<f64>> {
        self.values[i].as_ref().map(|p| chart.state(p, &self.points[i]))
    }
}

const FD_STEP: f64 = 1e-4;

pub fn sample_graph_map(chart: &LocalChart, t: f64, gamma: &DVector<f64>, points: &[DVector<f64>]) -> Result<GraphMapSample, FoliationError> {
    if t <= chart.t0 {
        return Err(FoliationError::TTooSmall { t, t0: chart.t0 });
    }
    let m = chart.plus_dim();
    let k = chart.index();
    let solved: Vec<Option<(DVector<f64>, f64, DMatrix<f64>)>> = points
        .par_iter()
        .map(|q| {
            let sol = solve_mixed_cauchy(chart, t, gamma, q).ok()?;
            let mut d = DMatrix::zeros(k, m);
            for j in 0..m {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[j] += FD_STEP;
                qm[j] -= FD_STEP;
                let gp = solve_mixed_cauchy(chart, t, gamma, &qp).ok()?.minus;
                let gm = solve_mixed_cauchy(chart, t, gamma, &qm).ok()?.minus;
                d.set_column(j, &((gp - gm) / (2.0 * FD_STEP)));
            }
            Some((sol.minus, sol.residual, d))
        })
        .collect();
    let failures = solved.iter().filter(|s| s.is_none()).count();
    if failures * 20 > points.len() {
        return Err(FoliationError::SampleRejected { failed: failures, total: points.len() });
    }
    let mut values = Vec::with_capacity(points.len());
    let mut residuals = Vec::with_capacity(points.len());
    let mut differentials = Vec::with_capacity(points.len());
    for s in solved {
        match s {
            Some((v, r, d)) => {
                values.push(Some(v));
                residuals.push(r);
                differentials.push(Some(d));
            }
            None => {
                values.push(None);
                residuals.push(f64::NAN);
                differentials.push(None);
            }
        }
    }
    Ok(GraphMapSample { t, gamma: gamma.clone(), points: points.to_vec(), values, residuals, differentials, failures })
}

/// `𝒢^∞` sampled as `𝒢^{T_stable}`.
pub fn sample_stable_graph(chart: &LocalChart, gamma: &DVector<f64>, points: &[DVector<f64>]) -> Result<GraphMapSample, FoliationError> {
    sample_graph_map(chart, chart.t_stable().max(chart.t0 + 1.0), gamma, points)
}

/// Least-squares decay rate of `log(deviation)` against `T`, over points
/// above the noise floor; `None` with fewer than two usable points.
pub fn fit_decay_rate(ts: &[f64], devs: &[f64], floor: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = ts.iter().zip(devs).filter(|(_, &d)| d > floor && d.is_finite()).map(|(&t, &d)| (t, d.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    Some(-sxy / sxx)
}

pub const NOISE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaReport {
    pub t_list: Vec<f64>,
    /// `sup ‖𝒢^T − 𝒢^∞‖` per T.
    pub deviations: Vec<f64>,
    /// `sup ‖d𝒢^T − d𝒢^∞‖` (operator norm) per T.
    pub differential_deviations: Vec<f64>,
    /// `sup ‖d𝒢^T v‖ / ‖v‖` over all samples.
    pub max_lipschitz: f64,
    pub fitted_rate: Option<f64>,
    pub differential_rate: Option<f64>,
    pub mu: f64,
    pub threshold: f64,
    pub monotone: bool,
    pub passed: bool,
}

/// Operator norm of `v ↦ (dG v, v)`.
fn graph_lipschitz(d: &DMatrix<f64>) -> f64 {
    let s = if d.is_empty() { 0.0 } else { d.clone().singular_values().max() };
    (1.0 + s * s).sqrt()
}

/// Rates of `𝒢^T → 𝒢^∞` and the differential bounds.
pub fn verify_lambda_estimates(chart: &LocalChart, gamma: &DVector<f64>, t_list: &[f64], points: &[DVector<f64>]) -> Result<LambdaReport, FoliationError> {
    if t_list.len() < 4 || t_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(FoliationError::InvalidChart("T list must hold at least four ascending values".into()));
    }
    let inf = sample_stable_graph(chart, gamma, points)?;
    let mut deviations = Vec::new();
    let mut ddev = Vec::new();
    let mut max_lip: f64 = 0.0;
    for &t in t_list {
        let s = sample_graph_map(chart, t, gamma, points)?;
        let mut dev: f64 = 0.0;
        let mut dd: f64 = 0.0;
        for i in 0..points.len() {
            if let (Some(a), Some(b)) = (&s.values[i], &inf.values[i]) {
                dev = dev.max(chart.deviation_norm(&(&chart.v * (a - b))));
            }
            if let (Some(a), Some(b)) = (&s.differentials[i], &inf.differentials[i]) {
                let diff = a - b;
                dd = dd.max(if diff.is_empty() { 0.0 } else { diff.singular_values().max() });
                max_lip = max_lip.max(graph_lipschitz(a));
            }
        }
        deviations.push(dev);
        ddev.push(dd);
    }
    let fitted_rate = fit_decay_rate(t_list, &deviations, NOISE_FLOOR);
    let differential_rate = fit_decay_rate(t_list, &ddev, 1e-7);
    let threshold = chart.mu / 16.0;
    let monotone = deviations.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + NOISE_FLOOR);
    let rate_ok = fitted_rate.map_or(deviations.iter().all(|&d| d <= NOISE_FLOOR), |r| r >= threshold);
    let diff_ok = t_list.iter().zip(&ddev).all(|(t, d)| *d <= (-t * threshold).exp() + 1e-6);
    Ok(LambdaReport {
        t_list: t_list.to_vec(),
        deviations,
        differential_deviations: ddev,
        max_lipschitz: max_lip,
        fitted_rate,
        differential_rate,
        mu: chart.mu,
        threshold,
        monotone,
        passed: rate_ok && diff_ok && max_lip <= 2.0 && monotone,
    })
}

/// Sampled leaf `N_x(γ_T)`: graph points with `S < c + ε`, restricted to
/// the grid component of `z₊ = 0`.
#[derive(Debug, Clone)]
pub struct LeafSample {
    pub t: f64,
    pub gamma: DVector<f64>,
    pub z_plus: Vec<DVector<f64>>,
    pub states: Vec<DVector<f64>>,
    pub actions: Vec<f64>,
}

pub fn sample_leaf(chart: &LocalChart, eps: f64, gamma: &DVector<f64>, t: f64) -> Result<LeafSample, FoliationError> {
    let plus = chart.plus_grid();
    let graph = sample_graph_map(chart, t, gamma, &plus.points)?;
    let cutoff = chart.point.action + eps;
    let sys = chart.system();
    let mut member = vec![false; plus.points.len()];
    let mut states = vec![None; plus.points.len()];
    for i in 0..plus.points.len() {
        if let Some(z) = graph.graph_state(chart, i) {
            let s = sys.action(&z)?;
            member[i] = s < cutoff;
            states[i] = Some((z, s));
        }
    }
    if let Some((grid, ball)) = &plus.grid {
        let ids: Vec<usize> = (0..grid.len()).filter(|&i| ball.bits[i]).collect();
        let mut mask = Mask::empty(grid);
        for (j, &i) in ids.iter().enumerate() {
            mask.bits[i] = member[j];
        }
        let center = grid.locate(&DVector::zeros(chart.plus_dim())).expect("centered grid contains 0");
        let comp = mask.component(center);
        for (j, &i) in ids.iter().enumerate() {
            member[j] = comp.bits[i];
        }
    }
    let mut out = LeafSample { t, gamma: gamma.clone(), z_plus: Vec::new(), states: Vec::new(), actions: Vec::new() };
    for (i, st) in states.into_iter().enumerate() {
        if let (true, Some((z, s))) = (member[i], st) {
            out.z_plus.push(plus.points[i].clone());
            out.states.push(z);
            out.actions.push(s);
        }
    }
    if out.states.is_empty() {
        return Err(FoliationError::EmptyLeaf);
    }
    Ok(out)
}

/// `sup ‖𝒢^T(z₊) − 𝒢^∞(z₊)‖` over the leaf's `z₊` samples.
pub fn leaf_distance_to_disk(chart: &LocalChart, leaf: &LeafSample) -> Result<f64, FoliationError> {
    let inf = sample_stable_graph(chart, &leaf.gamma, &leaf.z_plus)?;
    let mut d: f64 = 0.0;
    for (i, z) in leaf.states.iter().enumerate() {
        if let Some(w) = inf.graph_state(chart, i) {
            d = d.max(chart.deviation_norm(&(z - w)));
        }
    }
    Ok(d)
}

/// `θ_s z = 𝒢^T_γ(π₊ φ_s 𝒢^∞(π₊ z))`.
pub fn induced_semiflow_step(chart: &LocalChart, t: f64, gamma: &DVector<f64>, z: &DVector<f64>, s: f64) -> Result<DVector<f64>, FoliationError> {
    let q = chart.plus_coords(z);
    let stable = solve_mixed_cauchy(chart, chart.t_stable().max(chart.t0 + 1.0), gamma, &q)?;
    let moved = chart.flow(&stable.start, s)?;
    let q2 = chart.plus_coords(&moved);
    Ok(solve_mixed_cauchy(chart, t, gamma, &q2)?.start)
}

/// Distance of `w` from the leaf `(T, γ)`: `‖w − 𝒢^T_γ(π₊ w)‖`.
pub fn leaf_defect(chart: &LocalChart, t: f64, gamma: &DVector<f64>, w: &DVector<f64>) -> Result<f64, FoliationError> {
    let g = solve_mixed_cauchy(chart, t, gamma, &chart.plus_coords(w))?;
    Ok(chart.deviation_norm(&(w - g.start)))
}

/// Rasterized `(W^u_ε, collar)` in `X⁻` coordinates: the component of
/// `{S(x + V p) > c − ε}` around `p = 0` and its part with `S < c − ε/2`.
pub fn unstable_disk_pair(chart: &LocalChart, eps: f64, h: f64) -> Result<CubicalPair, FoliationError> {
    let k = chart.index();
    if k == 0 {
        return Err(FoliationError::InvalidChart("a minimum has no unstable disk".into()));
    }
    let grid = Grid::centered(&vec![0.0; k], &vec![chart.rho0; k], h).map_err(|e| FoliationError::InvalidChart(e.to_string()))?;
    let sys = chart.system();
    let c = chart.point.action;
    let zero = DVector::zeros(chart.plus_dim());
    let values: Vec<f64> = (0..grid.len()).map(|i| sys.action(&chart.state(&grid.cell_center(i), &zero))).collect::<Result<_, _>>()?;
    let mut above = Mask::empty(&grid);
    for (i, &v) in values.iter().enumerate() {
        above.bits[i] = v > c - eps;
    }
    let center = grid.locate(&DVector::zeros(k)).expect("centered grid contains 0");
    let disk = above.component(center);
    let touches = (0..grid.len()).any(|i| disk.bits[i] && grid.multi_index(i).iter().zip(&grid.shape).any(|(&m, &s)| m == 0 || m + 1 == s));
    if touches {
        return Err(FoliationError::InvalidChart(format!("unstable disk reaches the chart radius {}", chart.rho0)));
    }
    let mut collar = disk.clone();
    for (i, &v) in values.iter().enumerate() {
        collar.bits[i] &= v < c - 0.5 * eps;
    }
    CubicalPair::new(disk, collar).map_err(|e| FoliationError::InvalidChart(e.to_string()))
}

/// `α = min ‖∇S‖₂` over grid points of the chart ball with `S > c + ε/2`.
pub fn compute_alpha(chart: &LocalChart, eps: f64, per_axis: usize) -> Result<f64, FoliationError> {
    let n = chart.point.state.len();
    let r = chart.rho0;
    let sys = chart.system();
    let level = chart.point.action + 0.5 * eps;
    let samples: Vec<DVector<f64>> = if n <= 4 {
        let h = 2.0 * r / per_axis.max(3) as f64;
        let grid = Grid::centered(chart.point.state.as_slice(), &vec![r; n], h).map_err(|e| FoliationError::InvalidChart(e.to_string()))?;
        (0..grid.len()).map(|i| grid.cell_center(i)).filter(|p| (p - &chart.point.state).norm() <= r).collect()
    } else {
        let mut rng = sampling::rng(1);
        sampling::ball(&chart.point.state, r, per_axis.pow(2), &mut rng)
    };
    let mut alpha = f64::INFINITY;
    for z in &samples {
        if sys.action(z)? > level {
            alpha = alpha.min(sys.l2_norm(&sys.gradient(z)?));
        }
    }
    if !(alpha >= 1e-6) || !alpha.is_finite() {
        return Err(FoliationError::AlphaDegenerate { alpha: if alpha.is_finite() { alpha } else { 0.0 } });
    }
    Ok(alpha)
}

/// Leaf points with `S ≈ c + ε` found by bisection along rays in `X⁺`.
pub fn leaf_boundary_samples(
    chart: &LocalChart,
    eps: f64,
    gamma: &DVector<f64>,
    t: f64,
    directions: &[DVector<f64>],
    margin: f64,
) -> Result<Vec<DVector<f64>>, FoliationError> {
    let sys = chart.system();
    let target = chart.point.action + eps - margin;
    let mut out = Vec::new();
    for dir in directions {
        let dir = dir.normalize();
        let eval = |r: f64| -> Result<(f64, DVector<f64>), FoliationError> {
            let z = solve_mixed_cauchy(chart, t, gamma, &(&dir * r))?.start;
            Ok((sys.action(&z)?, z))
        };
        let (mut lo, mut hi) = (0.0, chart.plus_radius);
        if eval(hi)?.0 < target {
            continue;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if eval(mid)?.0 < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        out.push(eval(lo)?.1);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecreaseReport {
    pub alpha: f64,
    pub bound: f64,
    pub slack: f64,
    pub derivatives: Vec<f64>,
    pub worst: f64,
    pub passed: bool,
}

/// `d/ds S(θ_s z)` at small `s` against `−¼α²` with 10% slack.
pub fn verify_action_decrease(chart: &LocalChart, alpha: f64, samples: &[(f64, DVector<f64>, DVector<f64>)], ds: f64) -> Result<DecreaseReport, FoliationError> {
    let sys = chart.system();
    let derivatives: Vec<f64> = samples
        .par_iter()
        .map(|(t, gamma, z)| {
            let a = sys.action(&induced_semiflow_step(chart, *t, gamma, z, ds)?)?;
            let b = sys.action(&induced_semiflow_step(chart, *t, gamma, z, 2.0 * ds)?)?;
            Ok((b - a) / ds)
        })
        .collect::<Result<_, FoliationError>>()?;
    let bound = -0.25 * alpha * alpha;
    let slack = 0.1 * 0.25 * alpha * alpha;
    let worst = derivatives.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(DecreaseReport { alpha, bound, slack, passed: derivatives.iter().all(|&d| d <= bound + slack), derivatives, worst })
}
