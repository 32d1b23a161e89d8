//! Morse chain complex from signed counts of connecting heat-flow lines.

use std::f64::consts::TAU;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::critical::{unstable_sphere_seed, CritSet, CriticalError, CriticalPoint};
use crate::homology::{check_boundary_square, homology_of_matrices, HomologyError, HomologyResult};
use crate::semiflow::{Flow, FlowError};
use crate::snf::IntMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MorseError {
    #[error("orbit from critical point {source_point} did not settle (‖∇S‖ = {grad_norm:e})")]
    NonConvergent { source_point: usize, grad_norm: f64 },
    #[error("orbit from critical point {source_point} (index {source_index}) reached index {limit_index}")]
    MorseSmaleViolation { source_point: usize, source_index: usize, limit_index: usize },
    #[error("connecting orbits need IND(x) = IND(y) + 1, got {source_index} and {target_index}")]
    IndexMismatch { source_index: usize, target_index: usize },
    #[error("orbit counting from index {0} sources is not supported")]
    UnsupportedIndex(usize),
    #[error("crossing on the unstable circle of {source_point} near θ = {theta} has no sign")]
    UnresolvedCrossing { source_point: usize, theta: f64 },
    #[error(transparent)]
    Critical(#[from] CriticalError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Homology(#[from] HomologyError),
}

impl From<crate::model::ModelError> for MorseError {
    fn from(e: crate::model::ModelError) -> Self {
        MorseError::Flow(FlowError::Model(e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrbitConfig {
    /// Level offset of the descending sphere for index-1 seeds.
    pub eps_u: f64,
    /// Distance `δ` of first-order seeds from the critical point.
    pub offset: f64,
    pub max_time: f64,
    /// Max-norm distance (modulo deck translations) to identify limits.
    pub locate_tol: f64,
    /// Mesh size on the unstable circle of index-2 sources.
    pub circle_mesh: usize,
    /// Angular resolution at which a label change is accepted as a crossing.
    pub angle_tol: f64,
}

impl Default for OrbitConfig {
    fn default() -> Self {
        Self { eps_u: 0.1, offset: 1e-4, max_time: 400.0, locate_tol: 1e-4, circle_mesh: 64, angle_tol: 1e-11 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectingOrbit {
    pub source: usize,
    pub target: usize,
    pub sign: i8,
    /// Deck translation of the target lift reached from the canonical source.
    pub lift: Vec<i64>,
    /// Unstable-circle angle for index-2 sources.
    pub angle: Option<f64>,
    #[serde(skip)]
    pub path: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MorseComplex {
    /// Positions in the critical set of the generators of `CM_k`.
    pub generators: Vec<Vec<usize>>,
    /// `∂_k: CM_k → CM_{k−1}`, `boundaries[0]` of shape `0 × #Crit₀`.
    pub boundaries: Vec<IntMatrix>,
    pub orbits: Vec<ConnectingOrbit>,
    pub homology: HomologyResult,
}

impl MorseComplex {
    pub fn counts(&self) -> Vec<usize> {
        self.generators.iter().map(Vec::len).collect()
    }

    /// Same complex with one frame vector of the source flipped: the column
    /// of that generator in `∂_k` changes sign, and so does its row in `∂_{k+1}`.
    pub fn with_generator_negated(&self, k: usize, j: usize) -> MorseComplex {
        let mut out = self.clone();
        let b = &mut out.boundaries[k];
        for i in 0..b.rows() {
            b.set(i, j, -b.get(i, j));
        }
        if let Some(up) = out.boundaries.get_mut(k + 1) {
            for c in 0..up.cols() {
                up.set(j, c, -up.get(j, c));
            }
        }
        out
    }
}

fn downsample(states: &[DVector<f64>], keep: usize) -> Vec<DVector<f64>> {
    if states.len() <= keep {
        return states.to_vec();
    }
    let stride = states.len().div_ceil(keep);
    let mut out: Vec<_> = states.iter().step_by(stride).cloned().collect();
    if let Some(last) = states.last() {
        out.push(last.clone());
    }
    out
}

struct Landing {
    target: usize,
    lift: Vec<i64>,
    index: usize,
}

fn land(flow: &Flow, crit: &CritSet, source: usize, z: &DVector<f64>, cfg: &OrbitConfig) -> Result<(Landing, DVector<f64>), MorseError> {
    let limit = flow.flow_to_limit(z, cfg.max_time)?;
    if !limit.settled {
        return Err(MorseError::NonConvergent { source_point: source, grad_norm: limit.grad_norm });
    }
    let sys = flow.system();
    let (target, lift) = crit
        .locate(sys, &limit.state, cfg.locate_tol)
        .ok_or(MorseError::NonConvergent { source_point: source, grad_norm: limit.grad_norm })?;
    Ok((Landing { target, lift, index: crit.points[target].morse_index }, limit.state))
}

/// All index-difference-one orbits leaving `source`.
pub fn orbits_from(flow: &Flow, crit: &CritSet, source: usize, cfg: &OrbitConfig) -> Result<Vec<ConnectingOrbit>, MorseError> {
    let x = &crit.points[source];
    match x.morse_index {
        0 => Ok(Vec::new()),
        1 => index_one_orbits(flow, crit, source, cfg),
        2 => index_two_orbits(flow, crit, source, cfg),
        k => Err(MorseError::UnsupportedIndex(k)),
    }
}

fn index_one_orbits(flow: &Flow, crit: &CritSet, source: usize, cfg: &OrbitConfig) -> Result<Vec<ConnectingOrbit>, MorseError> {
    let x = &crit.points[source];
    let seeds = unstable_sphere_seed(flow, crit, x, cfg.eps_u, cfg.offset)?;
    seeds
        .par_iter()
        .map(|seed| {
            let (landing, _) = land(flow, crit, source, &seed.state, cfg)?;
            if landing.index >= x.morse_index {
                return Err(MorseError::MorseSmaleViolation { source_point: source, source_index: 1, limit_index: landing.index });
            }
            let traj = flow.integrate(&seed.state, 1.0f64.min(cfg.max_time))?;
            Ok(ConnectingOrbit {
                source,
                target: landing.target,
                sign: seed.sign,
                lift: landing.lift,
                angle: None,
                path: downsample(&traj.states, 32),
            })
        })
        .collect()
}

type Label = (usize, Vec<i64>);

const MESH_PHASE: f64 = 0.381_966_011_250_105;

fn index_two_orbits(flow: &Flow, crit: &CritSet, source: usize, cfg: &OrbitConfig) -> Result<Vec<ConnectingOrbit>, MorseError> {
    let x = &crit.points[source];
    let sys = flow.system();
    let (v1, v2) = (&x.neg_frame[0], &x.neg_frame[1]);
    let point = |theta: f64| -> DVector<f64> { &x.state + (v1 * theta.cos() + v2 * theta.sin()) * (cfg.offset / sys.l2_norm(v1).max(1e-300)) };
    let label = |theta: f64| -> Result<Label, MorseError> {
        let (l, _) = land(flow, crit, source, &point(theta), cfg)?;
        if l.index + 1 == x.morse_index {
            return Err(MorseError::UnresolvedCrossing { source_point: source, theta });
        }
        if l.index >= x.morse_index {
            return Err(MorseError::MorseSmaleViolation { source_point: source, source_index: 2, limit_index: l.index });
        }
        Ok((l.target, l.lift))
    };
    let m = cfg.circle_mesh.max(8);
    // Off-lattice phase keeps symmetric eigenframes from seeding on a stable manifold.
    let phase = MESH_PHASE * TAU / m as f64;
    let thetas: Vec<f64> = (0..m).map(|i| phase + TAU * i as f64 / m as f64).collect();
    let labels: Vec<Label> = thetas.par_iter().map(|&t| label(t)).collect::<Result<_, _>>()?;
    let mut crossings = Vec::new();
    for i in 0..m {
        let (lo, hi) = (thetas[i], if i + 1 < m { thetas[i + 1] } else { TAU + phase });
        let (la, lb) = (&labels[i], &labels[(i + 1) % m]);
        if la != lb {
            bisect_crossings(&label, lo, hi, la.clone(), lb.clone(), cfg.angle_tol, &mut crossings)?;
        }
    }
    let index_one = crit.indices_of(x.morse_index - 1);
    crossings
        .into_par_iter()
        .map(|(lo, hi)| {
            let mid = 0.5 * (lo + hi);
            let (ya, side_lo, path) = passage(flow, crit, &index_one, &point(lo), cfg)?;
            let (yb, side_hi, _) = passage(flow, crit, &index_one, &point(hi), cfg)?;
            if ya.0 != yb.0 || ya.1 != yb.1 || side_lo == side_hi || side_lo == 0 || side_hi == 0 {
                return Err(MorseError::UnresolvedCrossing { source_point: source, theta: mid });
            }
            Ok(ConnectingOrbit { source, target: ya.0, sign: if side_lo < 0 { 1 } else { -1 }, lift: ya.1, angle: Some(mid), path })
        })
        .collect()
}

fn bisect_crossings(
    label: &(impl Fn(f64) -> Result<Label, MorseError> + Sync),
    lo: f64,
    hi: f64,
    la: Label,
    lb: Label,
    tol: f64,
    out: &mut Vec<(f64, f64)>,
) -> Result<(), MorseError> {
    if hi - lo <= tol {
        out.push((lo, hi));
        return Ok(());
    }
    let mid = 0.5 * (lo + hi);
    let lm = label(mid)?;
    if lm != la {
        bisect_crossings(label, lo, mid, la, lm.clone(), tol, out)?;
    }
    if lm != lb {
        bisect_crossings(label, mid, hi, lm, lb, tol, out)?;
    }
    Ok(())
}

/// Index-1 point passed most closely (with lift) and the side of its
/// unstable direction on which the orbit leaves it.
fn passage(
    flow: &Flow,
    crit: &CritSet,
    candidates: &[usize],
    start: &DVector<f64>,
    cfg: &OrbitConfig,
) -> Result<(Label, i8, Vec<DVector<f64>>), MorseError> {
    let sys = flow.system();
    let limit = flow.flow_to_limit(start, cfg.max_time)?;
    let traj = flow.integrate(start, limit.time)?;
    let mut best = (f64::INFINITY, 0usize, 0usize);
    for (t, z) in traj.states.iter().enumerate() {
        for &c in candidates {
            let d = sys.lattice_distance(z, &crit.points[c].state);
            if d < best.0 {
                best = (d, t, c);
            }
        }
    }
    let (dmin, tmin, y) = best;
    let yp: &CriticalPoint = &crit.points[y];
    let lift = sys.lattice_offset(&traj.states[tmin], &yp.state);
    let center = sys.translate(&yp.state, &lift);
    let w = &yp.neg_frame[0];
    let exit_radius = (100.0 * dmin).clamp(1e-3, 5e-2);
    let mut side = 0i8;
    for z in &traj.states[tmin..] {
        let diff = z - &center;
        if diff.amax() > exit_radius {
            side = if sys.l2_dot(&diff, w) > 0.0 { 1 } else { -1 };
            break;
        }
    }
    Ok(((y, lift), side, downsample(&traj.states, 32)))
}

/// Orbits from `x` to `y` (positions in `crit`).
pub fn count_connecting_orbits(
    flow: &Flow,
    crit: &CritSet,
    x: usize,
    y: usize,
    cfg: &OrbitConfig,
) -> Result<Vec<ConnectingOrbit>, MorseError> {
    let (ix, iy) = (crit.points[x].morse_index, crit.points[y].morse_index);
    if x == y || ix != iy + 1 {
        return Err(MorseError::IndexMismatch { source_index: ix, target_index: iy });
    }
    Ok(orbits_from(flow, crit, x, cfg)?.into_iter().filter(|o| o.target == y).collect())
}

/// Assembles `CM_*` with boundaries from signed orbit counts.
pub fn build_morse_complex(flow: &Flow, crit: &CritSet, cfg: &OrbitConfig) -> Result<MorseComplex, MorseError> {
    let top = crit.max_index();
    if let Some(k) = top.filter(|&k| k > 2) {
        return Err(MorseError::UnsupportedIndex(k));
    }
    let generators: Vec<Vec<usize>> = match top {
        Some(t) => (0..=t).map(|k| crit.indices_of(k)).collect(),
        None => Vec::new(),
    };
    let mut boundaries = vec![IntMatrix::zeros(0, generators.first().map_or(0, Vec::len))];
    let mut orbits = Vec::new();
    for k in 1..generators.len() {
        let mut d = IntMatrix::zeros(generators[k - 1].len(), generators[k].len());
        for (j, &x) in generators[k].iter().enumerate() {
            for o in orbits_from(flow, crit, x, cfg)? {
                let Some(i) = generators[k - 1].iter().position(|&g| g == o.target) else {
                    return Err(MorseError::MorseSmaleViolation {
                        source_point: x,
                        source_index: k,
                        limit_index: crit.points[o.target].morse_index,
                    });
                };
                d.set(i, j, d.get(i, j) + o.sign as i64);
                orbits.push(o);
            }
        }
        boundaries.push(d);
    }
    check_boundary_square(&boundaries)?;
    let homology = homology_of_matrices(&boundaries)?;
    Ok(MorseComplex { generators, boundaries, orbits, homology })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critical::{find_critical_points, Multistart, StartRegion};
    use crate::model::{AnalyticEnergy, ModelSystem};
    use crate::semiflow::FlowConfig;
    use std::sync::Arc;

    fn double_well() -> (Flow, CritSet) {
        let sys = Arc::new(ModelSystem::analytic(AnalyticEnergy::DoubleWell).unwrap());
        let ms = Multistart { count: 40, seed: 1, region: StartRegion::Box { lower: vec![-1.5, -1.0], upper: vec![1.5, 1.0] } };
        let crit = find_critical_points(&sys, 2.0, &ms).unwrap();
        (Flow::new(sys, FlowConfig::rk4(0.01)).unwrap(), crit)
    }

    #[test]
    fn double_well_boundary() {
        let (flow, crit) = double_well();
        let mc = build_morse_complex(&flow, &crit, &OrbitConfig::default()).unwrap();
        assert_eq!(mc.counts(), vec![2, 1]);
        let minus = crit.points.iter().position(|p| p.morse_index == 0 && p.state[0] < 0.0).unwrap();
        let col: Vec<i64> = mc.boundaries[1].column(0);
        let expected: Vec<i64> = mc.generators[0].iter().map(|&g| if g == minus { -1 } else { 1 }).collect();
        assert_eq!(col, expected);
        assert_eq!(mc.homology.betti, vec![1]);
    }

    #[test]
    fn equal_points_are_rejected() {
        let (flow, crit) = double_well();
        let saddle = crit.indices_of(1)[0];
        assert!(matches!(
            count_connecting_orbits(&flow, &crit, saddle, saddle, &OrbitConfig::default()),
            Err(MorseError::IndexMismatch { .. })
        ));
    }

    #[test]
    fn empty_critical_set_gives_trivial_complex() {
        let (flow, crit) = double_well();
        let empty = CritSet { level: crit.level, points: Vec::new() };
        let mc = build_morse_complex(&flow, &empty, &OrbitConfig::default()).unwrap();
        assert!(mc.generators.is_empty());
        assert!(mc.homology.is_trivial());
    }
}
