//! Forward integration of the negative-gradient (heat) semi-flow
//! `ż = −∇S(z)` and time-T preimage oracles.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, ModelSystem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("integration needs {needed} steps, limit is {limit}")]
    StepLimitExceeded { needed: usize, limit: usize },
    #[error("state left the bounding box or became non-finite at time {time}")]
    NonFiniteState { time: f64 },
    #[error("negative integration time {0}")]
    NegativeTime(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Linear stiff part implicit, remainder explicit (first order).
    SemiImplicit,
    ExplicitRk4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub scheme: Scheme,
    pub step: f64,
    pub max_steps: usize,
    /// `‖∇S‖₂` below which a long integration counts as settled.
    pub tol_flow: f64,
    /// Max-norm bound on states; leaving it is reported as `NonFiniteState`.
    pub bound: Option<f64>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { scheme: Scheme::SemiImplicit, step: 1e-3, max_steps: 2_000_000, tol_flow: 1e-9, bound: None }
    }
}

impl FlowConfig {
    pub fn rk4(step: f64) -> Self {
        Self { scheme: Scheme::ExplicitRk4, step, ..Self::default() }
    }

    pub fn semi_implicit(step: f64) -> Self {
        Self { scheme: Scheme::SemiImplicit, step, ..Self::default() }
    }
}

/// Sampled solution of the semi-flow.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub actions: Vec<f64>,
}

impl Trajectory {
    pub fn last(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has at least the initial state")
    }

    /// Largest increase of the action between consecutive samples.
    pub fn max_action_increase(&self) -> f64 {
        self.actions.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }
}

/// Result of flowing towards the ω-limit.
#[derive(Debug, Clone)]
pub struct Limit {
    pub state: DVector<f64>,
    pub time: f64,
    pub grad_norm: f64,
    pub settled: bool,
}

/// A configured integrator for one system.
///
/// For the semi-implicit scheme the matrix `I + hL` of the constant linear
/// part is factored once.
#[derive(Debug, Clone)]
pub struct Flow {
    sys: Arc<ModelSystem>,
    cfg: FlowConfig,
    linear: Option<DMatrix<f64>>,
    factor: Option<Cholesky<f64, Dyn>>,
}

impl Flow {
    pub fn new(sys: Arc<ModelSystem>, cfg: FlowConfig) -> Result<Self, FlowError> {
        if !(cfg.step > 0.0) || !cfg.step.is_finite() {
            return Err(FlowError::Model(ModelError::InvalidSystem(format!("flow step must be positive, got {}", cfg.step))));
        }
        let linear = match cfg.scheme {
            Scheme::SemiImplicit => sys.linear_part(),
            Scheme::ExplicitRk4 => None,
        };
        let factor = linear.as_ref().map(|l| implicit_factor(l, cfg.step));
        Ok(Self { sys, cfg, linear, factor })
    }

    pub fn system(&self) -> &ModelSystem {
        &self.sys
    }

    pub fn system_arc(&self) -> Arc<ModelSystem> {
        self.sys.clone()
    }

    pub fn config(&self) -> &FlowConfig {
        &self.cfg
    }

    /// Same system, different configuration.
    pub fn with_config(&self, cfg: FlowConfig) -> Result<Self, FlowError> {
        Self::new(self.sys.clone(), cfg)
    }

    fn check_state(&self, z: &DVector<f64>, time: f64) -> Result<(), FlowError> {
        let bad = z.iter().any(|x| !x.is_finite()) || self.cfg.bound.is_some_and(|b| z.amax() > b);
        if bad {
            Err(FlowError::NonFiniteState { time })
        } else {
            Ok(())
        }
    }

    /// Splits `T` into full steps plus a remainder.
    fn schedule(&self, t: f64) -> Result<(usize, f64), FlowError> {
        if t < 0.0 || t.is_nan() {
            return Err(FlowError::NegativeTime(t));
        }
        let h = self.cfg.step;
        let ratio = t / h;
        let mut n = ratio.floor();
        if ratio - n > 1.0 - 1e-9 {
            n += 1.0;
        }
        let rem = (t - n * h).max(0.0);
        let rem = if rem <= 1e-12 * h { 0.0 } else { rem };
        let needed = n as usize + usize::from(rem > 0.0);
        if needed > self.cfg.max_steps {
            return Err(FlowError::StepLimitExceeded { needed, limit: self.cfg.max_steps });
        }
        Ok((n as usize, rem))
    }

    /// One step of size `h`, given the gradient at `z`.
    fn step(&self, z: &DVector<f64>, grad: &DVector<f64>, h: f64) -> Result<DVector<f64>, FlowError> {
        match self.cfg.scheme {
            Scheme::SemiImplicit => match &self.linear {
                Some(l) => {
                    let rhs = z - (grad - l * z) * h;
                    if h == self.cfg.step {
                        Ok(self.factor.as_ref().expect("factor exists with linear part").solve(&rhs))
                    } else {
                        Ok(implicit_factor(l, h).solve(&rhs))
                    }
                }
                None => Ok(z - grad * h),
            },
            Scheme::ExplicitRk4 => {
                let k1 = grad;
                let k2 = self.sys.gradient(&(z - k1 * (0.5 * h)))?;
                let k3 = self.sys.gradient(&(z - &k2 * (0.5 * h)))?;
                let k4 = self.sys.gradient(&(z - &k3 * h))?;
                Ok(z - (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
            }
        }
    }

    /// Integrates the semi-flow for time `t`, recording every step.
    pub fn integrate(&self, z0: &DVector<f64>, t: f64) -> Result<Trajectory, FlowError> {
        let (n, rem) = self.schedule(t)?;
        let mut traj = Trajectory { times: vec![0.0], states: vec![z0.clone()], actions: vec![self.sys.action(z0)?] };
        let mut z = z0.clone();
        let mut time = 0.0;
        for i in 0..n + usize::from(rem > 0.0) {
            let h = if i < n { self.cfg.step } else { rem };
            let g = self.sys.gradient(&z)?;
            z = self.step(&z, &g, h)?;
            time = if i < n { (i + 1) as f64 * self.cfg.step } else { t };
            self.check_state(&z, time)?;
            traj.times.push(time);
            traj.actions.push(self.sys.action(&z)?);
            traj.states.push(z.clone());
        }
        debug_assert!(n == 0 && rem == 0.0 || (time - t).abs() <= 1e-9 * (1.0 + t));
        Ok(traj)
    }

    /// `φ_t(z0)` without recording.
    pub fn flow(&self, z0: &DVector<f64>, t: f64) -> Result<DVector<f64>, FlowError> {
        let (n, rem) = self.schedule(t)?;
        let mut z = z0.clone();
        for i in 0..n + usize::from(rem > 0.0) {
            let h = if i < n { self.cfg.step } else { rem };
            let g = self.sys.gradient(&z)?;
            z = self.step(&z, &g, h)?;
            self.check_state(&z, (i + 1) as f64 * self.cfg.step)?;
        }
        Ok(z)
    }

    /// Flows until `‖∇S‖₂ < tol_flow` or `max_time` is reached.
    pub fn flow_to_limit(&self, z0: &DVector<f64>, max_time: f64) -> Result<Limit, FlowError> {
        let max_steps = ((max_time / self.cfg.step).ceil() as usize).min(self.cfg.max_steps);
        let mut z = z0.clone();
        for i in 0..max_steps {
            let g = self.sys.gradient(&z)?;
            let gn = self.sys.l2_norm(&g);
            if gn < self.cfg.tol_flow {
                return Ok(Limit { state: z, time: i as f64 * self.cfg.step, grad_norm: gn, settled: true });
            }
            z = self.step(&z, &g, self.cfg.step)?;
            self.check_state(&z, (i + 1) as f64 * self.cfg.step)?;
        }
        let gn = self.sys.l2_norm(&self.sys.gradient(&z)?);
        Ok(Limit { state: z, time: max_steps as f64 * self.cfg.step, grad_norm: gn, settled: gn < self.cfg.tol_flow })
    }

    /// Integrates the state together with tangent vectors (columns of `tangent`)
    /// under the linearized flow `J̇ = −∇²S(z) J`.
    pub fn flow_with_tangent(
        &self,
        z0: &DVector<f64>,
        tangent: &DMatrix<f64>,
        t: f64,
    ) -> Result<(DVector<f64>, DMatrix<f64>), FlowError> {
        let (n, rem) = self.schedule(t)?;
        let mut z = z0.clone();
        let mut j = tangent.clone();
        for i in 0..n + usize::from(rem > 0.0) {
            let h = if i < n { self.cfg.step } else { rem };
            let g = self.sys.gradient(&z)?;
            match self.cfg.scheme {
                Scheme::ExplicitRk4 => {
                    let h1 = self.sys.hessian(&z)?;
                    let k1 = &h1 * &j;
                    let z2 = &z - &g * (0.5 * h);
                    let h2 = self.sys.hessian(&z2)?;
                    let k2 = &h2 * (&j - &k1 * (0.5 * h));
                    let g2 = self.sys.gradient(&z2)?;
                    let z3 = &z - &g2 * (0.5 * h);
                    let h3 = self.sys.hessian(&z3)?;
                    let k3 = &h3 * (&j - &k2 * (0.5 * h));
                    let g3 = self.sys.gradient(&z3)?;
                    let z4 = &z - &g3 * h;
                    let h4 = self.sys.hessian(&z4)?;
                    let k4 = &h4 * (&j - &k3 * h);
                    let g4 = self.sys.gradient(&z4)?;
                    j -= (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
                    z -= (g + g2 * 2.0 + g3 * 2.0 + g4) * (h / 6.0);
                }
                Scheme::SemiImplicit => {
                    let hess = self.sys.hessian(&z)?;
                    match &self.linear {
                        Some(l) => {
                            let rhs_j = &j - (&hess - l) * &j * h;
                            let znew = self.step(&z, &g, h)?;
                            let fac = if h == self.cfg.step { self.factor.clone().expect("factor") } else { implicit_factor(l, h) };
                            j = fac.solve(&rhs_j);
                            z = znew;
                        }
                        None => {
                            j = &j - &hess * &j * h;
                            z = &z - &g * h;
                        }
                    }
                }
            }
            self.check_state(&z, (i + 1) as f64 * self.cfg.step)?;
        }
        Ok((z, j))
    }
}

fn implicit_factor(l: &DMatrix<f64>, h: f64) -> Cholesky<f64, Dyn> {
    let n = l.nrows();
    Cholesky::new(DMatrix::identity(n, n) + l * h).expect("I + hL is positive definite for a positive semi-definite L")
}

/// Tri-state membership: `Ok(true)` in, `Ok(false)` out, `Err` when the
/// predicate could not be evaluated.
pub type Verdict = Result<bool, FlowError>;

pub trait StatePredicate: Send + Sync {
    fn test(&self, z: &DVector<f64>) -> Verdict;
}

impl<F> StatePredicate for F
where
    F: Fn(&DVector<f64>) -> Verdict + Send + Sync,
{
    fn test(&self, z: &DVector<f64>) -> Verdict {
        self(z)
    }
}

/// `z ↦ pred(φ_T z)`: the preimage of a set under the time-T map.
pub struct Preimage<P> {
    flow: Arc<Flow>,
    time: f64,
    pred: P,
}

impl<P: StatePredicate> StatePredicate for Preimage<P> {
    fn test(&self, z: &DVector<f64>) -> Verdict {
        if self.time == 0.0 {
            return self.pred.test(z);
        }
        let image = self.flow.flow(z, self.time)?;
        self.pred.test(&image)
    }
}

pub fn time_t_preimage<P: StatePredicate>(flow: Arc<Flow>, time: f64, pred: P) -> Preimage<P> {
    Preimage { flow, time, pred }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AnalyticEnergy, ManifoldDescriptor, Potential};

    fn linear() -> Arc<ModelSystem> {
        Arc::new(ModelSystem::analytic(AnalyticEnergy::Quadratic { diag: vec![-1.0, 2.0] }).unwrap())
    }

    fn double_well() -> Arc<ModelSystem> {
        Arc::new(ModelSystem::analytic(AnalyticEnergy::DoubleWell).unwrap())
    }

    #[test]
    fn linear_flow_matches_exponential() {
        let flow = Flow::new(linear(), FlowConfig::rk4(1e-3)).unwrap();
        let z = flow.flow(&DVector::from_vec(vec![0.1, 1.0]), 1.0).unwrap();
        assert!((z[0] - 0.1 * 1f64.exp()).abs() < 1e-10);
        assert!((z[1] - (-2f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn zero_time_is_identity() {
        let z0 = DVector::from_vec(vec![0.3, -0.7]);
        for cfg in [FlowConfig::rk4(0.01), FlowConfig::semi_implicit(0.01)] {
            let flow = Flow::new(double_well(), cfg).unwrap();
            assert_eq!(flow.flow(&z0, 0.0).unwrap(), z0);
            let traj = flow.integrate(&z0, 0.0).unwrap();
            assert_eq!(traj.states.len(), 1);
            assert_eq!(traj.last(), &z0);
        }
    }

    #[test]
    fn double_well_settles_in_right_basin() {
        let flow = Flow::new(double_well(), FlowConfig::rk4(0.01)).unwrap();
        let lim = flow.flow_to_limit(&DVector::from_vec(vec![0.2, 0.3]), 100.0).unwrap();
        assert!(lim.settled);
        assert!((lim.state[0] - 1.0).abs() < 1e-9 && lim.state[1].abs() < 1e-9);
    }

    #[test]
    fn step_limit_and_bounds_are_reported() {
        let cfg = FlowConfig { max_steps: 10, ..FlowConfig::rk4(0.1) };
        let flow = Flow::new(double_well(), cfg).unwrap();
        assert_eq!(
            flow.flow(&DVector::zeros(2), 5.0).unwrap_err(),
            FlowError::StepLimitExceeded { needed: 50, limit: 10 }
        );
        let cfg = FlowConfig { bound: Some(10.0), ..FlowConfig::rk4(0.01) };
        let flow = Flow::new(linear(), cfg).unwrap();
        assert!(matches!(flow.flow(&DVector::from_vec(vec![1.0, 0.0]), 5.0), Err(FlowError::NonFiniteState { .. })));
        assert!(matches!(flow.flow(&DVector::zeros(2), -1.0), Err(FlowError::NegativeTime(_))));
    }

    #[test]
    fn preimage_oracle_composes_flow_and_predicate() {
        let flow = Arc::new(Flow::new(double_well(), FlowConfig::rk4(0.01)).unwrap());
        let sys = flow.system_arc();
        let below = move |z: &DVector<f64>| -> Verdict { Ok(sys.action(z)? < 0.8) };
        let pre = time_t_preimage(flow.clone(), 2.0, below);
        let z = DVector::from_vec(vec![0.05, 0.0]);
        assert!(pre.test(&z).unwrap());
        let sys = flow.system_arc();
        let identity = time_t_preimage(flow.clone(), 0.0, move |z: &DVector<f64>| -> Verdict { Ok(sys.action(z)? < 0.8) });
        assert!(!identity.test(&z).unwrap());
        let always = time_t_preimage(flow, 3.0, |_: &DVector<f64>| -> Verdict { Ok(true) });
        assert!(always.test(&DVector::from_vec(vec![-0.4, 2.0])).unwrap());
    }

    #[test]
    fn semi_implicit_loop_flow_decreases_action() {
        let sys = Arc::new(
            ModelSystem::loop_space(ManifoldDescriptor::Circle, Potential::pendulum(0.5), 16, vec![0]).unwrap(),
        );
        let flow = Flow::new(sys.clone(), FlowConfig::semi_implicit(0.005)).unwrap();
        let z0 = sys.loop_from_fn(|t, _| 0.4 + 0.2 * (2.0 * std::f64::consts::PI * 3.0 * t).sin()).unwrap();
        let traj = flow.integrate(&z0, 1.0).unwrap();
        assert!(traj.max_action_increase() <= 1e-8);
        assert!(traj.actions.last().unwrap() < &traj.actions[0]);
    }

    #[test]
    fn tangent_flow_matches_finite_differences() {
        let sys = Arc::new(ModelSystem::analytic(AnalyticEnergy::CoupledSaddle { coupling: 0.5 }).unwrap());
        let flow = Flow::new(sys, FlowConfig::rk4(0.005)).unwrap();
        let z0 = DVector::from_vec(vec![0.1, 0.4]);
        let (z, j) = flow.flow_with_tangent(&z0, &DMatrix::identity(2, 2), 1.5).unwrap();
        assert!((z - flow.flow(&z0, 1.5).unwrap()).norm() < 1e-14);
        let eps = 1e-6;
        for c in 0..2 {
            let mut zp = z0.clone();
            let mut zm = z0.clone();
            zp[c] += eps;
            zm[c] -= eps;
            let fd = (flow.flow(&zp, 1.5).unwrap() - flow.flow(&zm, 1.5).unwrap()) / (2.0 * eps);
            assert!((fd - j.column(c)).norm() < 1e-7);
        }
    }
}
