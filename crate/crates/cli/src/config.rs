//! Scenario files: one TOML document per experiment.

use std::path::Path;
use std::sync::Arc;

use conley_core::critical::{Multistart, StartRegion};
use conley_core::homology::Grid;
use conley_core::model::{AnalyticEnergy, ManifoldDescriptor, ModelSystem, Potential};
use conley_core::morse_complex::OrbitConfig;
use conley_core::semiflow::{Flow, FlowConfig, Scheme};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    /// Action level `a`.
    pub level: f64,
    pub system: SystemConfig,
    #[serde(default)]
    pub flow: FlowSection,
    pub critical: CriticalSection,
    #[serde(default)]
    pub morse: Option<OrbitConfig>,
    #[serde(default)]
    pub conley: Option<ConleySection>,
    #[serde(default)]
    pub filtration: Option<FiltrationSection>,
    #[serde(default)]
    pub lambda: Option<LambdaSection>,
    /// Stages run by `verify-all`, in order.
    pub pipelines: Vec<Stage>,
    #[serde(default)]
    pub expect: Expectations,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    FindCrit,
    Morse,
    Conley,
    Filtration,
    Homology,
    Lambda,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::FindCrit => "find-crit",
            Stage::Morse => "morse",
            Stage::Conley => "conley",
            Stage::Filtration => "filtration",
            Stage::Homology => "homology",
            Stage::Lambda => "lambda",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemConfig {
    Analytic {
        energy: AnalyticEnergy,
    },
    Loop {
        manifold: ManifoldDescriptor,
        segments: usize,
        #[serde(default)]
        winding: Option<Vec<i64>>,
        potential: Potential,
    },
}

impl SystemConfig {
    pub fn build(&self) -> Result<ModelSystem, CliError> {
        let sys = match self {
            SystemConfig::Analytic { energy } => ModelSystem::analytic(energy.clone()),
            SystemConfig::Loop { manifold, segments, winding, potential } => {
                let w = winding.clone().unwrap_or_else(|| vec![0; manifold.dim()]);
                ModelSystem::loop_space(manifold.clone(), potential.clone(), *segments, w)
            }
        };
        sys.map_err(|e| CliError::Config(format!("system: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    pub scheme: Scheme,
    pub step: f64,
    #[serde(default = "default_tol_flow")]
    pub tol_flow: f64,
}

fn default_tol_flow() -> f64 {
    1e-9
}

impl Default for FlowSection {
    fn default() -> Self {
        Self { scheme: Scheme::SemiImplicit, step: 1e-3, tol_flow: default_tol_flow() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticalSection {
    pub starts: usize,
    pub region: StartRegion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub center: Vec<f64>,
    pub half_width: Vec<f64>,
    pub h: f64,
}

impl GridSection {
    pub fn build(&self) -> Result<Grid, CliError> {
        Grid::centered(&self.center, &self.half_width, self.h).map_err(|e| CliError::Config(format!("grid: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConleySection {
    /// Default `¼ · min(value gap, a − c_max)`.
    pub eps: Option<f64>,
    /// Default from the probe escape time.
    pub tau: Option<f64>,
    #[serde(default = "default_probe")]
    pub probe: f64,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    /// Rasterize on a grid (analytic systems; shared with the filtration) ...
    pub grid: Option<GridSection>,
    /// ... or check disjointness on random states around each critical point.
    #[serde(default = "default_samples")]
    pub samples_per_point: usize,
    #[serde(default = "default_sample_spread")]
    pub sample_spread: f64,
    /// Shrinking target for the first index-1 point; skipped when absent.
    pub shrink_delta: Option<f64>,
}

fn default_probe() -> f64 {
    0.1
}

fn default_retries() -> usize {
    3
}

fn default_samples() -> usize {
    100
}

fn default_sample_spread() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiltrationSection {
    #[serde(default = "default_t_max")]
    pub t_max: f64,
}

fn default_t_max() -> f64 {
    200.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaSection {
    /// Position of the chart point in the critical set; default the first index-1 point.
    pub point: Option<usize>,
    pub t_list: Vec<f64>,
    /// Descending-sphere level offset; default the Conley `ε`.
    pub eps: Option<f64>,
    /// Leaf time for the compatibility and decrease checks.
    #[serde(default = "default_leaf_t")]
    pub leaf_t: f64,
    #[serde(default = "default_plus_radius")]
    pub plus_radius: f64,
    #[serde(default = "default_plus_points")]
    pub plus_points: usize,
    #[serde(default = "default_mu_fraction")]
    pub mu_fraction: f64,
    pub step: Option<f64>,
    #[serde(default = "default_decrease_samples")]
    pub decrease_samples: usize,
    #[serde(default = "default_alpha_grid")]
    pub alpha_grid: usize,
}

fn default_leaf_t() -> f64 {
    3.0
}

fn default_plus_radius() -> f64 {
    0.5
}

fn default_plus_points() -> usize {
    21
}

fn default_mu_fraction() -> f64 {
    0.5
}

fn default_decrease_samples() -> usize {
    50
}

fn default_alpha_grid() -> usize {
    200
}

/// Reference values checked when present.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectations {
    pub crit_counts: Option<Vec<usize>>,
    pub actions: Option<Vec<f64>>,
    #[serde(default = "default_action_tol")]
    pub action_tol: f64,
    pub morse_betti: Option<Vec<usize>>,
    pub sublevel_betti: Option<Vec<usize>>,
}

fn default_action_tol() -> f64 {
    1e-6
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !self.level.is_finite() {
            return bad("level must be finite".into());
        }
        if !(self.flow.step > 0.0) {
            return bad(format!("flow.step must be positive, got {}", self.flow.step));
        }
        if self.critical.starts == 0 {
            return bad("critical.starts must be positive".into());
        }
        if self.pipelines.is_empty() {
            return bad("pipelines is empty".into());
        }
        let analytic = matches!(self.system, SystemConfig::Analytic { .. });
        for stage in &self.pipelines {
            match stage {
                Stage::Conley if self.conley.is_none() => return bad("pipeline conley needs a [conley] table".into()),
                Stage::Filtration | Stage::Homology if self.filtration.is_none() || self.conley.as_ref().map_or(true, |c| c.grid.is_none()) => {
                    return bad(format!("pipeline {} needs [filtration] and conley.grid", stage.name()))
                }
                Stage::Lambda if self.lambda.is_none() => return bad("pipeline lambda needs a [lambda] table".into()),
                Stage::Filtration | Stage::Homology if !analytic => return bad("rasterized stages need an analytic system".into()),
                _ => {}
            }
        }
        if let Some(l) = &self.lambda {
            if l.t_list.len() < 4 || l.t_list.windows(2).any(|w| w[1] <= w[0]) {
                return bad("lambda.t_list needs at least four ascending values".into());
            }
        }
        self.system.build()?;
        Ok(())
    }

    pub fn flow(&self) -> Result<Arc<Flow>, CliError> {
        let sys = Arc::new(self.system.build()?);
        let cfg = FlowConfig { scheme: self.flow.scheme, step: self.flow.step, tol_flow: self.flow.tol_flow, ..FlowConfig::default() };
        Flow::new(sys, cfg).map(Arc::new).map_err(|e| CliError::Config(format!("flow: {e}")))
    }

    pub fn multistart(&self) -> Multistart {
        Multistart { count: self.critical.starts, seed: self.seed, region: self.critical.region.clone() }
    }

    pub fn orbit_config(&self) -> OrbitConfig {
        self.morse.clone().unwrap_or_default()
    }
}
