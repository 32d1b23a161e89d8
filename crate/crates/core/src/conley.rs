//! Conley pairs `(N_x, L_x)` defined by action windows along the semi-flow
//! and the Morse filtration built from them.

use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::critical::{CritSet, CriticalError};
use crate::homology::{Grid, HomologyError, Mask};
use crate::sampling;
use crate::semiflow::{Flow, FlowError, Verdict};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConleyError {
    #[error("ε = {eps} must stay below {max} (half the smallest critical value gap)")]
    EpsilonTooLarge { eps: f64, max: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("no T ≤ {t_max} maps the level-{level} samples into the filtration ({failures} failures at the last try)")]
    TLimitExceeded { level: usize, t_max: f64, failures: usize },
    #[error("F_{level} is not contained in F_{} at {witness:?}", level + 1)]
    NestingViolation { level: usize, witness: Vec<f64> },
    #[error("Conley sets still overlap after {retries} retries")]
    DisjointnessFailure { retries: usize },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Critical(#[from] CriticalError),
    #[error(transparent)]
    Homology(#[from] HomologyError),
}

impl From<crate::model::ModelError> for ConleyError {
    fn from(e: crate::model::ModelError) -> Self {
        ConleyError::Flow(FlowError::Model(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConleyParams {
    pub eps: f64,
    pub tau: f64,
}

/// `¼ · min(smallest gap between critical values, a − largest critical value)`.
pub fn default_eps(crit: &CritSet) -> f64 {
    let top = crit.points.iter().map(|p| p.action).fold(f64::NEG_INFINITY, f64::max);
    let headroom = if top.is_finite() { crit.level - top } else { 1.0 };
    0.25 * crit.min_value_gap().min(headroom)
}

/// Largest time the flow needs to carry `x ± r v` (`v` in the negative
/// frame, `r = probe`) below `c − ε`, over all critical points of index ≥ 1;
/// `1` when there are none.
pub fn default_tau(flow: &Flow, crit: &CritSet, eps: f64, probe: f64) -> Result<f64, ConleyError> {
    let sys = flow.system();
    let h = flow.config().step;
    let limit = flow.config().max_steps.min(1_000_000);
    let mut tau: f64 = 0.0;
    for p in crit.points.iter().filter(|p| p.morse_index > 0) {
        for v in &p.neg_frame {
            let unit = v / sys.l2_norm(v);
            for s in [1.0, -1.0] {
                let mut z = &p.state + &unit * (s * probe);
                let mut t = 0.0;
                let mut steps = 0;
                while sys.action(&z)? > p.action - eps {
                    z = flow.flow(&z, h)?;
                    t += h;
                    steps += 1;
                    if steps > limit {
                        return Err(FlowError::StepLimitExceeded { needed: steps, limit }.into());
                    }
                }
                tau = tau.max(t);
            }
        }
    }
    Ok(if tau > 0.0 { tau } else { 1.0 })
}

/// The `{…}_x` component restriction.
#[derive(Debug, Clone, PartialEq)]
pub enum Selector {
    Unrestricted,
    /// Grid component of `N_x`; a state qualifies when its cell or a
    /// face-adjacent cell is in the mask.
    Grid(Mask),
    /// States within this max-norm distance of `x` modulo deck translations.
    Ball(f64),
}

/// Action values `(S(z), S(φ_τ z), S(φ_{2τ} z))`.
pub type Window = (f64, f64, f64);

#[derive(Debug, Clone)]
pub struct ConleyPair {
    /// Position of `x` in the critical set.
    pub point: usize,
    pub state: DVector<f64>,
    pub action: f64,
    pub morse_index: usize,
    pub params: ConleyParams,
    pub selector: Selector,
    flow: Arc<Flow>,
}

impl ConleyPair {
    /// Checked constructor: `ε` below half the smallest critical value gap.
    pub fn new(flow: Arc<Flow>, crit: &CritSet, point: usize, params: ConleyParams) -> Result<Self, ConleyError> {
        let max = 0.5 * crit.min_value_gap();
        if params.eps >= max {
            return Err(ConleyError::EpsilonTooLarge { eps: params.eps, max });
        }
        Self::new_unchecked(flow, crit, point, params)
    }

    /// Skips the critical value gap check (used to exercise bad parameters).
    pub fn new_unchecked(flow: Arc<Flow>, crit: &CritSet, point: usize, params: ConleyParams) -> Result<Self, ConleyError> {
        if !(params.eps > 0.0 && params.tau > 0.0) {
            return Err(ConleyError::InvalidParameters(format!("need ε > 0 and τ > 0, got {params:?}")));
        }
        let p = &crit.points[point];
        Ok(Self {
            point,
            state: p.state.clone(),
            action: p.action,
            morse_index: p.morse_index,
            params,
            selector: Selector::Unrestricted,
            flow,
        })
    }

    pub fn with_selector(mut self, selector: Selector) -> Self {
        self.selector = selector;
        self
    }

    pub fn flow(&self) -> &Arc<Flow> {
        &self.flow
    }

    /// Action window of `z`; skips integration when `z` is above every window.
    pub fn window(&self, z: &DVector<f64>) -> Result<Window, FlowError> {
        window(&self.flow, self.params.tau, z, f64::INFINITY)
    }

    fn selected(&self, z: &DVector<f64>) -> bool {
        match &self.selector {
            Selector::Unrestricted => true,
            Selector::Ball(r) => self.flow.system().lattice_distance(z, &self.state) < *r,
            Selector::Grid(mask) => match mask.grid.locate(z) {
                Some(cell) => mask.bits[cell] || mask.grid.neighbors(cell).into_iter().any(|n| mask.bits[n]),
                None => false,
            },
        }
    }

    /// `(z ∈ N, z ∈ L)` from a precomputed window, ignoring the selector.
    pub fn classify_window(&self, w: Window) -> (bool, bool) {
        let (c, e) = (self.action, self.params.eps);
        let n = w.0 < c + e && w.1 > c - e;
        (n, n && w.2 < c - e)
    }

    /// `(z ∈ N_x, z ∈ L_x)`.
    pub fn classify(&self, z: &DVector<f64>) -> Result<(bool, bool), FlowError> {
        if !self.selected(z) {
            return Ok((false, false));
        }
        let s = self.flow.system().action(z)?;
        if s >= self.action + self.params.eps {
            return Ok((false, false));
        }
        Ok(self.classify_window(self.window(z)?))
    }

    pub fn n_oracle(&self, z: &DVector<f64>) -> Verdict {
        self.classify(z).map(|c| c.0)
    }

    pub fn l_oracle(&self, z: &DVector<f64>) -> Verdict {
        self.classify(z).map(|c| c.1)
    }
}

fn window(flow: &Flow, tau: f64, z: &DVector<f64>, cutoff: f64) -> Result<Window, FlowError> {
    let sys = flow.system();
    let s0 = sys.action(z)?;
    if s0 >= cutoff {
        return Ok((s0, s0, s0));
    }
    let z1 = flow.flow(z, tau)?;
    let z2 = flow.flow(&z1, tau)?;
    Ok((s0, sys.action(&z1)?, sys.action(&z2)?))
}

/// Rasterized pair.
#[derive(Debug, Clone)]
pub struct PairMasks {
    pub point: usize,
    pub n: Mask,
    pub l: Mask,
    pub errors: usize,
}

/// Rasterizes all pairs on one grid with a single integration per cell
/// (pairs must share `τ`), selects the grid component of each `x`, and
/// installs it as the pair's selector.
pub fn rasterize_pairs(pairs: &mut [ConleyPair], grid: &Grid) -> Result<Vec<PairMasks>, ConleyError> {
    let Some(first) = pairs.first() else { return Ok(Vec::new()) };
    let tau = first.params.tau;
    if pairs.iter().any(|p| p.params.tau != tau) {
        return Err(ConleyError::InvalidParameters("pairs rasterized together must share τ".into()));
    }
    let flow = first.flow.clone();
    let cutoff = pairs.iter().map(|p| p.action + p.params.eps).fold(f64::NEG_INFINITY, f64::max);
    let windows: Vec<Option<Window>> = (0..grid.len()).into_par_iter().map(|i| window(&flow, tau, &grid.cell_center(i), cutoff).ok()).collect();
    let errors = windows.iter().filter(|w| w.is_none()).count();
    let mut out = Vec::with_capacity(pairs.len());
    for pair in pairs.iter_mut() {
        let mut n_raw = Mask::empty(grid);
        let mut l_raw = Mask::empty(grid);
        for (i, w) in windows.iter().enumerate() {
            if let Some(w) = w {
                let (n, l) = pair.classify_window(*w);
                n_raw.bits[i] = n;
                l_raw.bits[i] = l;
            }
        }
        let n = match grid.locate(&pair.state) {
            Some(cell) => n_raw.component(cell),
            None => Mask::empty(grid),
        };
        let l = l_raw.intersection(&n)?;
        pair.selector = Selector::Grid(n.clone());
        out.push(PairMasks { point: pair.point, n, l, errors });
    }
    Ok(out)
}

/// Exit-set behavior along sampled trajectories.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExitReport {
    pub samples: usize,
    pub horizon: f64,
    pub check_step: f64,
    /// Trajectories leaving `N` without passing through `L`.
    pub exit_without_l: Vec<Vec<f64>>,
    /// Trajectories returning from `L` to `N ∖ L`.
    pub l_not_invariant: Vec<Vec<f64>>,
    pub errors: usize,
}

impl ExitReport {
    pub fn passed(&self) -> bool {
        self.exit_without_l.is_empty() && self.l_not_invariant.is_empty()
    }
}

/// Tracks `φ_s z` for `s = 0, Δ, 2Δ, … ≤ horizon` and records exit and
/// invariance violations.
pub fn verify_exit_set(pair: &ConleyPair, samples: &[DVector<f64>], horizon: f64, check_step: f64) -> ExitReport {
    let flow = pair.flow.clone();
    let results: Vec<Result<(bool, bool), FlowError>> = samples
        .par_iter()
        .map(|z0| {
            let mut z = z0.clone();
            let mut seen_l = false;
            let mut was_in_n = false;
            let mut bad_exit = false;
            let mut bad_return = false;
            let mut s = 0.0;
            while s <= horizon + 1e-12 {
                let (n, l) = pair.classify(&z)?;
                if was_in_n && !n && !seen_l {
                    bad_exit = true;
                }
                if seen_l && n && !l {
                    bad_return = true;
                }
                seen_l |= l;
                was_in_n = n;
                if !n && s > 0.0 {
                    break;
                }
                z = flow.flow(&z, check_step)?;
                s += check_step;
            }
            Ok((bad_exit, bad_return))
        })
        .collect();
    let mut rep = ExitReport { samples: samples.len(), horizon, check_step, ..Default::default() };
    for (z, r) in samples.iter().zip(results) {
        match r {
            Ok((exit, ret)) => {
                if exit {
                    rep.exit_without_l.push(z.iter().copied().collect());
                }
                if ret {
                    rep.l_not_invariant.push(z.iter().copied().collect());
                }
            }
            Err(_) => rep.errors += 1,
        }
    }
    rep
}

/// Overlaps between Conley sets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DisjointnessReport {
    /// `(point a, point b, shared samples)`.
    pub overlaps: Vec<(usize, usize, usize)>,
    pub checked: usize,
    pub retries: usize,
    pub final_params: Option<ConleyParams>,
}

impl DisjointnessReport {
    pub fn disjoint(&self) -> bool {
        self.overlaps.is_empty()
    }
}

/// Pairwise overlaps of rasterized `N` masks.
pub fn verify_disjointness_masks(masks: &[PairMasks]) -> Result<DisjointnessReport, ConleyError> {
    let mut rep = DisjointnessReport { checked: masks.first().map_or(0, |m| m.n.grid.len()), ..Default::default() };
    for i in 0..masks.len() {
        for j in i + 1..masks.len() {
            let shared = masks[i].n.intersection(&masks[j].n)?.count();
            if shared > 0 {
                rep.overlaps.push((masks[i].point, masks[j].point, shared));
            }
        }
    }
    Ok(rep)
}

/// Pairwise overlaps of `N` oracles on sample states.
pub fn verify_disjointness(pairs: &[ConleyPair], states: &[DVector<f64>]) -> DisjointnessReport {
    let member: Vec<Vec<bool>> =
        states.par_iter().map(|z| pairs.iter().map(|p| p.n_oracle(z).unwrap_or(false)).collect()).collect();
    let mut rep = DisjointnessReport { checked: states.len(), ..Default::default() };
    for i in 0..pairs.len() {
        for j in i + 1..pairs.len() {
            let shared = member.iter().filter(|m| m[i] && m[j]).count();
            if shared > 0 {
                rep.overlaps.push((pairs[i].point, pairs[j].point, shared));
            }
        }
    }
    rep
}

/// Pairs for every critical point, rasterized on `grid`; on overlap `ε` is
/// halved and `τ` doubled, at most `max_retries` times.
pub fn build_disjoint_pairs(
    flow: Arc<Flow>,
    crit: &CritSet,
    params: ConleyParams,
    grid: &Grid,
    max_retries: usize,
) -> Result<(Vec<ConleyPair>, Vec<PairMasks>, DisjointnessReport), ConleyError> {
    let mut params = params;
    for retry in 0..=max_retries {
        let mut pairs: Vec<ConleyPair> =
            (0..crit.len()).map(|i| ConleyPair::new_unchecked(flow.clone(), crit, i, params)).collect::<Result<_, _>>()?;
        let masks = rasterize_pairs(&mut pairs, grid)?;
        let mut rep = verify_disjointness_masks(&masks)?;
        rep.retries = retry;
        rep.final_params = Some(params);
        if rep.disjoint() {
            return Ok((pairs, masks, rep));
        }
        params = ConleyParams { eps: params.eps / 2.0, tau: params.tau * 2.0 };
    }
    Err(ConleyError::DisjointnessFailure { retries: max_retries })
}

/// Sample-based variant of [`build_disjoint_pairs`] with ball selectors.
pub fn build_disjoint_pairs_sampled(
    flow: Arc<Flow>,
    crit: &CritSet,
    params: ConleyParams,
    radius: f64,
    states: &[DVector<f64>],
    max_retries: usize,
) -> Result<(Vec<ConleyPair>, DisjointnessReport), ConleyError> {
    let mut params = params;
    for retry in 0..=max_retries {
        let pairs: Vec<ConleyPair> = (0..crit.len())
            .map(|i| ConleyPair::new_unchecked(flow.clone(), crit, i, params).map(|p| p.with_selector(Selector::Ball(radius))))
            .collect::<Result<_, _>>()?;
        let mut rep = verify_disjointness(&pairs, states);
        rep.retries = retry;
        rep.final_params = Some(params);
        if rep.disjoint() {
            return Ok((pairs, rep));
        }
        params = ConleyParams { eps: params.eps / 2.0, tau: params.tau * 2.0 };
    }
    Err(ConleyError::DisjointnessFailure { retries: max_retries })
}

/// Half the smallest max-norm distance between distinct critical points
/// (modulo deck translations), capped at `cap`.
pub fn separation_radius(flow: &Flow, crit: &CritSet, cap: f64) -> f64 {
    let sys = flow.system();
    let mut r = cap;
    for i in 0..crit.len() {
        for j in i + 1..crit.len() {
            r = r.min(0.5 * sys.lattice_distance(&crit.points[i].state, &crit.points[j].state));
        }
    }
    r
}

/// Samples for the time-constant search.
#[derive(Debug, Clone, Default)]
pub struct FiltrationSamples {
    /// `exit[k]`: states in `L_k`.
    pub exit: Vec<Vec<DVector<f64>>>,
    /// States of the sublevel set `{S < a}`.
    pub sublevel: Vec<DVector<f64>>,
}

impl FiltrationSamples {
    /// `L_k` cell centers plus points inside each cell near its corners, and
    /// every cell center of `{S < a}`.
    pub fn from_grid(flow: &Flow, crit: &CritSet, pairs: &[ConleyPair], masks: &[PairMasks], grid: &Grid) -> Result<Self, ConleyError> {
        let top = crit.max_index().unwrap_or(0);
        let mut exit = vec![Vec::new(); top + 1];
        for (pair, m) in pairs.iter().zip(masks) {
            for i in (0..grid.len()).filter(|&i| m.l.bits[i]) {
                let c = grid.cell_center(i);
                exit[pair.morse_index].push(c.clone());
                for corner in 0..(1usize << grid.dim()) {
                    let p = DVector::from_fn(grid.dim(), |j, _| {
                        let s = if corner >> j & 1 == 1 { 0.45 } else { -0.45 };
                        c[j] + s * grid.h[j]
                    });
                    if pair.l_oracle(&p)? {
                        exit[pair.morse_index].push(p);
                    }
                }
            }
        }
        let sys = flow.system();
        let mut sublevel = Vec::new();
        for i in 0..grid.len() {
            let c = grid.cell_center(i);
            if sys.action(&c)? < crit.level {
                sublevel.push(c);
            }
        }
        Ok(Self { exit, sublevel })
    }

    /// Random perturbations `x + r u + s w` (u unstable, w stable, both
    /// random) filtered through the `L` oracles, and sublevel states from
    /// `starts`.
    pub fn from_random(
        flow: &Flow,
        crit: &CritSet,
        pairs: &[ConleyPair],
        per_pair: usize,
        probe: f64,
        starts: Vec<DVector<f64>>,
        seed: u64,
    ) -> Result<Self, ConleyError> {
        let sys = flow.system();
        let top = crit.max_index().unwrap_or(0);
        let mut exit = vec![Vec::new(); top + 1];
        let mut rng = sampling::rng(seed);
        for pair in pairs.iter().filter(|p| p.morse_index > 0) {
            let cp = &crit.points[pair.point];
            let mut found = 0;
            let mut tries = 0;
            while found < per_pair && tries < 50 * per_pair {
                tries += 1;
                let mut z = cp.state.clone();
                for v in &cp.neg_frame {
                    z += v * (probe * rng.gen_range(-1.0..1.0) / sys.l2_norm(v));
                }
                for v in cp.pos_frame.iter().take(4) {
                    z += v * (0.1 * probe * rng.gen_range(-1.0..1.0) / sys.l2_norm(v));
                }
                if pair.l_oracle(&z)? {
                    exit[pair.morse_index].push(z);
                    found += 1;
                }
            }
        }
        let mut sublevel = Vec::new();
        for z in starts {
            if sys.action(&z)? < crit.level {
                sublevel.push(z);
            }
        }
        Ok(Self { exit, sublevel })
    }
}

/// Acceptance record of one time constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TCertificate {
    pub level: usize,
    pub time: f64,
    pub samples: usize,
    pub attempts: usize,
}

/// The nested sets `F_k = {S < a} ∩ φ_{T_k}⁻¹(F_{k−1} ∪ N_k)`.
#[derive(Debug, Clone)]
pub struct Filtration {
    pub level: f64,
    pub pairs: Vec<ConleyPair>,
    pub by_index: Vec<Vec<usize>>,
    pub times: Vec<f64>,
    pub certificates: Vec<TCertificate>,
    flow: Arc<Flow>,
}

impl Filtration {
    pub fn levels(&self) -> usize {
        self.by_index.len()
    }

    fn in_n(&self, k: usize, z: &DVector<f64>) -> Verdict {
        for &p in &self.by_index[k] {
            if self.pairs[p].n_oracle(z)? {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Membership in `F_k`; `k = None` is `F_{−1} = ∅`.
    pub fn contains(&self, k: Option<usize>, z: &DVector<f64>) -> Verdict {
        let Some(k) = k else { return Ok(false) };
        if self.flow.system().action(z)? >= self.level {
            return Ok(false);
        }
        let w = self.flow.flow(z, self.times[k])?;
        if self.in_n(k, &w)? {
            return Ok(true);
        }
        self.contains(k.checked_sub(1), &w)
    }

    /// Masks of `F_0, …, F_K`.
    pub fn rasterize(&self, grid: &Grid) -> (Vec<Mask>, usize) {
        let k = self.levels();
        let rows: Vec<Option<Vec<bool>>> = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let c = grid.cell_center(i);
                (0..k).map(|l| self.contains(Some(l), &c).ok()).collect()
            })
            .collect();
        let errors = rows.iter().filter(|r| r.is_none()).count();
        let masks = (0..k)
            .map(|l| Mask { grid: grid.clone(), bits: rows.iter().map(|r| r.as_ref().is_some_and(|v| v[l])).collect() })
            .collect();
        (masks, errors)
    }

    /// First cell of `F_{k−1}` outside `F_k`.
    pub fn check_nesting(masks: &[Mask]) -> Result<(), ConleyError> {
        for k in 1..masks.len() {
            if let Some(cell) = (0..masks[k].bits.len()).find(|&i| masks[k - 1].bits[i] && !masks[k].bits[i]) {
                return Err(ConleyError::NestingViolation { level: k - 1, witness: masks[k].grid.cell_center(cell).iter().copied().collect() });
            }
        }
        Ok(())
    }

    /// `z ∈ F_k ⇒ φ_s z ∈ F_k`; returns the violating `(z, s)` pairs.
    pub fn check_forward_invariance(&self, k: usize, samples: &[DVector<f64>], times: &[f64]) -> Vec<(Vec<f64>, f64)> {
        samples
            .par_iter()
            .flat_map_iter(|z| {
                let inside = self.contains(Some(k), z).unwrap_or(false);
                times
                    .iter()
                    .filter(move |_| inside)
                    .filter_map(|&s| {
                        let w = self.flow.flow(z, s).ok()?;
                        (!self.contains(Some(k), &w).unwrap_or(false)).then(|| (z.iter().copied().collect(), s))
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    }
}

/// Number of `samples` not landing in `F_{k−1} ∪ N_k` under `φ_T`.
fn misses(partial: &Filtration, k: usize, t: f64, samples: &[DVector<f64>]) -> usize {
    samples
        .par_iter()
        .filter(|z| {
            let ok = (|| -> Verdict {
                let w = partial.flow.flow(z, t)?;
                if partial.in_n(k, &w)? {
                    return Ok(true);
                }
                partial.contains(k.checked_sub(1), &w)
            })();
            !ok.unwrap_or(false)
        })
        .count()
}

/// Doubling search `T ∈ {τ, 2τ, 4τ, …} ≤ t_max` for the level-`k` constant.
pub fn choose_t_k(partial: &Filtration, k: usize, samples: &[DVector<f64>], tau: f64, t_max: f64) -> Result<TCertificate, ConleyError> {
    if samples.is_empty() {
        return Ok(TCertificate { level: k, time: tau, samples: 0, attempts: 0 });
    }
    let mut t = tau;
    let mut attempts = 0;
    loop {
        attempts += 1;
        let m = misses(partial, k, t, samples);
        if m == 0 {
            return Ok(TCertificate { level: k, time: t, samples: samples.len(), attempts });
        }
        if 2.0 * t > t_max {
            return Err(ConleyError::TLimitExceeded { level: k, t_max, failures: m });
        }
        t *= 2.0;
    }
}

/// Chooses `T_0, …, T_K` in turn: `T_k` maps every `L_{k+1}` sample (all
/// of `{S < a}` for the top level) into `F_{k−1} ∪ N_k`.
pub fn build_filtration(flow: Arc<Flow>, crit: &CritSet, pairs: Vec<ConleyPair>, samples: &FiltrationSamples, t_max: f64) -> Result<Filtration, ConleyError> {
    let top = crit.max_index().unwrap_or(0);
    let mut by_index = vec![Vec::new(); top + 1];
    for (i, p) in pairs.iter().enumerate() {
        by_index[p.morse_index].push(i);
    }
    let tau = pairs.first().map_or(1.0, |p| p.params.tau);
    let mut filt = Filtration { level: crit.level, pairs, by_index, times: Vec::new(), certificates: Vec::new(), flow };
    for k in 0..=top {
        let target: &[DVector<f64>] = if k == top { &samples.sublevel } else { samples.exit.get(k + 1).map_or(&[], Vec::as_slice) };
        filt.times.push(tau);
        let cert = choose_t_k(&filt, k, target, tau, t_max)?;
        filt.times[k] = cert.time;
        filt.certificates.push(cert);
    }
    Ok(filt)
}

/// Radius of a rasterized set about a point (max-norm over cell centers).
pub fn mask_radius(mask: &Mask, center: &DVector<f64>) -> f64 {
    (0..mask.bits.len()).filter(|&i| mask.bits[i]).map(|i| (mask.grid.cell_center(i) - center).amax()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkRound {
    pub eps: f64,
    pub tau: f64,
    pub radius: f64,
    pub touches_boundary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkReport {
    pub delta: f64,
    pub rounds: Vec<ShrinkRound>,
    pub inside: bool,
}

/// Halves `ε` and doubles `τ` until the rasterized `N_x` lies in the
/// max-norm `δ`-ball about `x`.
pub fn shrink_into_ball(
    flow: Arc<Flow>,
    crit: &CritSet,
    point: usize,
    start: ConleyParams,
    delta: f64,
    max_rounds: usize,
) -> Result<ShrinkReport, ConleyError> {
    let x = crit.points[point].state.clone();
    let half: Vec<f64> = vec![2.0 * delta; x.len()];
    let grid = Grid::centered(x.as_slice(), &half, delta / 10.0)?;
    let mut params = start;
    let mut rounds = Vec::new();
    for _ in 0..max_rounds {
        let mut pair = vec![ConleyPair::new_unchecked(flow.clone(), crit, point, params)?];
        let masks = rasterize_pairs(&mut pair, &grid)?;
        let n = &masks[0].n;
        let touches = (0..grid.len()).any(|i| {
            n.bits[i] && grid.multi_index(i).iter().zip(&grid.shape).any(|(&m, &s)| m == 0 || m + 1 == s)
        });
        let radius = if touches { f64::INFINITY } else { mask_radius(n, &x) };
        rounds.push(ShrinkRound { eps: params.eps, tau: params.tau, radius, touches_boundary: touches });
        if radius < delta {
            return Ok(ShrinkReport { delta, rounds, inside: true });
        }
        params = ConleyParams { eps: params.eps / 2.0, tau: params.tau * 2.0 };
    }
    Ok(ShrinkReport { delta, rounds, inside: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critical::{find_critical_points, Multistart, StartRegion};
    use crate::model::{AnalyticEnergy, ModelSystem};
    use crate::semiflow::FlowConfig;

    fn setup() -> (Arc<Flow>, CritSet) {
        let sys = Arc::new(ModelSystem::analytic(AnalyticEnergy::DoubleWell).unwrap());
        let ms = Multistart { count: 40, seed: 1, region: StartRegion::Box { lower: vec![-1.5, -1.0], upper: vec![1.5, 1.0] } };
        let crit = find_critical_points(&sys, 2.0, &ms).unwrap();
        (Arc::new(Flow::new(sys, FlowConfig::rk4(0.01)).unwrap()), crit)
    }

    fn saddle_pair(eps: f64, tau: f64) -> ConleyPair {
        let (flow, crit) = setup();
        ConleyPair::new(flow, &crit, crit.indices_of(1)[0], ConleyParams { eps, tau }).unwrap()
    }

    #[test]
    fn saddle_pair_examples() {
        let pair = saddle_pair(0.2, 1.0);
        let v = |x: f64, y: f64| DVector::from_vec(vec![x, y]);
        assert_eq!(pair.classify(&v(0.0, 0.05)).unwrap(), (true, false));
        assert_eq!(pair.classify(&v(0.0, 0.0)).unwrap(), (true, false));
        assert_eq!(pair.classify(&v(0.003, 0.0)).unwrap(), (true, true));
        let w = pair.window(&v(0.15, 0.0)).unwrap();
        let (n, l) = pair.classify(&v(0.15, 0.0)).unwrap();
        assert_eq!(n, w.1 > 0.8);
        assert_eq!(l, n && w.2 < 0.8);
        assert_eq!(pair.classify(&v(0.0, 0.5)).unwrap(), (false, false));
    }

    #[test]
    fn large_eps_is_rejected() {
        let (flow, crit) = setup();
        let err = ConleyPair::new(flow, &crit, 0, ConleyParams { eps: 0.6, tau: 1.0 }).unwrap_err();
        assert!(matches!(err, ConleyError::EpsilonTooLarge { .. }));
    }

    #[test]
    fn default_constants() {
        let (flow, crit) = setup();
        assert!((default_eps(&crit) - 0.25).abs() < 1e-12);
        let tau = default_tau(&flow, &crit, 0.2, 0.1).unwrap();
        assert!(tau > 0.1 && tau < 2.0, "{tau}");
    }

    #[test]
    fn exit_set_on_stable_and_unstable_axes() {
        let pair = saddle_pair(0.2, 1.0);
        let samples = vec![DVector::from_vec(vec![0.0, 0.1]), DVector::from_vec(vec![0.15, 0.0]), DVector::from_vec(vec![-0.05, 0.02])];
        let rep = verify_exit_set(&pair, &samples, 4.0, 0.05);
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn single_point_is_vacuously_disjoint() {
        let pair = saddle_pair(0.2, 1.0);
        assert!(verify_disjointness(&[pair], &[DVector::zeros(2)]).disjoint());
    }
}
