//! Stage execution and artifact writing.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use conley_core::conley::{
    build_disjoint_pairs, build_disjoint_pairs_sampled, build_filtration, default_eps, default_tau, separation_radius, shrink_into_ball, ConleyPair,
    ConleyParams, Filtration, FiltrationSamples, PairMasks,
};
use conley_core::critical::{find_critical_points, unstable_sphere_seed, CritSet, GRADIENT_TOLERANCE};
use conley_core::foliation::{
    compute_alpha, fit_decay_rate, induced_semiflow_step, leaf_boundary_samples, leaf_defect, leaf_distance_to_disk, sample_graph_map, sample_leaf,
    verify_action_decrease, verify_lambda_estimates, ChartConfig, LocalChart, NOISE_FLOOR,
};
use conley_core::homology::{compare_complexes, homology, relative_homology, triple_boundary, CellularComplex, CubicalPair, Grid, HomologyError, Mask};
use conley_core::morse_complex::{build_morse_complex, MorseComplex};
use conley_core::sampling;
use conley_core::semiflow::Flow;
use nalgebra::DVector;
use serde::Serialize;

use crate::config::{ScenarioConfig, Stage};
use crate::report::{Check, RunReport, StageReport, Status, Timings};
use crate::CliError;

/// Leaf points must lie on the shifted leaf to this distance.
pub const LEAF_TOL: f64 = 1e-6;
/// Step of the one-sided difference in the action-decrease test.
pub const DECREASE_DS: f64 = 1e-3;

/// Stages needed before `stage`, in execution order.
pub fn dependencies(stage: Stage) -> Vec<Stage> {
    match stage {
        Stage::FindCrit => vec![],
        Stage::Morse | Stage::Conley | Stage::Lambda => vec![Stage::FindCrit],
        Stage::Filtration => vec![Stage::FindCrit, Stage::Conley],
        Stage::Homology => vec![Stage::FindCrit, Stage::Morse, Stage::Conley, Stage::Filtration],
    }
}

pub fn plan(stages: &[Stage]) -> Vec<Stage> {
    let mut out: Vec<Stage> = Vec::new();
    for &s in stages {
        for d in dependencies(s).into_iter().chain([s]) {
            if !out.contains(&d) {
                out.push(d);
            }
        }
    }
    out
}

struct ConleyState {
    params: ConleyParams,
    pairs: Vec<ConleyPair>,
    masks: Option<(Grid, Vec<PairMasks>)>,
}

struct FiltrationState {
    masks: Vec<Mask>,
    cellular: Result<CellularComplex, HomologyError>,
    grid: Grid,
}

pub struct Runner {
    cfg: ScenarioConfig,
    out: PathBuf,
    strict: bool,
    flow: Arc<Flow>,
    crit: Option<CritSet>,
    morse: Option<MorseComplex>,
    conley: Option<ConleyState>,
    filtration: Option<FiltrationState>,
}

type StageResult = Result<(), String>;

impl Runner {
    pub fn new(cfg: ScenarioConfig, out: &Path, strict: bool) -> Result<Self, CliError> {
        let flow = cfg.flow()?;
        Ok(Self { cfg, out: out.to_path_buf(), strict, flow, crit: None, morse: None, conley: None, filtration: None })
    }

    /// Runs `stages` (with dependencies) and writes `report.json` and
    /// `timings.json` under the output directory.
    pub fn run(&mut self, command: &str, stages: &[Stage]) -> Result<RunReport, CliError> {
        fs::create_dir_all(&self.out).map_err(|e| CliError::Io(format!("{}: {e}", self.out.display())))?;
        let start = Instant::now();
        let mut report = RunReport {
            scenario: self.cfg.name.clone(),
            command: command.into(),
            seed: self.cfg.seed,
            strict: self.strict,
            stages: Vec::new(),
            status: Status::Pass,
        };
        let mut timings = Timings::default();
        for stage in plan(stages) {
            let t0 = Instant::now();
            let mut sr = StageReport::new(stage.name());
            let res = match stage {
                Stage::FindCrit => self.find_crit(&mut sr),
                Stage::Morse => self.morse(&mut sr),
                Stage::Conley => self.conley(&mut sr),
                Stage::Filtration => self.filtration(&mut sr),
                Stage::Homology => self.homology(&mut sr),
                Stage::Lambda => self.lambda(&mut sr),
            };
            if let Err(msg) = res {
                sr.status = Status::Error;
                sr.error = Some(msg);
            }
            sr.finish(self.strict);
            timings.stages.push((stage.name().into(), t0.elapsed().as_secs_f64()));
            let status = sr.status;
            report.stages.push(sr);
            if status == Status::Error {
                report.status = Status::Error;
                break;
            }
            if status == Status::Fail {
                report.status = Status::Fail;
            }
        }
        timings.total = start.elapsed().as_secs_f64();
        write_json(&self.out.join("report.json"), &report)?;
        write_json(&self.out.join("timings.json"), &timings)?;
        Ok(report)
    }

    fn crit(&self) -> &CritSet {
        self.crit.as_ref().expect("find-crit runs first")
    }

    fn find_crit(&mut self, sr: &mut StageReport) -> StageResult {
        let crit = find_critical_points(self.flow.system(), self.cfg.level, &self.cfg.multistart()).map_err(|e| e.to_string())?;
        let n = self.flow.system().dim();
        let mut header = vec!["position".to_string(), "morse_index".into(), "action".into(), "grad_norm".into(), "spectral_gap".into()];
        header.extend((0..n).map(|i| format!("z{i}")));
        let rows: Vec<Vec<String>> = crit
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut r = vec![i.to_string(), p.morse_index.to_string(), fmt(p.action), fmt(p.grad_norm), fmt(p.spectral_gap)];
                r.extend(p.state.iter().map(|&x| fmt(x)));
                r
            })
            .collect();
        self.csv(sr, "critical_points.csv", &header, &rows)?;
        sr.put("counts", crit.counts());
        sr.put("actions", crit.points.iter().map(|p| p.action).collect::<Vec<_>>());
        sr.put("indices", crit.points.iter().map(|p| p.morse_index).collect::<Vec<_>>());
        sr.put("spectral_gaps", crit.points.iter().map(|p| p.spectral_gap).collect::<Vec<_>>());
        let worst = crit.points.iter().map(|p| p.grad_norm).fold(0.0, f64::max);
        sr.check(Check::at_most("gradient norm at critical points", worst, GRADIENT_TOLERANCE));
        let exp = &self.cfg.expect;
        if let Some(c) = &exp.crit_counts {
            sr.check(Check::exact("critical point counts by index", crit.counts(), c.clone()));
        }
        if let Some(a) = &exp.actions {
            let got: Vec<f64> = crit.points.iter().map(|p| p.action).collect();
            let ok = got.len() == a.len() && got.iter().zip(a).all(|(g, e)| (g - e).abs() <= exp.action_tol);
            sr.check(Check::new("critical values", ok, &got, a, format!("{:e} abs", exp.action_tol)));
        }
        self.crit = Some(crit);
        Ok(())
    }

    fn morse(&mut self, sr: &mut StageReport) -> StageResult {
        let mc = build_morse_complex(&self.flow, self.crit(), &self.cfg.orbit_config()).map_err(|e| e.to_string())?;
        let rows: Vec<Vec<String>> = mc
            .orbits
            .iter()
            .map(|o| {
                vec![
                    o.source.to_string(),
                    o.target.to_string(),
                    o.sign.to_string(),
                    o.lift.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(" "),
                    o.angle.map(fmt).unwrap_or_default(),
                ]
            })
            .collect();
        self.csv(sr, "morse_orbits.csv", &["source", "target", "sign", "lift", "angle"], &rows)?;
        let bd: Vec<Vec<Vec<i64>>> = mc.boundaries.iter().map(|b| b.to_rows()).collect();
        sr.put("generators", &mc.generators);
        sr.put("boundaries", &bd);
        sr.put("homology", &mc.homology);
        let squares_vanish = mc.boundaries.windows(2).all(|w| w[0].rows() == 0 || w[0].mul(&w[1]).is_zero());
        sr.check(Check::new("boundary squares to zero", squares_vanish, squares_vanish, true, "exact"));
        if let Some(b) = &self.cfg.expect.morse_betti {
            sr.check(Check::exact("Morse homology ranks", trim(&mc.homology.betti), trim(b)));
        }
        self.morse = Some(mc);
        Ok(())
    }

    fn conley_params(&self) -> Result<ConleyParams, String> {
        let sec = self.cfg.conley.as_ref().ok_or("missing [conley] table")?;
        let crit = self.crit();
        let eps = sec.eps.unwrap_or_else(|| default_eps(crit));
        let tau = match sec.tau {
            Some(t) => t,
            None => default_tau(&self.flow, crit, eps, sec.probe).map_err(|e| e.to_string())?,
        };
        Ok(ConleyParams { eps, tau })
    }

    fn conley(&mut self, sr: &mut StageReport) -> StageResult {
        let sec = self.cfg.conley.clone().ok_or("missing [conley] table")?;
        let params = self.conley_params()?;
        sr.put("eps", params.eps);
        sr.put("tau", params.tau);
        let crit = self.crit().clone();
        let state = if let Some(g) = &sec.grid {
            let grid = g.build().map_err(|e| e.to_string())?;
            let (pairs, masks, rep) = match build_disjoint_pairs(self.flow.clone(), &crit, params, &grid, sec.max_retries) {
                Ok(v) => v,
                Err(e @ conley_core::conley::ConleyError::DisjointnessFailure { .. }) => {
                    sr.check(Check::new("pairwise disjoint N sets", false, e.to_string(), "no overlap", "exact"));
                    return Ok(());
                }
                Err(e) => return Err(e.to_string()),
            };
            sr.check(Check::new("pairwise disjoint N sets", rep.disjoint(), &rep.overlaps, Vec::<u8>::new(), "exact"));
            sr.put("retries", rep.retries);
            sr.put("final_params", rep.final_params);
            let mut rows = Vec::new();
            let mut betti = Vec::new();
            fs::create_dir_all(self.out.join("masks")).map_err(|e| e.to_string())?;
            for m in &masks {
                let k = crit.points[m.point].morse_index;
                let h = relative_homology(&CubicalPair::new(m.n.clone(), m.l.clone()).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
                sr.check(Check::new(&format!("H(N, L) of point {} is a {k}-sphere", m.point), h.is_sphere_like(k), &h.betti, k, "exact"));
                if m.errors > 0 {
                    sr.warnings.push(format!("point {}: {} cells failed to classify", m.point, m.errors));
                }
                self.mask(sr, &format!("masks/n_{}.pbm", m.point), &m.n)?;
                self.mask(sr, &format!("masks/l_{}.pbm", m.point), &m.l)?;
                rows.push(vec![m.point.to_string(), k.to_string(), m.n.count().to_string(), m.l.count().to_string(), join(&h.betti)]);
                betti.push(h.betti.clone());
            }
            self.csv(sr, "conley_pairs.csv", &["position", "morse_index", "n_cells", "l_cells", "betti"], &rows)?;
            sr.put("pair_betti", &betti);
            let final_params = rep.final_params.unwrap_or(params);
            ConleyState { params: final_params, pairs, masks: Some((grid, masks)) }
        } else {
            let mut rng = sampling::rng(self.cfg.seed);
            let n = self.flow.system().dim();
            let mut states = Vec::new();
            for p in &crit.points {
                for _ in 0..sec.samples_per_point {
                    states.push(&p.state + DVector::from_fn(n, |_, _| sec.sample_spread * sampling::gaussian(&mut rng)));
                }
            }
            let radius = separation_radius(&self.flow, &crit, 1.0);
            sr.put("ball_radius", radius);
            match build_disjoint_pairs_sampled(self.flow.clone(), &crit, params, radius, &states, sec.max_retries) {
                Ok((pairs, rep)) => {
                    sr.check(Check::new("pairwise disjoint N sets (sampled)", rep.disjoint(), &rep.overlaps, Vec::<u8>::new(), "exact"));
                    sr.put("samples", rep.checked);
                    ConleyState { params: rep.final_params.unwrap_or(params), pairs, masks: None }
                }
                Err(e) => {
                    sr.check(Check::new("pairwise disjoint N sets (sampled)", false, e.to_string(), "no overlap", "exact"));
                    return Ok(());
                }
            }
        };
        if let (Some(delta), Some(&point)) = (sec.shrink_delta, crit.indices_of(1).first()) {
            let rep = shrink_into_ball(self.flow.clone(), &crit, point, state.params, delta, 8).map_err(|e| e.to_string())?;
            let radius = rep.rounds.last().map_or(f64::INFINITY, |r| r.radius);
            sr.check(Check::new("shrunken N inside the delta ball", rep.inside, radius, format!("< {delta}"), format!("{delta:e}")));
            sr.put("shrink", &rep);
        }
        self.conley = Some(state);
        Ok(())
    }

    fn filtration(&mut self, sr: &mut StageReport) -> StageResult {
        let t_max = self.cfg.filtration.as_ref().map_or(200.0, |f| f.t_max);
        let state = self.conley.as_ref().ok_or("conley stage produced no pairs")?;
        let (grid, masks) = state.masks.as_ref().ok_or("the filtration needs rasterized pairs")?;
        let crit = self.crit();
        let samples = FiltrationSamples::from_grid(&self.flow, crit, &state.pairs, masks, grid).map_err(|e| e.to_string())?;
        let filt = build_filtration(self.flow.clone(), crit, state.pairs.clone(), &samples, t_max).map_err(|e| e.to_string())?;
        let grid = grid.clone();
        let (fm, errors) = filt.rasterize(&grid);
        if errors > 0 {
            sr.warnings.push(format!("{errors} cells failed to classify"));
        }
        let nested = Filtration::check_nesting(&fm);
        sr.check(Check::new("nested levels", nested.is_ok(), nested.err().map(|e| e.to_string()), Option::<String>::None, "exact"));
        let mut rows = Vec::new();
        for (k, m) in fm.iter().enumerate() {
            let file = format!("masks/f_{k}.pbm");
            self.mask(sr, &file, m)?;
            let cert = &filt.certificates[k];
            rows.push(vec![k.to_string(), fmt(cert.time), m.count().to_string(), cert.samples.to_string(), cert.attempts.to_string(), file]);
        }
        self.csv(sr, "filtration_levels.csv", &["level", "t_k", "cells", "samples", "attempts", "mask"], &rows)?;
        sr.put("times", &filt.times);
        sr.put("cells", fm.iter().map(|m| m.count()).collect::<Vec<_>>());
        let cellular = triple_boundary(&fm);
        match &cellular {
            Ok(cc) => {
                let off = cc.off_diagonal();
                sr.check(Check::new("relative homology concentrated in degree k", off.is_empty(), &off, Vec::<u8>::new(), "exact"));
                let counts = crit.counts();
                sr.check(Check::exact("rank H_k(F_k, F_k-1) = #Crit_k", cc.ranks.clone(), counts));
                sr.put("ranks", &cc.ranks);
                sr.put("cellular_boundaries", cc.boundaries.iter().map(|b| b.to_rows()).collect::<Vec<_>>());
                sr.put("level_homology", &cc.level_homology);
            }
            Err(e) => return Err(e.to_string()),
        }
        self.filtration = Some(FiltrationState { masks: fm, cellular, grid });
        Ok(())
    }

    fn homology(&mut self, sr: &mut StageReport) -> StageResult {
        let fs = self.filtration.as_ref().ok_or("filtration stage produced no masks")?;
        let mc = self.morse.as_ref().ok_or("morse stage produced no complex")?;
        let cc = fs.cellular.as_ref().map_err(|e| e.to_string())?;
        match compare_complexes(cc, &mc.counts(), &mc.boundaries, &mc.homology) {
            Ok(iso) => {
                sr.check(Check::new("cellular boundary matches Morse boundary", iso.matched(), &iso, "signed permutation", "exact"));
                sr.put("iso", &iso);
            }
            Err(e @ HomologyError::NotAMorseFiltration { .. }) => {
                sr.check(Check::new("cellular boundary matches Morse boundary", false, e.to_string(), "signed permutation", "exact"));
            }
            Err(e) => return Err(e.to_string()),
        }
        let top = fs.masks.last().ok_or("empty filtration")?;
        let h_top = homology(top).map_err(|e| e.to_string())?;
        let sys = self.flow.system();
        let level = self.cfg.level;
        let sub = Mask::from_fn(&fs.grid, |p| sys.action(p).map_or(false, |s| s < level));
        let h_sub = homology(&sub).map_err(|e| e.to_string())?;
        sr.check(Check::exact("H(F_top) = H(sublevel set)", trim(&h_top.betti), trim(&h_sub.betti)));
        sr.check(Check::exact("cellular homology = H(sublevel set)", trim(&cc.homology.betti), trim(&h_sub.betti)));
        sr.check(Check::exact("Morse homology = H(sublevel set)", trim(&mc.homology.betti), trim(&h_sub.betti)));
        if let Some(b) = &self.cfg.expect.sublevel_betti {
            sr.check(Check::exact("sublevel homology ranks", trim(&h_sub.betti), trim(b)));
        }
        let rows: Vec<Vec<String>> = [("filtration_top", &h_top), ("sublevel", &h_sub), ("cellular", &cc.homology), ("morse", &mc.homology)]
            .iter()
            .flat_map(|(name, h)| {
                h.betti.iter().enumerate().map(move |(m, b)| vec![name.to_string(), m.to_string(), b.to_string(), join(&h.torsion(m))])
            })
            .collect();
        self.csv(sr, "homology.csv", &["object", "degree", "betti", "torsion"], &rows)?;
        sr.put("filtration_top", &h_top);
        sr.put("sublevel", &h_sub);
        Ok(())
    }

    fn lambda(&mut self, sr: &mut StageReport) -> StageResult {
        let sec = self.cfg.lambda.clone().ok_or("missing [lambda] table")?;
        let crit = self.crit().clone();
        let point = match sec.point {
            Some(p) if p < crit.len() => p,
            Some(p) => return Err(format!("lambda.point {p} is out of range")),
            None => *crit.indices_of(1).first().ok_or("no index-1 critical point for the chart")?,
        };
        let eps = match sec.eps {
            Some(e) => e,
            None => match &self.conley {
                Some(c) => c.params.eps,
                None => default_eps(&crit),
            },
        };
        let cfg = ChartConfig { rho0: None, mu_fraction: sec.mu_fraction, t0: 1.0, step: sec.step, plus_radius: sec.plus_radius, plus_points: sec.plus_points };
        let chart = LocalChart::new(self.flow.system_arc(), &crit, point, &cfg).map_err(|e| e.to_string())?;
        let seeds = unstable_sphere_seed(&self.flow, &crit, &crit.points[point], eps, 1e-4).map_err(|e| e.to_string())?;
        let gamma = chart.minus_coords(&seeds.iter().find(|s| s.sign > 0).ok_or("no descending-sphere seed")?.state);
        let threshold = chart.mu / 16.0;
        sr.put("point", point);
        sr.put("eps", eps);
        sr.put("mu", chart.mu);
        sr.put("spectral_gap", chart.gap);
        sr.put("gamma", gamma.as_slice());

        let plus = chart.plus_grid().points;
        let rep = verify_lambda_estimates(&chart, &gamma, &sec.t_list, &plus).map_err(|e| e.to_string())?;
        sr.check(Check::at_least("graph-map decay rate", rep.fitted_rate.unwrap_or(f64::INFINITY), threshold));
        sr.check(Check::at_most("graph Lipschitz factor", rep.max_lipschitz, 2.0));
        sr.check(Check::new("monotone deviations", rep.monotone, &rep.deviations, "non-increasing", format!("{NOISE_FLOOR:e}")));
        let rows: Vec<Vec<String>> = rep
            .t_list
            .iter()
            .zip(&rep.deviations)
            .zip(&rep.differential_deviations)
            .map(|((t, d), dd)| vec![fmt(*t), fmt(*d), fmt(*dd), rep.fitted_rate.map(fmt).unwrap_or_default()])
            .collect();
        self.csv(sr, "lambda.csv", &["t", "sup_deviation", "sup_differential_deviation", "fitted_rate"], &rows)?;
        sr.put("lambda", &rep);

        let graph = sample_graph_map(&chart, sec.leaf_t, &gamma, &plus).map_err(|e| e.to_string())?;
        if graph.failures > 0 {
            sr.warnings.push(format!("{} graph samples failed", graph.failures));
        }
        let k = chart.index();
        let m = chart.plus_dim();
        let mut header = vec!["t".to_string()];
        header.extend((0..k).map(|i| format!("gamma{i}")));
        header.extend((0..m).map(|i| format!("zp{i}")));
        header.extend((0..k).map(|i| format!("g{i}")));
        header.push("residual".into());
        let mut rows = Vec::new();
        for (i, q) in graph.points.iter().enumerate() {
            let Some(g) = &graph.values[i] else { continue };
            let mut r = vec![fmt(sec.leaf_t)];
            r.extend(gamma.iter().map(|&x| fmt(x)));
            r.extend(q.iter().map(|&x| fmt(x)));
            r.extend(g.iter().map(|&x| fmt(x)));
            r.push(fmt(graph.residuals[i]));
            rows.push(r);
        }
        self.csv(sr, "graph_samples.csv", &header, &rows)?;

        let mut dists = Vec::new();
        for &t in &sec.t_list {
            let leaf = sample_leaf(&chart, eps, &gamma, t).map_err(|e| e.to_string())?;
            dists.push(leaf_distance_to_disk(&chart, &leaf).map_err(|e| e.to_string())?);
        }
        let leaf_rate = fit_decay_rate(&sec.t_list, &dists, NOISE_FLOOR);
        sr.check(Check::at_least("leaf-to-disk decay rate", leaf_rate.unwrap_or(f64::INFINITY), threshold));
        let rows: Vec<Vec<String>> = sec.t_list.iter().zip(&dists).map(|(t, d)| vec![fmt(*t), fmt(*d), leaf_rate.map(fmt).unwrap_or_default()]).collect();
        self.csv(sr, "leaf_distance.csv", &["t", "distance", "fitted_rate"], &rows)?;

        let leaf = sample_leaf(&chart, eps, &gamma, sec.leaf_t).map_err(|e| e.to_string())?;
        let sigma = 0.5 * (sec.leaf_t - chart.t0);
        let mut phi_defect: f64 = 0.0;
        let mut theta_defect: f64 = 0.0;
        let mut tracks = Vec::new();
        for (j, z) in leaf.states.iter().enumerate().step_by((leaf.states.len() / 10).max(1)) {
            let moved = chart.flow(z, sigma).map_err(|e| e.to_string())?;
            phi_defect = phi_defect.max(leaf_defect(&chart, sec.leaf_t - sigma, &gamma, &moved).map_err(|e| e.to_string())?);
            for step in 0..=10 {
                let s = sigma * step as f64 / 10.0;
                let w = induced_semiflow_step(&chart, sec.leaf_t, &gamma, z, s).map_err(|e| e.to_string())?;
                if step == 10 {
                    theta_defect = theta_defect.max(leaf_defect(&chart, sec.leaf_t, &gamma, &w).map_err(|e| e.to_string())?);
                }
                let mut r = vec![j.to_string(), fmt(s), fmt(self.flow.system().action(&w).map_err(|e| e.to_string())?)];
                r.extend(w.iter().map(|&x| fmt(x)));
                tracks.push(r);
            }
        }
        sr.check(Check::at_most("flow leaf compatibility", phi_defect, LEAF_TOL));
        sr.check(Check::at_most("induced flow leaf compatibility", theta_defect, LEAF_TOL));
        let n = self.flow.system().dim();
        let mut header = vec!["track".to_string(), "s".into(), "action".into()];
        header.extend((0..n).map(|i| format!("z{i}")));
        self.csv(sr, "leaf_tracks.csv", &header, &tracks)?;

        let alpha = compute_alpha(&chart, eps, sec.alpha_grid).map_err(|e| e.to_string())?;
        let mut dirs = Vec::new();
        for i in 0..m.min(4) {
            for s in [1.0, -1.0] {
                dirs.push(DVector::from_fn(m, |r, _| if r == i { s } else { 0.0 }));
            }
        }
        let mut samples = Vec::new();
        let mut t = chart.t0 + 0.5;
        while samples.len() < sec.decrease_samples && t < chart.t0 + 0.5 + 0.5 * sec.decrease_samples as f64 {
            for sign in [1.0, -1.0] {
                let g = &gamma * sign;
                for z in leaf_boundary_samples(&chart, eps, &g, t, &dirs, 1e-3).map_err(|e| e.to_string())? {
                    samples.push((t, g.clone(), z));
                }
            }
            t += 0.5;
        }
        samples.truncate(sec.decrease_samples);
        let dec = verify_action_decrease(&chart, alpha, &samples, DECREASE_DS).map_err(|e| e.to_string())?;
        sr.check(Check::exact("leaf-boundary sample count", samples.len(), sec.decrease_samples));
        sr.check(Check::new("action decrease along the induced flow", dec.passed, dec.worst, format!("<= {:e}", dec.bound + dec.slack), format!("{:e}", dec.slack)));
        sr.put("alpha", alpha);
        sr.put("decrease", &dec);
        let rows: Vec<Vec<String>> = samples.iter().zip(&dec.derivatives).map(|((t, g, _), d)| vec![fmt(*t), fmt(g[0]), fmt(*d), fmt(dec.bound)]).collect();
        self.csv(sr, "action_decrease.csv", &["t", "gamma0", "derivative", "bound"], &rows)?;

        if n <= 2 {
            let r = chart.rho0;
            let grid = Grid::centered(chart.point.state.as_slice(), &vec![r; n], r / 20.0).map_err(|e| e.to_string())?;
            let c = chart.point.action;
            let sys = self.flow.system();
            let mut rows = Vec::new();
            for i in 0..grid.len() {
                let p = grid.cell_center(i);
                if (&p - &chart.point.state).norm() > r {
                    continue;
                }
                let s = sys.action(&p).map_err(|e| e.to_string())?;
                let g = sys.l2_norm(&sys.gradient(&p).map_err(|e| e.to_string())?);
                let mut row: Vec<String> = p.iter().map(|&x| fmt(x)).collect();
                row.extend([fmt(s), fmt(g), u8::from(s <= c + 0.5 * eps).to_string()]);
                rows.push(row);
            }
            let mut header: Vec<String> = (0..n).map(|i| format!("z{i}")).collect();
            header.extend(["action".into(), "grad_norm".into(), "in_w".into()]);
            self.csv(sr, "w_neighborhood.csv", &header, &rows)?;
        }
        Ok(())
    }

    fn csv<S: AsRef<str>>(&self, sr: &mut StageReport, name: &str, header: &[S], rows: &[Vec<String>]) -> StageResult {
        let path = self.out.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        w.write_record(header.iter().map(|h| h.as_ref())).map_err(|e| e.to_string())?;
        for r in rows {
            w.write_record(r).map_err(|e| e.to_string())?;
        }
        w.flush().map_err(|e| e.to_string())?;
        sr.artifacts.push(name.into());
        Ok(())
    }

    fn mask(&self, sr: &mut StageReport, name: &str, m: &Mask) -> StageResult {
        let path = self.out.join(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| e.to_string())?;
        }
        let f = fs::File::create(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        m.write_pbm(BufWriter::new(f)).map_err(|e| e.to_string())?;
        sr.artifacts.push(name.into());
        Ok(())
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.12e}")
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn trim(b: &[usize]) -> Vec<usize> {
    let mut v = b.to_vec();
    while v.last() == Some(&0) {
        v.pop();
    }
    v
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
