//! Plot-ready tables assembled from a finished run directory.

use std::fs;
use std::path::Path;

use conley_core::homology::Mask;
use serde::{Deserialize, Serialize};

use crate::report::{RunReport, Status};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Figure {
    /// Filtration levels `F_0 ⊂ F_1 ⊂ …`: level, T_k, cells, mask file.
    Filtration,
    /// Conley set cross-sections: pair, cell center, membership in L.
    ConleySections,
    /// Graph-map convergence: T, sup-deviation, fitted rate.
    LambdaConvergence,
    /// Induced-flow leaf tracks: track, s, action, state.
    LeafTracks,
    /// The neighborhood W on the chart ball: state, action, gradient norm, membership.
    WNeighborhood,
}

impl Figure {
    pub const ALL: [Figure; 5] = [Figure::Filtration, Figure::ConleySections, Figure::LambdaConvergence, Figure::LeafTracks, Figure::WNeighborhood];

    pub fn stage(self) -> &'static str {
        match self {
            Figure::Filtration => "filtration",
            Figure::ConleySections => "conley",
            Figure::LambdaConvergence | Figure::LeafTracks | Figure::WNeighborhood => "lambda",
        }
    }

    pub fn file(self) -> &'static str {
        match self {
            Figure::Filtration => "fig_filtration.csv",
            Figure::ConleySections => "fig_conley_sections.csv",
            Figure::LambdaConvergence => "fig_lambda_convergence.csv",
            Figure::LeafTracks => "fig_leaf_tracks.csv",
            Figure::WNeighborhood => "fig_w_neighborhood.csv",
        }
    }
}

/// Writes the requested figures (all available ones when `figures` is empty)
/// under `<run>/plots` and returns their paths relative to the run directory.
pub fn emit_plot_data(run: &Path, figures: &[Figure]) -> Result<Vec<String>, CliError> {
    let text = fs::read_to_string(run.join("report.json")).map_err(|_| CliError::MissingStage(format!("no report.json in {}", run.display())))?;
    let report: RunReport = serde_json::from_str(&text).map_err(|e| CliError::Io(format!("report.json: {e}")))?;
    let done = |stage: &str| report.stage(stage).is_some_and(|s| s.status != Status::Error);
    let wanted: Vec<Figure> = if figures.is_empty() {
        Figure::ALL.into_iter().filter(|f| done(f.stage()) && source_exists(run, *f)).collect()
    } else {
        for f in figures {
            if !done(f.stage()) || !source_exists(run, *f) {
                return Err(CliError::MissingStage(format!("{} needs the {} stage", f.file(), f.stage())));
            }
        }
        figures.to_vec()
    };
    if wanted.is_empty() {
        return Err(CliError::MissingStage("the run has no stage with plot data".into()));
    }
    let dir = run.join("plots");
    fs::create_dir_all(&dir).map_err(|e| CliError::Io(e.to_string()))?;
    let mut out = Vec::new();
    for f in wanted {
        let path = dir.join(f.file());
        match f {
            Figure::Filtration => copy_columns(&run.join("filtration_levels.csv"), &path, &["level", "t_k", "cells", "mask"])?,
            Figure::ConleySections => conley_sections(run, &path)?,
            Figure::LambdaConvergence => copy_columns(&run.join("lambda.csv"), &path, &["t", "sup_deviation", "fitted_rate"])?,
            Figure::LeafTracks => copy(&run.join("leaf_tracks.csv"), &path)?,
            Figure::WNeighborhood => copy(&run.join("w_neighborhood.csv"), &path)?,
        }
        out.push(format!("plots/{}", f.file()));
    }
    Ok(out)
}

fn source_exists(run: &Path, f: Figure) -> bool {
    let name = match f {
        Figure::Filtration => "filtration_levels.csv",
        Figure::ConleySections => "conley_pairs.csv",
        Figure::LambdaConvergence => "lambda.csv",
        Figure::LeafTracks => "leaf_tracks.csv",
        Figure::WNeighborhood => "w_neighborhood.csv",
    };
    run.join(name).exists()
}

fn copy(src: &Path, dst: &Path) -> Result<(), CliError> {
    fs::copy(src, dst).map(|_| ()).map_err(|e| CliError::Io(format!("{}: {e}", src.display())))
}

fn copy_columns(src: &Path, dst: &Path, columns: &[&str]) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Io(format!("{}: {e}", src.display()));
    let mut r = csv::Reader::from_path(src).map_err(io)?;
    let header = r.headers().map_err(io)?.clone();
    let idx: Vec<usize> = columns
        .iter()
        .map(|c| header.iter().position(|h| h == *c).ok_or_else(|| CliError::Io(format!("{}: no column {c}", src.display()))))
        .collect::<Result<_, _>>()?;
    let mut w = csv::Writer::from_path(dst).map_err(io)?;
    w.write_record(columns).map_err(io)?;
    for rec in r.records() {
        let rec = rec.map_err(io)?;
        w.write_record(idx.iter().map(|&i| &rec[i])).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

/// Cells of each `N` mask; for grids above two dimensions only the slice
/// through the middle of the remaining axes.
fn conley_sections(run: &Path, dst: &Path) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Io(e.to_string());
    let mut r = csv::Reader::from_path(run.join("conley_pairs.csv")).map_err(io)?;
    let mut w = csv::Writer::from_path(dst).map_err(io)?;
    w.write_record(["position", "x", "y", "in_l"]).map_err(io)?;
    for rec in r.records() {
        let rec = rec.map_err(io)?;
        let pos = &rec[0];
        let read = |name: String| -> Result<Mask, CliError> {
            let f = fs::File::open(run.join(&name)).map_err(|e| CliError::Io(format!("{name}: {e}")))?;
            Mask::read_pbm(f).map_err(|e| CliError::Io(format!("{name}: {e}")))
        };
        let n = read(format!("masks/n_{pos}.pbm"))?;
        let l = read(format!("masks/l_{pos}.pbm"))?;
        let g = &n.grid;
        for i in (0..g.len()).filter(|&i| n.bits[i]) {
            let idx = g.multi_index(i);
            if idx.iter().zip(&g.shape).skip(2).any(|(&m, &s)| m != s / 2) {
                continue;
            }
            let c = g.cell_center(i);
            let y = if g.dim() > 1 { format!("{:.12e}", c[1]) } else { String::new() };
            w.write_record([pos.to_string(), format!("{:.12e}", c[0]), y, u8::from(l.bits[i]).to_string()]).map_err(io)?;
        }
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}
