use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use conley_cli::report::{RunReport, Status};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"))
}

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conley-lab")).args(args).output().unwrap()
}

fn report(dir: &Path) -> RunReport {
    serde_json::from_slice(&std::fs::read(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn find_crit_writes_one_row_per_point() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let res = lab(&["find-crit", "--config", scenario("pendulum").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stdout));
    let mut rdr = csv::Reader::from_path(out.join("critical_points.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    let indices: Vec<&str> = rows.iter().map(|r| &r[1]).collect();
    assert_eq!(indices, vec!["0", "1"]);
    assert!(out.join("timings.json").exists());
    assert_eq!(report(&out).status, Status::Pass);
}

#[test]
fn missing_config_exits_two_without_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let res = lab(&["verify-all", "--config", tmp.path().join("absent.toml").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn malformed_config_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    let text = std::fs::read_to_string(scenario("double_well")).unwrap().replace("seed = ", "sed = ");
    std::fs::write(&path, text).unwrap();
    let out = tmp.path().join("run");
    let res = lab(&["find-crit", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("config error"));
}

#[test]
fn plot_data_without_a_run_is_a_missing_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let res = lab(&["plot-data", "--out", tmp.path().to_str().unwrap(), "--figure", "filtration"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("missing stage"));
}

#[test]
fn double_well_verify_all_passes_and_plots() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let res = lab(&["verify-all", "--config", scenario("double_well").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stdout));
    let rep = report(&out);
    let stages: Vec<&str> = rep.stages.iter().map(|s| s.stage.as_str()).collect();
    assert_eq!(stages, vec!["find-crit", "morse", "conley", "filtration", "homology", "lambda"]);
    assert!(rep.stages.iter().all(|s| s.status == Status::Pass && s.checks.iter().all(|c| c.passed)));
    for f in ["critical_points.csv", "morse_orbits.csv", "conley_pairs.csv", "filtration_levels.csv", "homology.csv", "lambda.csv", "masks/f_0.pbm"] {
        assert!(out.join(f).exists(), "{f}");
    }

    let res = lab(&["plot-data", "--out", out.to_str().unwrap(), "--figure", "filtration", "--figure", "lambda-convergence"]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(out.join("plots/fig_filtration.csv").exists());
    assert!(out.join("plots/fig_lambda_convergence.csv").exists());
}

#[test]
fn seed_override_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let res = lab(&["find-crit", "--config", scenario("torus").to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "42", "--workers", "2"]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stdout));
    let rep = report(&out);
    assert_eq!(rep.seed, 42);
    assert_eq!(rep.command, "find-crit");
}
