use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use conley_cli::config::{ScenarioConfig, Stage};
use conley_cli::pipeline::Runner;
use conley_cli::plot::{emit_plot_data, Figure};
use conley_cli::CliError;

#[derive(Parser)]
#[command(name = "conley-lab", version, about = "Morse filtrations, Conley pairs and graph maps for gradient semi-flows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; default `runs/<scenario name>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps the number of worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Treats numerical warnings as check failures.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Subcommand, Clone)]
enum Command {
    /// Critical points below the action level.
    FindCrit,
    /// Morse complex from connecting orbits.
    Morse,
    /// Conley pairs, their disjointness and relative homology.
    Conley,
    /// Morse filtration and its triple boundary.
    Filtration,
    /// Filtration, Morse and sublevel homology compared.
    Homology,
    /// Graph-map, leaf and induced-flow estimates at one critical point.
    Lambda,
    /// Every stage listed in the scenario's `pipelines`.
    VerifyAll,
    /// Plot tables from a finished run in `--out`.
    PlotData {
        #[arg(long, value_enum)]
        figure: Vec<Figure>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

fn run(cli: &Cli) -> Result<i32, CliError> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().map_err(|e| CliError::Config(e.to_string()))?;
    }
    if let Command::PlotData { figure } = &cli.command {
        let out = cli.out.clone().ok_or_else(|| CliError::Config("plot-data needs --out <run directory>".into()))?;
        for f in emit_plot_data(&out, figure)? {
            println!("{}", out.join(f).display());
        }
        return Ok(0);
    }
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let (name, stages) = match &cli.command {
        Command::FindCrit => ("find-crit", vec![Stage::FindCrit]),
        Command::Morse => ("morse", vec![Stage::Morse]),
        Command::Conley => ("conley", vec![Stage::Conley]),
        Command::Filtration => ("filtration", vec![Stage::Filtration]),
        Command::Homology => ("homology", vec![Stage::Homology]),
        Command::Lambda => ("lambda", vec![Stage::Lambda]),
        Command::VerifyAll => ("verify-all", cfg.pipelines.clone()),
        Command::PlotData { .. } => unreachable!(),
    };
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name));
    let mut runner = Runner::new(cfg, &out, cli.strict)?;
    let report = runner.run(name, &stages)?;
    for s in &report.stages {
        let failed: Vec<&str> = s.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        println!("{:<11} {:?}{}", s.stage, s.status, if failed.is_empty() { String::new() } else { format!("  failed: {}", failed.join("; ")) });
        if let Some(e) = &s.error {
            println!("            {e}");
        }
    }
    println!("report: {}", out.join("report.json").display());
    Ok(report.exit_code())
}
