use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use aif_core::harness::{
    inspect_model, run_experiment, run_suite, summary_csv, ExperimentConfig, ExperimentResult, Mode, SuiteConfig,
};

#[derive(Parser)]
#[command(name = "aif", version, about = "Active inference agent for SLO-driven stream processing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment against the simulator.
    Run(RunArgs),
    /// Run many experiments and write a summary table.
    Suite(SuiteArgs),
    /// Describe a saved model: variables, edges and SLO probabilities.
    Inspect(InspectArgs),
    /// Feed a recorded metrics trace to a fresh agent.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct Overrides {
    /// Output directory for artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cycles: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct SuiteArgs {
    /// Suite config (JSON); defaults to the twelve calibrated scenarios.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    /// Worker threads.
    #[arg(long)]
    parallel: Option<usize>,
}

#[derive(Args)]
struct InspectArgs {
    /// Model JSON written by a run.
    model: PathBuf,
    /// Also write the DAG as DOT to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Metrics trace: `timestamp_ms`, parameter columns, metric columns.
    trace: PathBuf,
    /// Experiment config naming the service and device of the trace.
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_experiment(path: &Path, o: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_json(&read(path)?, &path.display().to_string())?;
    if let Some(out) = &o.out {
        cfg.out = Some(out.clone());
    }
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    if let Some(cycles) = o.cycles {
        cfg.cycles = cycles;
    }
    Ok(cfg)
}

fn report(r: &ExperimentResult) {
    println!("{}", r.config.label());
    println!("  chosen:            {}", r.chosen);
    println!("  final fulfillment: {:.3}", r.final_fulfillment);
    match r.converged_at {
        Some(c) => println!("  converged at:      cycle {c}"),
        None => println!("  converged at:      not converged"),
    }
    if let (Some((opt, f)), Some(m)) = (&r.optimum, r.optimal_match()) {
        println!("  true optimum:      {opt} ({f:.3}), match: {m}");
    }
    if let Some(dir) = &r.config.out {
        println!("  artifacts:         {} files in {}", r.files.len(), dir.display());
    }
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = load_experiment(&args.config, &args.overrides)?;
    if matches!(cfg.mode, Mode::Replay { .. }) {
        bail!("{} is a replay config; use `aif replay`", args.config.display());
    }
    report(&run_experiment(&cfg)?);
    Ok(())
}

fn replay(args: ReplayArgs) -> Result<()> {
    let mut cfg = load_experiment(&args.config, &args.overrides)?;
    cfg.mode = Mode::Replay { trace: args.trace };
    report(&run_experiment(&cfg)?);
    Ok(())
}

fn suite(args: SuiteArgs) -> Result<bool> {
    let mut suite = match &args.config {
        Some(p) => SuiteConfig::from_json(&read(p)?, &p.display().to_string())?,
        None => SuiteConfig::calibrated(&[0], 40),
    };
    let o = &args.overrides;
    if let Some(g) = suite.grid.as_mut() {
        if let Some(seed) = o.seed {
            g.seeds = vec![seed];
        }
        if let Some(cycles) = o.cycles {
            g.cycles = cycles;
        }
    }
    let mut configs = suite.expand();
    for c in configs.iter_mut().take(suite.experiments.len()) {
        if let Some(seed) = o.seed {
            c.seed = seed;
        }
        if let Some(cycles) = o.cycles {
            c.cycles = cycles;
        }
    }
    let parallelism = args
        .parallel
        .or(suite.parallelism)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from));
    let report = run_suite(&configs, parallelism, o.out.as_deref())?;
    match &o.out {
        Some(dir) => println!("wrote {}", dir.join("summary.csv").display()),
        None => print!("{}", summary_csv(&report.rows)?),
    }
    let mut ok = true;
    for (row, err) in report.failures() {
        eprintln!("failed: {} x {} (seed {}): {err}", row.service, row.device, row.seed);
        ok = false;
    }
    Ok(ok)
}

fn inspect(args: InspectArgs) -> Result<()> {
    let report = inspect_model(&args.model)?;
    print!("{}", report.text);
    match &args.out {
        Some(p) => fs::write(p, &report.dot).with_context(|| format!("writing {}", p.display()))?,
        None => print!("\n{}", report.dot),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => run(a).map(|()| true),
        Command::Suite(a) => suite(a),
        Command::Inspect(a) => inspect(a).map(|()| true),
        Command::Replay(a) => replay(a).map(|()| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
