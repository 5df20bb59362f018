use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use dode::oracle::{make_dataset, write_dataset, SimMode, Template};
use dode::pipeline::{parse_overrides, report, Pipeline, PipelineConfig, Stage};
use dode::solver::{benchmark_solvers, save_benchmark, SpgdConfig};

#[derive(Parser)]
#[command(
    name = "dode",
    version,
    about = "Multi-day dynamic OD demand estimation"
)]
struct Cli {
    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    /// Pipeline configuration file.
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides such as `--solver.epochs 100` or `--choice.theta=0.02`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, deduplicate and impute counts and speeds.
    Ingest(StageArgs),
    /// Build per-day DAR matrices.
    Dar(StageArgs),
    /// Cluster days into composite traffic patterns.
    Cluster(StageArgs),
    /// Compute route-choice portions per pattern.
    Choice(StageArgs),
    /// Build per-day assignment matrices.
    Assemble(StageArgs),
    /// Solve for per-day OD demand.
    Estimate(StageArgs),
    /// Estimate, then write fit and stability metrics.
    Evaluate(StageArgs),
    /// Aggregate existing OD estimates.
    Report(StageArgs),
    /// Every stage, ending with the report.
    Run(StageArgs),
    /// Write a synthetic dataset with known demand and a matching config.
    Simulate(SimulateArgs),
    /// Time the solvers on random sparse systems.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// two-link, diamond or nine-zone-corridor.
    #[arg(long)]
    template: String,
    #[arg(long, default_value_t = 30)]
    days: usize,
    #[arg(long, default_value = "2024-03-04")]
    start: NaiveDate,
    /// Vehicles simulated per unit of demand; counts are divided by it.
    #[arg(long, default_value_t = 10.0)]
    multiplier: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Draw vehicle departure times at random instead of evenly.
    #[arg(long)]
    stochastic: bool,
    /// Comma-separated link ids with count sensors (all links by default).
    #[arg(long, value_delimiter = ',')]
    observed: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "1000,2000,4000")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    off_diag: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    /// Wall-clock budget for the active-set solver, in seconds.
    #[arg(long)]
    budget_s: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

fn load(args: &StageArgs) -> dode::Result<PipelineConfig> {
    let overrides = parse_overrides(&args.overrides)?;
    PipelineConfig::load(&args.config, &overrides)
}

fn report_only(args: &StageArgs) -> dode::Result<()> {
    let cfg = load(args)?;
    cfg.validate()?;
    let summary = report::build_report(&cfg.output.dir, &cfg.report)?;
    println!(
        "report over {} days written to {}",
        summary.days,
        cfg.output.dir.join("report").display()
    );
    Ok(())
}

fn run_stage(args: &StageArgs, stage: Stage) -> dode::Result<()> {
    let cfg = load(args)?;
    let pipeline = Pipeline::new(cfg)?;
    let outcome = pipeline.run(stage)?;
    let p = &outcome.prepared;
    println!(
        "{}: {} days, {} OD pairs, {} paths",
        stage.name(),
        p.dates.len(),
        p.network.num_ods(),
        p.paths.len()
    );
    if let Some(reg) = &outcome.registry {
        println!("patterns: {}", reg.patterns.len());
    }
    if let Some(q) = &outcome.quality {
        match q.mean_r2 {
            Some(r2) => println!("mean link-flow R2: {r2:.6}"),
            None => println!("mean link-flow R2: undefined"),
        }
        if let Some(t) = &q.truth {
            println!(
                "truth: {}/{} entries above {} within {:.0}% (worst {:.4})",
                t.within_tolerance,
                t.entries,
                t.threshold,
                100.0 * t.tolerance,
                t.worst_relative_error
            );
        }
    }
    println!("outputs in {}", pipeline.config().output.dir.display());
    Ok(())
}

fn simulate(args: &SimulateArgs) -> dode::Result<()> {
    let template: Template = args.template.parse()?;
    if args.days == 0 {
        return Err(dode::Error::Config("--days must be at least 1".into()));
    }
    if !(args.multiplier >= 1.0) {
        return Err(dode::Error::Config(
            "--multiplier must be at least 1".into(),
        ));
    }
    let ds = make_dataset(template, args.days, args.start, args.multiplier, args.seed)?;
    let observed = (!args.observed.is_empty()).then_some(args.observed.as_slice());
    let mode = if args.stochastic {
        SimMode::Stochastic
    } else {
        SimMode::Deterministic
    };
    write_dataset(&args.out, &ds, observed, mode, args.seed)?;

    let cfg = PipelineConfig::synthetic(template, ds.grid, args.days);
    std::fs::write(args.out.join("config.toml"), cfg.to_toml()?)?;
    println!(
        "{} days of {} written to {} (run: dode run --config {})",
        args.days,
        template.name(),
        args.out.display(),
        Path::new(&args.out).join("config.toml").display()
    );
    Ok(())
}

fn bench(args: &BenchArgs) -> dode::Result<()> {
    let cfg = SpgdConfig {
        epochs: args.epochs,
        seed: args.seed,
        ..Default::default()
    };
    let budget = args.budget_s.map(Duration::from_secs_f64);
    let rows = benchmark_solvers(&args.dims, args.off_diag, args.seed, &cfg, budget)?;
    for r in &rows {
        let obj = r
            .objective
            .map(|o| format!("{o:.6e}"))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:>7} {:<20} {:>10.3}s objective {obj}{}",
            r.n,
            r.method,
            r.seconds,
            if r.completed {
                ""
            } else {
                " (budget exceeded)"
            }
        );
    }
    save_benchmark(&args.out, &rows)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .init();
    let result = match &cli.command {
        Command::Ingest(a) => run_stage(a, Stage::Ingest),
        Command::Dar(a) => run_stage(a, Stage::Dar),
        Command::Cluster(a) => run_stage(a, Stage::Cluster),
        Command::Choice(a) => run_stage(a, Stage::Choice),
        Command::Assemble(a) => run_stage(a, Stage::Assemble),
        Command::Estimate(a) => run_stage(a, Stage::Estimate),
        Command::Evaluate(a) => run_stage(a, Stage::Evaluate),
        Command::Report(a) => report_only(a),
        Command::Run(a) => run_stage(a, Stage::Report),
        Command::Simulate(a) => simulate(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
