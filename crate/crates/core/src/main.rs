use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use projcorr::correction::CorrectionMode;
use projcorr::harness::config::parse_list;
use projcorr::harness::{run, Experiment, ExperimentConfig, RunSummary};
use projcorr::Error;

#[derive(Parser)]
#[command(name = "projcorr", version, about = "Projection correction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write measurements y = Ax + σg for the evaluation images.
    Simulate(Overrides),
    /// Apply the configured reconstructor to stored measurements.
    Reconstruct(Overrides),
    /// Correct stored reconstructions and write metrics.csv.
    Correct(Overrides),
    /// Recompute metrics from stored files.
    Evaluate(Overrides),
    /// Gradient-descent training with per-epoch diagnostics.
    TrainDynamics(Overrides),
    /// Noise sweep with λ selection on a validation split.
    SweepLambda(Overrides),
    /// Operators × reconstructors, before and after correction.
    Bench(Overrides),
}

#[derive(Args)]
struct Overrides {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Operator, e.g. `mask:p=0.5,seed=7` or `blur:sigma_row=3,sigma_col=0.15`.
    #[arg(long)]
    op: Option<String>,
    /// Comma-separated noise levels.
    #[arg(long)]
    sigma: Option<String>,
    /// Comma-separated λ values.
    #[arg(long = "lambda-grid")]
    lambda_grid: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reconstructor, e.g. `pinv`, `tikhonov:alpha=0.01`, `learned:alpha=1e-3`.
    #[arg(long)]
    recon: Option<String>,
    /// `exact` or `regularized`.
    #[arg(long)]
    mode: Option<String>,
}

fn build_config(experiment: Experiment, o: Overrides) -> projcorr::Result<ExperimentConfig> {
    let mut cfg = match &o.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::new(experiment, "out"),
    };
    cfg.experiment = experiment;
    if let Some(op) = o.op {
        cfg.operator = op.parse()?;
    }
    if let Some(s) = o.sigma {
        cfg.noise.sigma = parse_list(&s)?;
    }
    if let Some(g) = o.lambda_grid {
        cfg.correction.lambda_grid = parse_list(&g)?;
    }
    if let Some(seed) = o.seed {
        cfg.base_seed = seed;
    }
    if let Some(out) = o.out {
        cfg.out_dir = out;
    }
    if let Some(r) = o.recon {
        cfg.reconstructor = r.parse()?;
    }
    if let Some(m) = o.mode {
        cfg.correction.mode = match m.as_str() {
            "exact" => CorrectionMode::Exact,
            "regularized" => CorrectionMode::Regularized,
            other => return Err(Error::Parameter(format!("unknown mode {other:?}"))),
        };
    }
    Ok(cfg)
}

fn report(summary: &RunSummary) -> String {
    match summary {
        RunSummary::Simulated(m) => format!("simulated {} images", m.images.len()),
        RunSummary::Reconstructed(paths) => format!("wrote {} reconstructions", paths.len()),
        RunSummary::Metrics(rows) => format!("wrote {} metric rows", rows.len()),
        RunSummary::TrainDynamics(rows) => format!("trained {} epochs", rows.len().saturating_sub(1)),
        RunSummary::Sweep(rows) => format!("wrote {} sweep rows", rows.len()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (experiment, overrides) = match cli.command {
        Command::Simulate(o) => (Experiment::Simulate, o),
        Command::Reconstruct(o) => (Experiment::Reconstruct, o),
        Command::Correct(o) => (Experiment::Correct, o),
        Command::Evaluate(o) => (Experiment::Evaluate, o),
        Command::TrainDynamics(o) => (Experiment::TrainDynamics, o),
        Command::SweepLambda(o) => (Experiment::SweepLambda, o),
        Command::Bench(o) => (Experiment::Bench, o),
    };
    match build_config(experiment, overrides).and_then(|cfg| run(&cfg).map(|s| (cfg, s))) {
        Ok((cfg, summary)) => {
            println!("ok: {} {} -> {}", experiment.name(), report(&summary), cfg.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error: kind={} message={message:?}", e.code());
            ExitCode::FAILURE
        }
    }
}
