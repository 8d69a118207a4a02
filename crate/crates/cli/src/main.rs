use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, CommandFactory, Parser, Subcommand};
use explain_agree::agreement::Metric;
use explain_agree::attribution::Method;
use explain_agree::dataset::synthetic_blobs;
use explain_agree::evaluation::{CorrelationReport, RhoStatus};
use explain_agree::experiment::{emit_outputs, run_experiment, run_stage, ExperimentConfig, Stage};
use explain_agree::Error;

/// Measure how much feature-attribution methods agree with each other across
/// training epochs, and how that agreement tracks test AUC.
#[derive(Parser)]
#[command(name = "explain-agree", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the whole pipeline.
    Run(StageArgs),
    /// Train and save per-epoch snapshots.
    Train(StageArgs),
    /// Explain test instances at every saved snapshot.
    Explain(StageArgs),
    /// Compute pairwise agreement from saved attributions.
    Agree(StageArgs),
    /// Correlate mean agreement with test AUC across epochs.
    Correlate(StageArgs),
    /// Write a synthetic two-class dataset as CSV.
    Synth(SynthArgs),
}

#[derive(Args)]
struct StageArgs {
    /// Experiment config (JSON).
    config: PathBuf,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: config's output_dir, else ./out].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restrict to a single k.
    #[arg(long)]
    k: Option<usize>,
    /// Restrict to a single metric (FA, SA, RA, SRA).
    #[arg(long)]
    metric: Option<Metric>,
    /// Comma-separated attribution methods.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// Worker threads for the explain stage.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 400)]
    n: usize,
    #[arg(long, default_value_t = 12)]
    features: usize,
    #[arg(long, default_value_t = 6.0)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Name of the 0/1 label column.
    #[arg(long, default_value = "label")]
    target: String,
    /// Destination CSV file.
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Run(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Run(e)
    }
}

fn load_config(args: &StageArgs) -> Result<(ExperimentConfig, PathBuf), Failure> {
    let mut cfg = match ExperimentConfig::load(&args.config) {
        Ok(cfg) => cfg,
        Err(e @ Error::Json { .. }) => return Err(Failure::Usage(format!("malformed config {}: {e}", args.config.display()))),
        Err(e) => return Err(Failure::Run(e.into())),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(k) = args.k {
        cfg.k_range = Some([k, k]);
    }
    if let Some(m) = args.metric {
        cfg.metrics = vec![m];
    }
    if let Some(methods) = &args.methods {
        cfg.methods = methods.clone();
    }
    if args.threads.is_some() {
        cfg.threads = args.threads;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, out))
}

fn print_correlations(reports: &[CorrelationReport], metric: Option<Metric>, k: Option<usize>) {
    for r in reports {
        if metric.is_some_and(|m| m != r.metric) || k.is_some_and(|k| k != r.k) {
            continue;
        }
        let rho = match (r.status, r.rho) {
            (RhoStatus::Defined, Some(rho)) => format!("rho = {rho:.4}"),
            _ => format!("rho undefined ({})", r.status.as_str()),
        };
        println!("{} k={}: {rho} over {} epochs", r.metric, r.k, r.points.len());
    }
}

fn run_stage_command(stage: Stage, args: &StageArgs) -> Result<(), Failure> {
    let (cfg, out) = load_config(args)?;
    let outcome = run_stage(stage, &cfg, &out).map_err(anyhow::Error::from)?;
    for n in &outcome.notices {
        eprintln!("note: {n}");
    }
    if stage == Stage::Correlate {
        print_correlations(&outcome.correlations, args.metric, args.k);
    }
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn run_all(args: &StageArgs) -> Result<(), Failure> {
    let (cfg, out) = load_config(args)?;
    let report = run_experiment(&cfg).map_err(anyhow::Error::from)?;
    emit_outputs(&report, &out).with_context(|| format!("writing {}", out.display()))?;
    for n in &report.notices {
        eprintln!("note: {n}");
    }
    if let Some(best) = report.best_epoch() {
        let auc = report.epochs.iter().find(|e| e.epoch == best).map(|e| e.test_auc).unwrap_or(f64::NAN);
        println!("best epoch {best}: test AUC {auc:.4}");
    }
    print_correlations(&report.correlations, args.metric, args.k);
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<(), Failure> {
    let d = synthetic_blobs(args.n, args.features, args.separation, args.seed).map_err(anyhow::Error::from)?;
    let bytes = d.to_csv(&args.target).map_err(anyhow::Error::from)?;
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write(&args.out, &bytes)?;
    eprintln!("wrote {} rows x {} features to {}", d.n(), d.k(), args.out.display());
    Ok(())
}

fn write(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run_all(a),
        Command::Train(a) => run_stage_command(Stage::Train, a),
        Command::Explain(a) => run_stage_command(Stage::Explain, a),
        Command::Agree(a) => run_stage_command(Stage::Agree, a),
        Command::Correlate(a) => run_stage_command(Stage::Correlate, a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n");
            eprintln!("{}", Cli::command().render_usage());
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
