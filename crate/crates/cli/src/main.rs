//! `stepsmc`: benchmark harness for particle-based inference-time scaling.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use stepsmc_cli::manifest::{self, Manifest};
use stepsmc_cli::{report, runner, sweep};

#[derive(Parser)]
#[command(
    name = "stepsmc",
    about = "Inference-time scaling of step-wise generators by particle-based Monte Carlo methods",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one benchmark over a dataset or synthetic question set.
    Run(RunArgs),
    /// Run the configured method across a list of budgets.
    Sweep(SweepArgs),
    /// Aggregate record files into a CSV table and optional SVG chart.
    Report(ReportArgs),
}

#[derive(Args, Clone)]
struct CommonOverrides {
    /// Manifest file; defaults apply when omitted.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Method: pf, pg, pt, bon, wbon, dvts, or pass1.
    #[arg(long)]
    method: Option<String>,
    /// Particle count (doubles as n for bon/wbon/dvts).
    #[arg(long)]
    particles: Option<usize>,
    /// Gibbs iterations for pg/pt.
    #[arg(long)]
    iterations: Option<usize>,
    /// Parallel chains for pt.
    #[arg(long)]
    chains: Option<usize>,
    /// Reward aggregation: prod, min, last, or model.
    #[arg(long)]
    aggregation: Option<String>,
    /// Softmax temperature for resampling.
    #[arg(long = "softmax-temp")]
    softmax_temp: Option<f64>,
    /// Generation temperature.
    #[arg(long = "gen-temp")]
    gen_temp: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Policy endpoint base URL (switches the backend to live mode).
    #[arg(long = "policy-url")]
    policy_url: Option<String>,
    /// Reward endpoint base URL (switches the backend to live mode).
    #[arg(long = "reward-url")]
    reward_url: Option<String>,
    /// Problem file (line-delimited JSON records).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Synthetic question count.
    #[arg(long)]
    questions: Option<usize>,
    /// Concurrent questions.
    #[arg(long)]
    workers: Option<usize>,
}

impl CommonOverrides {
    fn resolve(&self) -> Result<Manifest> {
        let mut manifest = match &self.manifest {
            Some(path) => Manifest::load(path)?,
            None => Manifest::default(),
        };
        if let Some(v) = &self.method {
            manifest.run.method = v.clone();
        }
        if let Some(v) = self.particles {
            manifest.engine.particles = v;
        }
        if let Some(v) = self.iterations {
            manifest.engine.iterations = v;
        }
        if let Some(v) = self.chains {
            manifest.engine.chains = v;
        }
        if let Some(v) = &self.aggregation {
            manifest.engine.aggregation = v.clone();
        }
        if let Some(v) = self.softmax_temp {
            manifest.engine.softmax_temperature = v;
        }
        if let Some(v) = self.gen_temp {
            manifest.engine.generation_temperature = v;
        }
        if let Some(v) = self.seed {
            manifest.run.seed = v;
        }
        if let Some(v) = &self.policy_url {
            manifest.backend.live.policy_url = v.clone();
            manifest.backend.kind = manifest::BackendKind::Live;
        }
        if let Some(v) = &self.reward_url {
            manifest.backend.live.reward_url = v.clone();
            manifest.backend.kind = manifest::BackendKind::Live;
        }
        if let Some(v) = &self.dataset {
            manifest.run.dataset = Some(v.clone());
        }
        if let Some(v) = self.questions {
            manifest.run.questions = v;
        }
        if let Some(v) = self.workers {
            manifest.run.workers = v;
        }
        // Validate method and engine settings up front.
        manifest.method()?;
        manifest.pf_config(0)?;
        Ok(manifest)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonOverrides,
    /// Record output file (line-delimited JSON).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonOverrides,
    /// Comma-separated ascending budgets, e.g. 1,2,4,8,16.
    #[arg(long, value_delimiter = ',')]
    budgets: Vec<usize>,
    /// CSV output path.
    #[arg(long)]
    out: PathBuf,
    /// Optional SVG chart path.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Record files to aggregate.
    inputs: Vec<PathBuf>,
    /// CSV output path.
    #[arg(long)]
    out: PathBuf,
    /// Optional SVG chart path.
    #[arg(long)]
    svg: Option<PathBuf>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => {
            let manifest = args.common.resolve()?;
            let out = args.out.clone().or_else(|| manifest.run.out.clone());
            let summary = runner::run_benchmark(&manifest, out.as_deref())?;
            println!("{}", runner::summary_line(&manifest, &summary));
            if let Some(path) = out {
                eprintln!("records written to {}", path.display());
            }
        }
        Command::Sweep(args) => {
            let manifest = args.common.resolve()?;
            let rows = sweep::sweep_budget(&manifest, &args.budgets)?;
            sweep::write_outputs(&rows, &args.out, args.svg.as_deref())
                .context("writing sweep outputs")?;
            println!("{}", sweep::rows_to_csv(&rows).trim_end());
        }
        Command::Report(args) => {
            let rows = report::emit_report(&args.inputs, &args.out, args.svg.as_deref())?;
            println!("{}", report::rows_to_csv(&rows).trim_end());
        }
    }
    Ok(())
}
