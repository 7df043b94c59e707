use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use driftcl::bench::{cmd_ablate, cmd_benchmark, cmd_generate, cmd_report};
use driftcl::config::{RunConfig, DEFAULT_CONFIG_ENV};

#[derive(Parser)]
#[command(name = "driftcl", version, about = "Continual-learning angle regression under sensor drift")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Run configuration (TOML). Falls back to $DRIFTCL_CONFIG, then to
    /// built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run this many seeds (0, 1, ..., n-1), overriding the config list.
    #[arg(long)]
    seeds: Option<usize>,
    /// Parallel worker slots for independent seed runs.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic train/test experiments as CSV files.
    Generate(RunArgs),
    /// Train and compare baseline, transfer learning and the proposed method.
    Benchmark(RunArgs),
    /// Four-model ablation: baseline, TL, rehearsal+regularization with and
    /// without the adaptive phase.
    Ablate(RunArgs),
    /// Render a stored report to standard output.
    Report {
        /// Path to a report.json produced by benchmark or ablate.
        report: PathBuf,
        /// Emit only the flat per-task RMSE CSV, no prose.
        #[arg(long)]
        csv_only: bool,
    },
}

fn load_config(args: &RunArgs) -> driftcl::Result<RunConfig> {
    let path = args.config.clone().or_else(|| std::env::var_os(DEFAULT_CONFIG_ENV).map(PathBuf::from));
    let mut cfg = match path {
        Some(p) => RunConfig::load(&p)?,
        None => RunConfig::default(),
    };
    if let Some(n) = args.seeds {
        cfg.run.seeds = (0..n as u64).collect();
    }
    if let Some(jobs) = args.jobs {
        cfg.run.jobs = jobs;
    }
    if let Some(out) = &args.out {
        cfg.run.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run() -> driftcl::Result<()> {
    match Cli::parse().command {
        Command::Generate(args) => {
            let cfg = load_config(&args)?;
            let written = cmd_generate(&cfg, &cfg.run.output_dir)?;
            println!("wrote {} CSV files to {}", written.len(), cfg.run.output_dir.display());
        }
        Command::Benchmark(args) => {
            let cfg = load_config(&args)?;
            let report = cmd_benchmark(&cfg, &cfg.run.output_dir)?;
            print!("{}", report.summary());
            println!("\nreport written to {}", cfg.run.output_dir.join("report.json").display());
        }
        Command::Ablate(args) => {
            let cfg = load_config(&args)?;
            let report = cmd_ablate(&cfg, &cfg.run.output_dir)?;
            print!("{}", report.summary());
            println!("\nreport written to {}", cfg.run.output_dir.join("report.json").display());
        }
        Command::Report { report, csv_only } => {
            print!("{}", cmd_report(&report, csv_only)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
