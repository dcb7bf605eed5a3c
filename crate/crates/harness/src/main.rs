use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use holstein_harness::config::{ExperimentConfig, DEFAULT_CONFIG};
use holstein_harness::output::{execute, rerun, RunManifest, RunSummary};
use holstein_harness::{EnsembleOptions, Experiment, HarnessError};

#[derive(Parser)]
#[command(name = "holstein", version, about = "Experiments on the disordered Holstein model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// State-space size tables
    Count(RunArgs),
    /// Band structure and containment report
    Spectrum(RunArgs),
    /// Confinement profiles and energy-tail checks
    Dynamics(RunArgs),
    /// Fractional-moment Monte Carlo and decay fit
    Green(RunArgs),
    /// Spectral-measure regularity and dynamical bounds
    Measure(RunArgs),
    /// Every experiment in turn
    All(RunArgs),
    /// Re-run a manifest
    Rerun {
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print the default config
    Defaults,
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file; built-in defaults when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    progress: bool,
    #[arg(long, hide = true)]
    poison_task: Option<usize>,
}

impl RunArgs {
    fn resolve(&self) -> Result<(ExperimentConfig, EnsembleOptions), HarnessError> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::parse(DEFAULT_CONFIG)?,
        };
        config.apply_env();
        if let Some(out) = &self.out {
            config.output.dir = out.clone();
        }
        if let Some(g) = self.gamma {
            config.model.gamma = g;
        }
        if let Some(a) = self.alpha {
            config.model.alpha = a;
        }
        if let Some(s) = self.seed {
            config.ensemble.seed = s;
        }
        if let Some(n) = self.samples {
            config.ensemble.n_samples = n;
        }
        let opts = EnsembleOptions {
            workers: self.workers,
            poison: self.poison_task,
            progress: self.progress,
        };
        Ok((config, opts))
    }
}

fn run(cli: Cli) -> Result<RunSummary, HarnessError> {
    let (experiments, args) = match cli.command {
        Command::Count(a) => (vec![Experiment::Count], a),
        Command::Spectrum(a) => (vec![Experiment::Spectrum], a),
        Command::Dynamics(a) => (vec![Experiment::Dynamics], a),
        Command::Green(a) => (vec![Experiment::Green], a),
        Command::Measure(a) => (vec![Experiment::Measure], a),
        Command::All(a) => (Experiment::ALL.to_vec(), a),
        Command::Rerun { manifest, out, workers } => return rerun(&RunManifest::load(&manifest)?, out, workers),
        Command::Defaults => unreachable!("handled before dispatch"),
    };
    let (config, opts) = args.resolve()?;
    execute(&experiments, &config, &opts)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Command::Defaults = cli.command {
        print!("{DEFAULT_CONFIG}");
        return ExitCode::SUCCESS;
    }
    match run(cli) {
        Ok(summary) => {
            for rec in &summary.manifest.experiments {
                eprintln!(
                    "{}: {:.2}s, {} task failures, {} violations",
                    rec.name,
                    rec.seconds,
                    rec.failures.len(),
                    rec.violations.len()
                );
                for v in &rec.violations {
                    eprintln!("  {v}");
                }
            }
            println!("{}", summary.dir.join(holstein_harness::output::MANIFEST).display());
            ExitCode::from(summary.status.code() as u8)
        }
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.status().code() as u8)
        }
    }
}
