//! Artifact persistence and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::ensemble::EnsembleOptions;
use crate::experiments::{self, Experiment, Report};
use crate::{ExitStatus, HarnessError};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSeed {
    pub index: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub name: String,
    pub seconds: f64,
    pub seeds: Vec<TaskSeed>,
    pub failures: Vec<FailureRecord>,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub index: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_hash: String,
    /// The effective config as TOML.
    pub config: String,
    pub experiments: Vec<ExperimentRecord>,
    pub workers: Option<usize>,
    pub poison: Option<usize>,
    pub outputs: Vec<OutputFile>,
    pub exit_code: i32,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Config {
            key: "manifest".into(),
            reason: e.to_string(),
        })
    }

    pub fn config(&self) -> Result<ExperimentConfig, HarnessError> {
        ExperimentConfig::parse(&self.config)
    }

    pub fn experiment_list(&self) -> Result<Vec<Experiment>, HarnessError> {
        self.experiments
            .iter()
            .map(|r| {
                Experiment::from_name(&r.name).ok_or_else(|| HarnessError::Config {
                    key: "experiments".into(),
                    reason: format!("unknown experiment `{}`", r.name),
                })
            })
            .collect()
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Outcome of [`execute`].
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub manifest: RunManifest,
    pub dir: PathBuf,
    pub status: ExitStatus,
}

/// Runs `experiments` with `config`, writes their files and the manifest to
/// the configured output directory.
pub fn execute(experiments: &[Experiment], config: &ExperimentConfig, opts: &EnsembleOptions) -> Result<RunSummary, HarnessError> {
    let needs_schedule = experiments.contains(&Experiment::Dynamics);
    config.validate(needs_schedule)?;
    let reports: Vec<Report> = experiments
        .iter()
        .map(|&e| experiments::run(e, config, opts))
        .collect::<Result<_, _>>()?;
    let dir = config.output.dir.clone();
    fs::create_dir_all(&dir).map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))?;
    let mut outputs = Vec::new();
    let mut records = Vec::new();
    let mut status = ExitStatus::Success;
    for r in &reports {
        for (name, bytes) in &r.files {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
            outputs.push(OutputFile {
                file: name.clone(),
                bytes: bytes.len(),
                sha256: sha256_hex(bytes),
            });
        }
        if !r.violations.is_empty() {
            status = ExitStatus::Certificate;
        } else if !r.failures.is_empty() && status == ExitStatus::Success {
            status = ExitStatus::Partial;
        }
        records.push(ExperimentRecord {
            name: r.experiment.name().into(),
            seconds: r.seconds,
            seeds: r.seeds.iter().enumerate().map(|(index, &seed)| TaskSeed { index, seed }).collect(),
            failures: r
                .failures
                .iter()
                .map(|f| FailureRecord {
                    index: f.index,
                    seed: f.seed,
                    message: f.message.clone(),
                })
                .collect(),
            violations: r.violations.clone(),
        });
    }
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: config.hash(),
        config: config.to_toml(),
        experiments: records,
        workers: opts.workers,
        poison: opts.poison,
        outputs,
        exit_code: status.code(),
    };
    let mut text = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    text.push(b'\n');
    let path = dir.join(MANIFEST);
    fs::write(&path, text).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    Ok(RunSummary { manifest, dir, status })
}

/// Re-runs a manifest, optionally into another directory.
pub fn rerun(manifest: &RunManifest, out: Option<PathBuf>, workers: Option<usize>) -> Result<RunSummary, HarnessError> {
    let mut config = manifest.config()?;
    if let Some(dir) = out {
        config.output.dir = dir;
    }
    let opts = EnsembleOptions {
        workers: workers.or(manifest.workers),
        poison: manifest.poison,
        progress: false,
    };
    execute(&manifest.experiment_list()?, &config, &opts)
}
