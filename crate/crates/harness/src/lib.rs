//! Configuration, seeded ensembles and persisted experiments for the
//! disordered Holstein model.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod ensemble;
pub mod experiments;
pub mod output;

use serde_json::json;
use thiserror::Error;

pub use config::ExperimentConfig;
pub use ensemble::{run_ensemble, EnsembleOptions};
pub use experiments::Experiment;
pub use output::{execute, rerun, RunManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success,
    Failure,
    Config,
    Certificate,
    Partial,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Success => 0,
            ExitStatus::Failure => 1,
            ExitStatus::Config => 2,
            ExitStatus::Certificate => 3,
            ExitStatus::Partial => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error(transparent)]
    Core(#[from] holstein_core::Error),

    #[error("i/o error: {0}")]
    Io(String),
}

impl HarnessError {
    pub fn status(&self) -> ExitStatus {
        use holstein_core::Error as E;
        match self {
            HarnessError::Config { .. } | HarnessError::Core(E::InvalidParameter { .. }) => ExitStatus::Config,
            HarnessError::Core(E::Certificate { .. } | E::NoConvergence { .. } | E::NotOrthonormal { .. } | E::ImaginaryResidue(_)) => {
                ExitStatus::Certificate
            }
            _ => ExitStatus::Failure,
        }
    }

    /// One-line JSON error record.
    pub fn record(&self) -> String {
        let mut v = json!({
            "status": "error",
            "exit_code": self.status().code(),
            "message": self.to_string(),
        });
        match self {
            HarnessError::Config { key, .. } => v["key"] = json!(key),
            HarnessError::Core(holstein_core::Error::InvalidParameter { name, .. }) => v["key"] = json!(name),
            _ => {}
        }
        v.to_string()
    }
}
