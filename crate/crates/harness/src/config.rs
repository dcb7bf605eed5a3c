//! Experiment configuration.
//!
//! A config is a TOML file with four tables. Every key is required; there are
//! no implicit defaults, and [`DEFAULT_CONFIG`] is the reference file.
//!
//! ```toml
//! [model]
//! d = 1          # lattice dimension
//! L = 4          # box radius, sites satisfy |u|_inf < L
//! K_tot = 4      # exclusive cap on total excitations
//! M_site = 12    # per-site occupancy cap of the displacement matrices
//! gamma = 0.02   # hopping
//! omega = 8.0    # oscillator frequency
//! alpha = 0.5    # coupling
//! V_plus = 1.0   # disorder is uniform on [0, V_plus]
//! margin = 2     # excitation headroom of displaced states
//!
//! [analysis]
//! p = 3.0        # gauge exponent
//! q = 1.0        # schedule exponent, p > 2 q d
//! s = 0.5        # fractional power in (0, 1)
//! lambda = 1.0   # reference decay rate for the green table
//! N = 1          # highest band kept by the band filter
//! eps0 = 1e-3    # smallest scale of the Holder grid
//! z = [[0.54, 0.008]]                  # spectral parameters [Re, Im]
//! T = [10.0, 100.0, 1e3, 1e4, 1e5, 1e6] # time horizons
//!
//! [ensemble]
//! n_samples = 50
//! seed = 7
//!
//! [output]
//! dir = "out"
//! ```
//!
//! The output directory may be overridden by `HOLSTEIN_OUTPUT_DIR`; it is not
//! part of the config hash.

use std::path::{Path, PathBuf};

use holstein_core::{Error as CoreError, ModelParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::HarnessError;

pub const OUTPUT_DIR_ENV: &str = "HOLSTEIN_OUTPUT_DIR";

pub const DEFAULT_CONFIG: &str = r#"[model]
d = 1
L = 4
K_tot = 4
M_site = 12
gamma = 0.02
omega = 8.0
alpha = 0.5
V_plus = 1.0
margin = 2

[analysis]
p = 3.0
q = 1.0
s = 0.5
lambda = 1.0
N = 1
eps0 = 1e-3
z = [[0.54, 0.008]]
T = [10.0, 100.0, 1e3, 1e4, 1e5, 1e6]

[ensemble]
n_samples = 50
seed = 7

[output]
dir = "out"
"#;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub d: usize,
    #[serde(rename = "L")]
    pub radius: u32,
    #[serde(rename = "K_tot")]
    pub k_tot: u32,
    #[serde(rename = "M_site")]
    pub m_site: u32,
    pub gamma: f64,
    pub omega: f64,
    pub alpha: f64,
    #[serde(rename = "V_plus")]
    pub v_plus: f64,
    pub margin: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    pub p: f64,
    pub q: f64,
    pub s: f64,
    pub lambda: f64,
    #[serde(rename = "N")]
    pub n_band: u32,
    pub eps0: f64,
    pub z: Vec<[f64; 2]>,
    #[serde(rename = "T")]
    pub t_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub analysis: AnalysisSection,
    pub ensemble: EnsembleSection,
    pub output: OutputSection,
}

/// The numeric part of a config, which alone determines the outputs.
#[derive(Serialize)]
struct Hashed<'a> {
    model: &'a ModelSection,
    analysis: &'a AnalysisSection,
    ensemble: &'a EnsembleSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::parse(DEFAULT_CONFIG).expect("default config parses")
    }
}

impl ExperimentConfig {
    /// Parses TOML text. Structural errors only; see [`validate`](Self::validate).
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            HarnessError::Config {
                key: key_of(&message),
                reason: message,
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config {
            key: "--config".into(),
            reason: format!("{}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the model, analysis and ensemble tables.
    pub fn hash(&self) -> String {
        let hashed = Hashed {
            model: &self.model,
            analysis: &self.analysis,
            ensemble: &self.ensemble,
        };
        let text = toml::to_string(&hashed).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn params(&self) -> ModelParams {
        let m = &self.model;
        ModelParams {
            dim: m.d,
            radius: m.radius,
            k_tot: m.k_tot,
            m_site: m.m_site,
            gamma: m.gamma,
            omega: m.omega,
            alpha: m.alpha,
            v_plus: m.v_plus,
            margin: m.margin,
        }
    }

    /// Checks every constraint; the confinement schedule condition
    /// `p > 2qd` only when `needs_schedule`.
    pub fn validate(&self, needs_schedule: bool) -> Result<(), HarnessError> {
        let bad = |key: &str, reason: &str| {
            Err(HarnessError::Config {
                key: key.into(),
                reason: reason.into(),
            })
        };
        let params = self.params();
        if let Err(e) = params.validate() {
            return Err(match e {
                CoreError::InvalidParameter { name, reason } => HarnessError::Config {
                    key: model_key(name).into(),
                    reason,
                },
                other => HarnessError::Config {
                    key: "model".into(),
                    reason: other.to_string(),
                },
            });
        }
        let m = &self.model;
        let a = &self.analysis;
        if m.omega <= params.band_width() {
            return bad("omega", "bands overlap: requires omega > V_plus + 4 d gamma");
        }
        if m.margin >= m.k_tot {
            return bad("margin", "must be below K_tot");
        }
        if !(a.s > 0.0 && a.s < 1.0) {
            return bad("s", "must lie in (0, 1)");
        }
        if !(a.p > 0.0 && a.p.is_finite()) {
            return bad("p", "must be positive");
        }
        if !(a.q > 0.0 && a.q.is_finite()) {
            return bad("q", "must be positive");
        }
        if needs_schedule && a.p <= 2.0 * a.q * m.d as f64 {
            return bad("p", "confinement requires p > 2 q d");
        }
        if !(a.lambda > 0.0 && a.lambda.is_finite()) {
            return bad("lambda", "must be positive");
        }
        if a.n_band + m.margin >= m.k_tot {
            return bad("N", "requires N + margin < K_tot");
        }
        if !(a.eps0 > 0.0 && a.eps0 < 1.0) {
            return bad("eps0", "must lie in (0, 1)");
        }
        if a.z.is_empty() {
            return bad("z", "needs at least one spectral parameter");
        }
        if a.z.iter().any(|z| !z[0].is_finite() || !(z[1] > 0.0 && z[1].is_finite())) {
            return bad("z", "needs finite Re z and Im z > 0");
        }
        if a.t_grid.is_empty() {
            return bad("T", "needs at least one horizon");
        }
        if a.t_grid.iter().any(|&t| !(t > 1.0 && t.is_finite())) {
            return bad("T", "horizons must be finite and exceed one");
        }
        if self.ensemble.n_samples == 0 {
            return bad("n_samples", "must be at least one");
        }
        if self.output.dir.as_os_str().is_empty() {
            return bad("dir", "must not be empty");
        }
        Ok(())
    }

    /// Applies `HOLSTEIN_OUTPUT_DIR` when set.
    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                self.output.dir = PathBuf::from(dir);
            }
        }
    }
}

fn model_key(name: &str) -> &str {
    match name {
        "k_tot" => "K_tot",
        "m_site" => "M_site",
        "v_plus" => "V_plus",
        other => other,
    }
}

/// Extracts the key name from a serde message such as "missing field `K_tot`".
fn key_of(message: &str) -> String {
    message
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "config".into())
}
