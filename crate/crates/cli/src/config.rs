//! Run configuration: a TOML file with per-subcommand sections, overridden by flags.

use std::path::Path;

use saedit::directions::{DEFAULT_EPSILON, DEFAULT_RHO};
use saedit::editing::DEFAULT_TAU_FACTOR;
use saedit::sae::TrainConfig;
use saedit::synthkit::{PairSpec, SynthSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub model: ModelSection,
    pub train: TrainConfig,
    pub calibrate: CalibrateSection,
    pub extract: ExtractSection,
    pub apply: ApplySection,
    pub synth: SynthSpec,
    pub pairs: PairSpec,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Latent width; eight times the embedding width when unset.
    pub d_latent: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateSection {
    /// Batches used to estimate theta; 0 uses one full pass.
    pub batches: usize,
    pub enabled: bool,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        Self {
            batches: 0,
            enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractSection {
    pub epsilon: f64,
    pub rho: f64,
    pub seed: u64,
    pub include_index: Vec<usize>,
    pub exclude_index: Vec<usize>,
}

impl Default for ExtractSection {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            rho: DEFAULT_RHO,
            seed: 0,
            include_index: Vec::new(),
            exclude_index: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApplySection {
    pub omega: Vec<f64>,
    pub steps: usize,
    /// Explicit cap; overrides `tau_factor`.
    pub tau: Option<f64>,
    pub tau_factor: f64,
    pub constant: bool,
    pub no_bypass: bool,
}

impl Default for ApplySection {
    fn default() -> Self {
        Self {
            omega: vec![1.0],
            steps: 28,
            tau: None,
            tau_factor: DEFAULT_TAU_FACTOR,
            constant: false,
            no_bypass: false,
        }
    }
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
    }

    /// Logs the effective section to the error stream.
    pub fn echo<T: Serialize>(section: &str, value: &T) {
        let mut table = toml::Table::new();
        match toml::Value::try_from(value) {
            Ok(v) => {
                table.insert(section.to_string(), v);
                eprint!("effective config:\n{}", toml::to_string(&table).unwrap_or_default());
            }
            Err(e) => eprintln!("effective config: <unprintable: {e}>"),
        }
    }
}
