//! Run configuration: TOML file values, then command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use seqalloc_core::beliefs::InfoRegime;
use seqalloc_core::data_io::GeneratorConfig;
use seqalloc_core::policies::PriorityPolicy;

use crate::CliError;

pub const DEFAULT_OUT: &str = "out";
pub const DEFAULT_REPLICATIONS: u32 = 10;
pub const DEFAULT_RESTARTS: usize = 2;

/// Every setting any command reads. Unset optional fields fall back to the
/// documented defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of all randomness; copied into `generator.seed`.
    pub seed: u64,
    /// Worker threads; 0 means one per core.
    pub threads: usize,
    /// Output directory.
    pub out: PathBuf,
    /// Dataset directory read by estimate and reduced-form, and optionally
    /// used as the population for counterfactual and curve.
    pub data: Option<PathBuf>,
    /// Estimates file (as written by `estimate`) used as simulation
    /// parameters. Without it, the dataset truth or `generator.truth` is used.
    pub params: Option<PathBuf>,
    /// Unset means all three for counterfactual, "optn" elsewhere.
    pub policy: Option<String>,
    /// Unset means all three for counterfactual, "social-learning" elsewhere.
    pub regime: Option<String>,
    pub replications: u32,
    /// Simplex iteration cap per round; unset means 500 per parameter.
    pub max_iters: Option<usize>,
    pub restarts: usize,
    pub std_errors: bool,
    pub check_orderings: bool,
    pub generator: GeneratorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: 0,
            out: PathBuf::from(DEFAULT_OUT),
            data: None,
            params: None,
            policy: None,
            regime: None,
            replications: DEFAULT_REPLICATIONS,
            max_iters: None,
            restarts: DEFAULT_RESTARTS,
            std_errors: true,
            check_orderings: false,
            generator: GeneratorConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn policies(&self) -> Result<Vec<PriorityPolicy>, CliError> {
        match &self.policy {
            Some(s) => Ok(vec![s.parse().map_err(CliError::Config)?]),
            None => Ok(PriorityPolicy::ALL.to_vec()),
        }
    }

    pub fn regimes(&self) -> Result<Vec<InfoRegime>, CliError> {
        match &self.regime {
            Some(s) => Ok(vec![s.parse().map_err(CliError::Config)?]),
            None => Ok(InfoRegime::ALL.to_vec()),
        }
    }

    pub fn single_policy(&self) -> Result<PriorityPolicy, CliError> {
        self.policy
            .as_deref()
            .unwrap_or("optn")
            .parse()
            .map_err(CliError::Config)
    }

    pub fn single_regime(&self) -> Result<InfoRegime, CliError> {
        self.regime
            .as_deref()
            .unwrap_or("social-learning")
            .parse()
            .map_err(CliError::Config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.replications == 0 {
            return Err(CliError::Config("replications must be at least 1".into()));
        }
        if self.max_iters == Some(0) {
            return Err(CliError::Config("max_iters must be at least 1".into()));
        }
        self.policies()?;
        self.regimes()?;
        self.generator
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
