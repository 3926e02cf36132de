//! Run configuration: TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use ppfit::pipeline::FitConfig;
use ppfit::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub replicates: usize,
    pub fraction: f64,
    /// Seed for undersampling; defaults to the fit seed.
    pub seed: Option<u64>,
    pub raw_scale: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            replicates: 100,
            fraction: 0.7,
            seed: None,
            raw_scale: false,
        }
    }
}

/// Everything that determines a run's outputs. Thread count is deliberately
/// absent: results do not depend on it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub pattern: Option<PathBuf>,
    pub window: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    /// Output grid cell size; defaults to the longer window side / 128.
    pub cell: Option<f64>,
    pub mark_filter: Option<String>,
    pub fit: FitConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn require_pattern(&self) -> Result<&Path> {
        self.pattern.as_deref().ok_or_else(|| {
            Error::Config("no point pattern given (--pattern or `pattern` in config)".into())
        })
    }

    pub fn require_window(&self) -> Result<&Path> {
        self.window
            .as_deref()
            .ok_or_else(|| Error::Config("no window given (--window or `window` in config)".into()))
    }
}

/// Default seed from the environment when neither flag nor config sets one.
pub const SEED_ENV: &str = "PPFIT_SEED";

pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| {
            Error::Config(format!("{SEED_ENV} must be an unsigned integer, got '{v}'"))
        }),
        Err(_) => Ok(None),
    }
}
