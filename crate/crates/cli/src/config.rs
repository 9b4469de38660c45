//! Optional key-value configuration file (TOML). Every key mirrors a
//! command-line flag; flags win when both are given.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    // Paths.
    pub transactions: Option<PathBuf>,
    pub shows: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub model: Option<PathBuf>,

    // Transaction CSV column names.
    pub col_user: Option<String>,
    pub col_show: Option<String>,
    pub col_amount: Option<String>,
    pub col_timestamp: Option<String>,

    // Pipeline parameters.
    pub kind: Option<String>,
    pub l: Option<u32>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<u32>,
    pub shuffle_seed: Option<u64>,
    pub l2: Option<f64>,
    pub fit_intercept: Option<bool>,
    pub negative_seed: Option<u64>,
    pub insertion: Option<String>,
    pub top_k: Option<usize>,
    pub symmetric_insertion: Option<bool>,
    /// Per-contact communication cost in euros.
    pub communication_cost: Option<f64>,

    // Holdout.
    pub cutoff: Option<i64>,
    pub test_sample: Option<usize>,
    pub sample_seed: Option<u64>,

    // Runtime.
    pub threads: Option<usize>,

    // Synthetic generator.
    pub synth_users: Option<usize>,
    pub synth_shows: Option<usize>,
    pub synth_communities: Option<usize>,
    pub synth_feature_noise: Option<f64>,
    pub synth_spend: Option<String>,
    pub synth_seed: Option<u64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("config: reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("config: parsing {}", path.display()))
    }
}

/// Flag value if present, else config value, else an error naming the
/// setting.
pub fn require<T>(flag: Option<T>, file: Option<T>, what: &str) -> Result<T> {
    flag.or(file)
        .with_context(|| format!("missing {what}: pass the flag or set it in the config file"))
}

/// Flag value if present, else config value, else the default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
