//! Optional TOML defaults. Command-line flags take precedence.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub se: Option<u32>,
    pub threshold: Option<f64>,
    pub fraction: Option<f64>,
    pub seed: Option<u64>,
    pub percentiles: Option<Vec<f64>>,
    pub max_order: Option<usize>,
    pub replicates: Option<usize>,
    pub bins: Option<usize>,
    pub jobs: Option<usize>,
    pub format: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

pub const DEFAULT_SE: u32 = 5;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_FRACTION: f64 = 0.8;
pub const DEFAULT_SEED: u64 = 2019;
pub const DEFAULT_PERCENTILES: [f64; 5] = [5.0, 25.0, 50.0, 75.0, 100.0];
pub const DEFAULT_MAX_ORDER: usize = 3;
pub const DEFAULT_REPLICATES: usize = 5;
pub const DEFAULT_BINS: usize = 20;

/// Flag, then config file, then built-in default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
