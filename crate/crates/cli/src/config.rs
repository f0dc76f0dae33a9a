//! Optional TOML config file. Every key mirrors a command-line flag; a flag
//! given on the command line wins over the file, and the file wins over the
//! built-in default.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub task: Option<String>,
    pub family: Option<String>,

    pub embedding_dim: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub dropout: Option<f64>,
    pub layers: Option<usize>,
    pub max_len: Option<usize>,
    pub min_freq: Option<usize>,
    pub embeddings: Option<PathBuf>,

    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,

    pub encoder: Option<String>,
    pub max_tokens: Option<usize>,
    pub feature_cache: Option<PathBuf>,
    pub pooled: Option<bool>,

    pub ratios: Option<Vec<f64>>,
    pub stratified: Option<bool>,

    pub mentions: Option<bool>,
    pub links: Option<bool>,
    pub emojis: Option<bool>,
    pub whitespace: Option<bool>,
    pub lowercase: Option<bool>,

    pub jobs: Option<usize>,
    pub grid: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&raw).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Flag, then config value, then default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
