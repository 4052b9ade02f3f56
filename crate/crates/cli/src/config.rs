//! Run configuration file, config hashing and provenance sidecars.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use pgat::eval::explain::DEFAULT_IG_STEPS;
use pgat::eval::stats::DEFAULT_RESAMPLES;
use pgat::eval::{DEFAULT_SUSTAIN, DEFAULT_TAU};
use pgat::features::FeatureConfig;
use pgat::io::write_json;
use pgat::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub tau: f64,
    pub sustain: usize,
    pub n_resamples: usize,
    pub ig_steps: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tau: DEFAULT_TAU,
            sustain: DEFAULT_SUSTAIN,
            n_resamples: DEFAULT_RESAMPLES,
            ig_steps: DEFAULT_IG_STEPS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub deltas: Vec<f64>,
    pub fractions: Vec<f64>,
    pub mask_seeds: Vec<u64>,
    pub variants: Vec<String>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            deltas: vec![-0.15, -0.10, -0.05, 0.0, 0.05, 0.10, 0.15],
            fractions: vec![0.0, 0.05, 0.10],
            mask_seeds: vec![1, 2, 3, 4, 5],
            variants: pgat::eval::sweep::Ablation::ALL.iter().map(|a| a.name().to_string()).collect(),
        }
    }
}

/// Contents of the `--config` file. Every key is optional; explicit
/// command-line flags win over the file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub log_level: Option<String>,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Hex SHA-256 of the canonical JSON of a stage's effective settings.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("settings serialize");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(command: &str, seed: u64, config_hash: String) -> Self {
        Provenance {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config_hash,
        }
    }

    /// `provenance.json` inside an output directory.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("provenance.json"), self)?;
        Ok(())
    }

    /// `<file>.provenance.json` next to an output file.
    pub fn write_beside(&self, file: &Path) -> Result<()> {
        let mut p = file.as_os_str().to_owned();
        p.push(".provenance.json");
        write_json(&PathBuf::from(p), self)?;
        Ok(())
    }
}
