//! Evaluation report written by the `evaluate`, `sweep` and `explain` commands.

use serde::{Deserialize, Serialize};

use super::explain::GroupShare;
use super::metrics::Metrics;
use super::stats::BootstrapCi;
use super::sweep::SweepPoint;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub metrics: Metrics,
    pub ci: BootstrapCi,
    pub sweep_points: Vec<SweepPoint>,
    pub cohens_d: Option<f64>,
    pub spearman_rho: Option<f64>,
    pub ig_shares: Vec<GroupShare>,
}

impl Report {
    pub fn new(seed: u64, config_hash: impl Into<String>, metrics: Metrics, ci: BootstrapCi) -> Self {
        Report {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_hash: config_hash.into(),
            metrics,
            ci,
            sweep_points: Vec::new(),
            cohens_d: None,
            spearman_rho: None,
            ig_shares: Vec::new(),
        }
    }
}
