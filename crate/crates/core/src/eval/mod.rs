//! Detection metrics, statistics, robustness sweeps and explainability.

pub mod baseline;
pub mod explain;
pub mod metrics;
pub mod report;
pub mod stats;
pub mod sweep;

pub use metrics::{
    f1_score, metrics_from, network_alarm, prf, time_to_detection, Confusion, Metrics, TtdSummary, DEFAULT_SUSTAIN,
    DEFAULT_TAU,
};
pub use stats::{bootstrap_ci, cohens_d, spearman, BootstrapCi};

use crate::error::Result;
use crate::features::FeatureTensor;
use crate::model::Model;
use crate::multiscale::ScoreBundle;

/// Attack onsets recorded in a tensor's log, sorted and deduplicated.
pub fn attack_onsets(x: &FeatureTensor) -> Vec<usize> {
    let mut v: Vec<usize> = x.attack_log.iter().filter(|a| a.duration > 0).map(|a| a.start).collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Pool confusion counts and detection delays over several scored series.
pub fn metrics_for_scores(tensors: &[&FeatureTensor], scores: &[Vec<ScoreBundle>], tau: f64, sustain: usize) -> Metrics {
    let mut c = Confusion::default();
    let mut ttd = TtdSummary::default();
    for (x, s) in tensors.iter().zip(scores) {
        let alarms = network_alarm(s, tau);
        c.add(Confusion::of(&alarms, &x.network_labels()));
        ttd.extend(time_to_detection(&alarms, &attack_onsets(x), sustain, x.timestep));
    }
    metrics_from(c, &ttd, tau, sustain)
}

pub fn evaluate_tensors(model: &Model, tensors: &[FeatureTensor], tau: f64, sustain: usize) -> Result<Metrics> {
    let scores = tensors.iter().map(|x| model.score_series(x)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&FeatureTensor> = tensors.iter().collect();
    Ok(metrics_for_scores(&refs, &scores, tau, sustain))
}
