//! Network-level alarms, F1 and time-to-detection.

use serde::{Deserialize, Serialize};

use crate::multiscale::ScoreBundle;

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_SUSTAIN: usize = 2;

/// `alarm_t = max_i final_t(i) > tau`
pub fn network_alarm(bundles: &[ScoreBundle], tau: f64) -> Vec<u8> {
    bundles
        .iter()
        .map(|b| u8::from(b.final_scores.iter().any(|&s| s > tau)))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn of(pred: &[u8], truth: &[u8]) -> Self {
        assert_eq!(pred.len(), truth.len(), "prediction and truth lengths differ");
        let mut c = Confusion::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p != 0, t != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn add(&mut self, o: Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    /// Mean over detected attacks; `None` when nothing was detected.
    pub ttd_hours: Option<f64>,
    pub detected: usize,
    pub undetected: usize,
    pub false_alarm_rate: f64,
    pub alarm_threshold_tau: f64,
    pub sustain_k: usize,
}

/// Precision, recall and F1 from a confusion table; F1 is 0 without true positives.
pub fn prf(c: Confusion) -> (f64, f64, f64) {
    if c.tp == 0 {
        return (0.0, 0.0, 0.0);
    }
    let precision = c.tp as f64 / (c.tp + c.fp) as f64;
    let recall = c.tp as f64 / (c.tp + c.fn_) as f64;
    (precision, recall, 2.0 * precision * recall / (precision + recall))
}

pub fn f1_score(pred: &[u8], truth: &[u8]) -> Metrics {
    let c = Confusion::of(pred, truth);
    metrics_from(c, &TtdSummary::default(), DEFAULT_TAU, DEFAULT_SUSTAIN)
}

pub fn metrics_from(c: Confusion, ttd: &TtdSummary, tau: f64, sustain: usize) -> Metrics {
    let (precision, recall, f1) = prf(c);
    let negatives = c.fp + c.tn;
    Metrics {
        f1,
        precision,
        recall,
        ttd_hours: ttd.mean_hours(),
        detected: ttd.detected(),
        undetected: ttd.undetected(),
        false_alarm_rate: if negatives == 0 { 0.0 } else { c.fp as f64 / negatives as f64 },
        alarm_threshold_tau: tau,
        sustain_k: sustain,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TtdSummary {
    /// Hours per attack, `None` when never detected.
    pub per_attack: Vec<Option<f64>>,
}

impl TtdSummary {
    pub fn detected(&self) -> usize {
        self.per_attack.iter().filter(|t| t.is_some()).count()
    }

    pub fn undetected(&self) -> usize {
        self.per_attack.len() - self.detected()
    }

    pub fn mean_hours(&self) -> Option<f64> {
        let hits: Vec<f64> = self.per_attack.iter().flatten().copied().collect();
        if hits.is_empty() {
            None
        } else {
            Some(hits.iter().sum::<f64>() / hits.len() as f64)
        }
    }

    pub fn extend(&mut self, other: TtdSummary) {
        self.per_attack.extend(other.per_attack);
    }
}

/// Per onset: hours from onset to the first step that starts `sustain`
/// consecutive alarms.
pub fn time_to_detection(alarms: &[u8], onsets: &[usize], sustain: usize, timestep_s: f64) -> TtdSummary {
    let k = sustain.max(1);
    let per_attack = onsets
        .iter()
        .map(|&onset| {
            (onset..alarms.len())
                .find(|&t| t + k <= alarms.len() && alarms[t..t + k].iter().all(|&a| a != 0))
                .map(|t| (t - onset) as f64 * timestep_s / 3600.0)
        })
        .collect();
    TtdSummary { per_attack }
}
