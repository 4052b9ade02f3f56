//! Two-layer scoring head: affine, ReLU, affine, sigmoid.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{dot, sigmoid, Mat};

/// Scores are kept inside `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-7;

pub const MLP_HIDDEN: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MicroHead {
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MicroHead {
    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        MicroHead {
            w1: Mat::glorot(hidden, input, rng),
            b1: vec![0.0; hidden],
            w2: Mat::glorot(1, hidden, rng).data,
            b2: vec![0.0],
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        MicroHead {
            w1: Mat::zeros(hidden, input),
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: vec![0.0],
        }
    }

    pub fn zeros_like(&self) -> Self {
        MicroHead::zeros(self.w1.cols, self.w1.rows)
    }

    pub fn input(&self) -> usize {
        self.w1.cols
    }
}

#[derive(Clone, Debug)]
pub struct MicroCache {
    input: Vec<f64>,
    hidden: Vec<f64>,
    /// `s(1 - s)` of the sigmoid, or 0 when the clamp is active.
    slope: f64,
}

impl MicroCache {
    /// ReLU on/off flags and whether the output clamp is active.
    pub fn pattern(&self, out: &mut Vec<bool>) {
        out.extend(self.hidden.iter().map(|&h| h > 0.0));
        out.push(self.slope == 0.0);
    }
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

pub fn micro_score(f: &[f64], p: &MicroHead) -> (f64, MicroCache) {
    debug_assert_eq!(f.len(), p.input());
    let mut hidden = p.w1.matvec(f);
    for (h, b) in hidden.iter_mut().zip(&p.b1) {
        *h = (*h + b).max(0.0);
    }
    let s = sigmoid(dot(&p.w2, &hidden) + p.b2[0]);
    let c = clamp_prob(s);
    let slope = if c == s { s * (1.0 - s) } else { 0.0 };
    (
        c,
        MicroCache {
            input: f.to_vec(),
            hidden,
            slope,
        },
    )
}

/// Accumulates parameter gradients and returns `d score / d f` scaled by `d_score`.
pub fn micro_score_backward(cache: &MicroCache, p: &MicroHead, d_score: f64, grads: &mut MicroHead) -> Vec<f64> {
    let dz = d_score * cache.slope;
    let mut d_in = vec![0.0; p.input()];
    if dz == 0.0 {
        return d_in;
    }
    grads.b2[0] += dz;
    let mut dh = vec![0.0; cache.hidden.len()];
    for u in 0..dh.len() {
        grads.w2[u] += dz * cache.hidden[u];
        if cache.hidden[u] > 0.0 {
            dh[u] = dz * p.w2[u];
        }
    }
    for (g, d) in grads.b1.iter_mut().zip(&dh) {
        *g += d;
    }
    grads.w1.outer_acc(&dh, &cache.input);
    p.w1.matvec_t_acc(&dh, &mut d_in);
    d_in
}
