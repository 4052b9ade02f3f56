//! Composite loss, batched exact gradients, Adam with cosine annealing and
//! early stopping on validation F1.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate_tensors, Metrics, DEFAULT_SUSTAIN, DEFAULT_TAU};
use crate::features::{Feature, FeatureTensor, NUM_FEATURES};
use crate::io::{csv_bytes, fmt_f64, write_atomic};
use crate::model::{FrameOut, Model, ModelConfig, ModelParams, Scaler};
use crate::network::NetworkGraph;
use crate::nn::linalg::Parameters;
use crate::nn::mlp::clamp_prob;
use crate::rng;

pub const DEFAULT_LAMBDA_P: f64 = 0.1;
pub const DEFAULT_LAMBDA_C: f64 = 0.05;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bce: f64,
    pub physics: f64,
    pub consist: f64,
    pub total: f64,
    pub lambda_p: f64,
    pub lambda_c: f64,
}

impl LossBreakdown {
    pub fn new(bce: f64, physics: f64, consist: f64, lambda_p: f64, lambda_c: f64) -> Self {
        LossBreakdown {
            bce,
            physics,
            consist,
            total: bce + lambda_p * physics + lambda_c * consist,
            lambda_p,
            lambda_c,
        }
    }
}

/// `-(1/BN) Σ [y ln â + (1-y) ln(1-â)]` over a batch of per-node scores.
pub fn bce_loss(scores: &[Vec<f64>], labels: &[&[u8]]) -> f64 {
    let count: usize = scores.iter().map(Vec::len).sum();
    let mut s = 0.0;
    for (row, y) in scores.iter().zip(labels) {
        for (&a, &yi) in row.iter().zip(*y) {
            let a = clamp_prob(a);
            s -= if yi != 0 { a.ln() } else { (1.0 - a).ln() };
        }
    }
    s / count as f64
}

fn bce_grad(a: f64, y: u8, scale: f64) -> f64 {
    let c = clamp_prob(a);
    if c != a {
        return 0.0;
    }
    if y != 0 {
        -scale / a
    } else {
        scale / (1.0 - a)
    }
}

/// `(1/BN) Σ 1(y=0) max(φ_mass, φ_energy)` from raw feature frames.
pub fn physics_loss(frames: &[&[f64]], labels: &[&[u8]]) -> f64 {
    let mut s = 0.0;
    let mut count = 0usize;
    for (frame, y) in frames.iter().zip(labels) {
        for (row, &yi) in frame.chunks_exact(NUM_FEATURES).zip(*y) {
            count += 1;
            if yi == 0 {
                s += row[Feature::PhiMass as usize].max(row[Feature::PhiEnergy as usize]);
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        s / count as f64
    }
}

/// `(1/(B|E|)) Σ_(i,j) (â_i − â_j)²`
pub fn consistency_loss(scores: &[Vec<f64>], edges: &[(usize, usize)]) -> f64 {
    if edges.is_empty() || scores.is_empty() {
        return 0.0;
    }
    let mut s = 0.0;
    for row in scores {
        for &(i, j) in edges {
            s += (row[i] - row[j]).powi(2);
        }
    }
    s / (scores.len() * edges.len()) as f64
}

pub fn edge_pairs(g: &NetworkGraph) -> Vec<(usize, usize)> {
    (0..g.edge_count()).map(|k| g.endpoints(k)).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradMode {
    #[default]
    Analytic,
    /// Finite-difference check on one sample before training.
    Check,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub eta0: f64,
    pub batch_b: usize,
    pub epochs_e: usize,
    pub eta_min: f64,
    pub validate_every: usize,
    pub patience: usize,
    pub seed: u64,
    pub grad_mode: GradMode,
    pub lambda_p: f64,
    pub lambda_c: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    /// Windows drawn per epoch; `None` uses every window.
    pub samples_per_epoch: Option<usize>,
    pub tau: f64,
    pub sustain_k: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta0: 1e-3,
            batch_b: 32,
            epochs_e: 50,
            eta_min: 1e-5,
            validate_every: 5,
            patience: 2,
            seed: 0,
            grad_mode: GradMode::Analytic,
            lambda_p: DEFAULT_LAMBDA_P,
            lambda_c: DEFAULT_LAMBDA_C,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            samples_per_epoch: None,
            tau: DEFAULT_TAU,
            sustain_k: DEFAULT_SUSTAIN,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta0 > self.eta_min && self.eta_min > 0.0) {
            return Err(Error::InvalidArgument("need eta0 > eta_min > 0".into()));
        }
        if self.batch_b == 0 || self.validate_every == 0 {
            return Err(Error::InvalidArgument("batch_b and validate_every must be positive".into()));
        }
        self.model.validate()
    }
}

/// `η_e = η_min + ½(η_0 − η_min)(1 + cos(π e / E))`
pub fn cosine_anneal(e: usize, cfg: &TrainConfig) -> f64 {
    let total = cfg.epochs_e.max(1) as f64;
    let frac = (e as f64 / total).min(1.0);
    cfg.eta_min + 0.5 * (cfg.eta0 - cfg.eta_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptState {
    pub fn new(params: &impl Parameters, cfg: &TrainConfig) -> Self {
        let n = params.num_parameters();
        OptState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            eta: cfg.eta0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps_adam,
        }
    }
}

pub fn flatten(p: &impl Parameters) -> Vec<f64> {
    let mut out = Vec::with_capacity(p.num_parameters());
    p.visit(&mut |_, v| out.extend_from_slice(v));
    out
}

/// One bias-corrected Adam step at the state's current learning rate.
pub fn adam_step<P: Parameters>(params: &mut P, grads: &P, state: &mut OptState) {
    let g = flatten(grads);
    assert_eq!(g.len(), state.m.len(), "optimizer state shape");
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let mut k = 0;
    params.visit_mut(&mut |_, p| {
        for x in p.iter_mut() {
            let gi = g[k];
            state.m[k] = b1 * state.m[k] + (1.0 - b1) * gi;
            state.v[k] = b2 * state.v[k] + (1.0 - b2) * gi * gi;
            let mh = state.m[k] / c1;
            let vh = state.v[k] / c2;
            *x -= state.eta * mh / (vh.sqrt() + state.eps);
            k += 1;
        }
    });
}

/// A training window: tensor index and the time of its last frame.
pub type Sample = (usize, usize);

pub fn all_samples(tensors: &[FeatureTensor]) -> Vec<Sample> {
    tensors
        .iter()
        .enumerate()
        .flat_map(|(k, x)| (0..x.steps).map(move |t| (k, t)))
        .collect()
}

/// Loss over a batch and its exact gradient. Frames shared between windows
/// are encoded once and their gradients summed before the GAT backward pass.
pub fn batch_loss_and_grad(
    model: &Model,
    tensors: &[FeatureTensor],
    batch: &[Sample],
    edges: &[(usize, usize)],
    lambda_p: f64,
    lambda_c: f64,
) -> Result<(LossBreakdown, ModelParams)> {
    let n = model.nodes();
    let mut frames: BTreeMap<Sample, FrameOut> = BTreeMap::new();
    for &(k, t) in batch {
        for s in model.window_range(t) {
            if let std::collections::btree_map::Entry::Vacant(e) = frames.entry((k, s)) {
                e.insert(model.encode_frame(tensors[k].frame(s))?);
            }
        }
    }
    let mut grads = model.params.zeros_like();
    let mut d_frames: BTreeMap<Sample, Vec<f64>> = BTreeMap::new();
    let mut scores = Vec::with_capacity(batch.len());
    let mut labels: Vec<&[u8]> = Vec::with_capacity(batch.len());
    let mut raw: Vec<&[f64]> = Vec::with_capacity(batch.len());
    let bce_scale = 1.0 / (batch.len() * n) as f64;
    let consist_scale = if edges.is_empty() {
        0.0
    } else {
        lambda_c * 2.0 / (batch.len() * edges.len()) as f64
    };
    for &(k, t) in batch {
        let range = model.window_range(t);
        let win: Vec<&FrameOut> = range.clone().map(|s| &frames[&(k, s)]).collect();
        let out = model.forward_window(&win)?;
        let y = tensors[k].labels[t].as_slice();
        let a = &out.bundle.final_scores;
        let mut d_final: Vec<f64> = a.iter().zip(y).map(|(&ai, &yi)| bce_grad(ai, yi, bce_scale)).collect();
        if consist_scale != 0.0 {
            for &(i, j) in edges {
                let diff = consist_scale * (a[i] - a[j]);
                d_final[i] += diff;
                d_final[j] -= diff;
            }
        }
        let d_z = model.backward_window(&out, &d_final, &mut grads);
        for (s, dz) in range.zip(d_z) {
            let acc = d_frames.entry((k, s)).or_insert_with(|| vec![0.0; dz.len()]);
            for (a, b) in acc.iter_mut().zip(dz) {
                *a += b;
            }
        }
        scores.push(out.bundle.final_scores);
        labels.push(y);
        raw.push(tensors[k].frame(t));
    }
    for (key, dz) in &d_frames {
        model.backward_frame(&frames[key], dz, &mut grads);
    }
    let loss = LossBreakdown::new(
        bce_loss(&scores, &labels),
        physics_loss(&raw, &labels),
        consistency_loss(&scores, edges),
        lambda_p,
        lambda_c,
    );
    Ok((loss, grads))
}

/// Forward-only loss plus the branch pattern at every non-smooth point
/// (used to keep finite differences away from kinks).
pub fn batch_forward(
    model: &Model,
    tensors: &[FeatureTensor],
    batch: &[Sample],
    edges: &[(usize, usize)],
    lambda_p: f64,
    lambda_c: f64,
) -> Result<(LossBreakdown, Vec<bool>)> {
    let mut frames: BTreeMap<Sample, FrameOut> = BTreeMap::new();
    let mut pattern = Vec::new();
    let mut scores = Vec::with_capacity(batch.len());
    let mut labels: Vec<&[u8]> = Vec::with_capacity(batch.len());
    let mut raw: Vec<&[f64]> = Vec::with_capacity(batch.len());
    for &(k, t) in batch {
        for s in model.window_range(t) {
            if let std::collections::btree_map::Entry::Vacant(e) = frames.entry((k, s)) {
                let fr = model.encode_frame(tensors[k].frame(s))?;
                fr.activation_pattern(&mut pattern);
                e.insert(fr);
            }
        }
        let win: Vec<&FrameOut> = model.window_range(t).map(|s| &frames[&(k, s)]).collect();
        let out = model.forward_window(&win)?;
        out.activation_pattern(&mut pattern);
        scores.push(out.bundle.final_scores);
        labels.push(tensors[k].labels[t].as_slice());
        raw.push(tensors[k].frame(t));
    }
    let loss = LossBreakdown::new(
        bce_loss(&scores, &labels),
        physics_loss(&raw, &labels),
        consistency_loss(&scores, edges),
        lambda_p,
        lambda_c,
    );
    Ok((loss, pattern))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    pub group: String,
    pub checked: usize,
    /// Entries whose ±step perturbation crosses a kink (ReLU, LeakyReLU,
    /// clamp or arg-max switch); the central difference is meaningless there.
    pub skipped: usize,
    /// `max |analytic − fd| / max(|analytic|, |fd|)` over the group.
    pub rel_error: f64,
}

/// Central finite-difference check of `batch_loss_and_grad` for every
/// parameter group. `max_per_group` limits the entries probed per group
/// (evenly spaced); `None` probes all of them.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    model: &Model,
    tensors: &[FeatureTensor],
    batch: &[Sample],
    edges: &[(usize, usize)],
    lambda_p: f64,
    lambda_c: f64,
    step: f64,
    max_per_group: Option<usize>,
) -> Result<Vec<GroupCheck>> {
    let (_, analytic) = batch_loss_and_grad(model, tensors, batch, edges, lambda_p, lambda_c)?;
    let (_, base_pattern) = batch_forward(model, tensors, batch, edges, lambda_p, lambda_c)?;
    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    analytic.visit(&mut |name, g| groups.push((name.to_string(), g.to_vec())));
    let mut probe = model.clone();
    let mut out = Vec::new();
    for (gi, (name, an)) in groups.iter().enumerate() {
        let stride = match max_per_group {
            Some(m) if m > 0 && an.len() > m => an.len().div_ceil(m),
            _ => 1,
        };
        let mut worst_diff: f64 = 0.0;
        let mut scale: f64 = 0.0;
        let (mut checked, mut skipped) = (0, 0);
        for idx in (0..an.len()).step_by(stride) {
            let original = model_entry(&model.params, gi, idx);
            let mut eval = |value: f64| -> Result<(f64, bool)> {
                set_entry(&mut probe.params, gi, idx, value);
                let (l, pattern) = batch_forward(&probe, tensors, batch, edges, lambda_p, lambda_c)?;
                Ok((l.total, pattern == base_pattern))
            };
            let (up, same_up) = eval(original + step)?;
            let (down, same_down) = eval(original - step)?;
            set_entry(&mut probe.params, gi, idx, original);
            if !(same_up && same_down) {
                skipped += 1;
                continue;
            }
            let fd = (up - down) / (2.0 * step);
            worst_diff = worst_diff.max((fd - an[idx]).abs());
            scale = scale.max(fd.abs()).max(an[idx].abs());
            checked += 1;
        }
        out.push(GroupCheck {
            group: name.clone(),
            checked,
            skipped,
            rel_error: if scale > 0.0 { worst_diff / scale } else { 0.0 },
        });
    }
    Ok(out)
}

fn model_entry(p: &ModelParams, group: usize, idx: usize) -> f64 {
    let mut gidx = 0;
    let mut v = 0.0;
    p.visit(&mut |_, vals| {
        if gidx == group {
            v = vals[idx];
        }
        gidx += 1;
    });
    v
}

fn set_entry(p: &mut ModelParams, group: usize, idx: usize, value: f64) {
    let mut gidx = 0;
    p.visit_mut(&mut |_, vals| {
        if gidx == group {
            vals[idx] = value;
        }
        gidx += 1;
    });
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub bce: f64,
    pub physics: f64,
    pub consist: f64,
    pub total: f64,
    pub eta: f64,
    pub val_f1: Option<f64>,
    pub val_ttd: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val: Option<Metrics>,
}

pub fn save_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let header: Vec<String> = ["epoch", "bce", "physics", "consist", "total", "eta", "val_f1", "val_ttd"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let rows = history.iter().map(|r| {
        vec![
            r.epoch.to_string(),
            fmt_f64(r.bce),
            fmt_f64(r.physics),
            fmt_f64(r.consist),
            fmt_f64(r.total),
            fmt_f64(r.eta),
            opt(r.val_f1),
            opt(r.val_ttd),
        ]
    });
    write_atomic(path, &csv_bytes(&header, rows)?)
}

pub fn train(train: &[FeatureTensor], val: &[FeatureTensor], g: &NetworkGraph, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let samples = all_samples(train);
    if samples.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let refs: Vec<&FeatureTensor> = train.iter().collect();
    let mut model_cfg = cfg.model.clone();
    model_cfg.features = train[0].config.toggles;
    let params = ModelParams::init(model_cfg, Scaler::fit(&refs), rng::derive(cfg.seed, 0))?;
    let mut model = Model::new(params, g)?;
    for x in train.iter().chain(val) {
        model.check_tensor(x)?;
    }
    let edges = edge_pairs(g);

    if cfg.grad_mode == GradMode::Check {
        let checks = gradient_check(&model, train, &samples[..1], &edges, cfg.lambda_p, cfg.lambda_c, 1e-4, Some(16))?;
        for c in &checks {
            log::info!("gradient check {}: relative error {:.3e}", c.group, c.rel_error);
            if c.rel_error >= 1e-4 {
                return Err(Error::NonFinite(format!(
                    "gradient check failed for {} (relative error {:.3e})",
                    c.group, c.rel_error
                )));
            }
        }
    }

    let mut opt = OptState::new(&model.params, cfg);
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ModelParams, Metrics)> = None;
    let mut stale = 0;
    let mut order = samples.clone();
    for epoch in 1..=cfg.epochs_e {
        opt.eta = cosine_anneal(epoch - 1, cfg);
        let mut r = rng::seeded(rng::derive(cfg.seed, epoch as u64));
        order.shuffle(&mut r);
        let take = cfg.samples_per_epoch.map_or(order.len(), |m| m.min(order.len()));
        let mut sums = LossBreakdown::default();
        let mut batches = 0.0;
        for batch in order[..take].chunks(cfg.batch_b) {
            let (loss, grads) = batch_loss_and_grad(&model, train, batch, &edges, cfg.lambda_p, cfg.lambda_c)?;
            if let Some(group) = grads.non_finite_group() {
                return Err(Error::NonFinite(format!("gradient of {group} at epoch {epoch}")));
            }
            adam_step(&mut model.params, &grads, &mut opt);
            sums.bce += loss.bce;
            sums.physics += loss.physics;
            sums.consist += loss.consist;
            batches += 1.0;
        }
        let mean = LossBreakdown::new(
            sums.bce / batches,
            sums.physics / batches,
            sums.consist / batches,
            cfg.lambda_p,
            cfg.lambda_c,
        );
        let mut rec = EpochRecord {
            epoch,
            bce: mean.bce,
            physics: mean.physics,
            consist: mean.consist,
            total: mean.total,
            eta: opt.eta,
            val_f1: None,
            val_ttd: None,
        };
        let validate = !val.is_empty() && (epoch % cfg.validate_every == 0 || epoch == cfg.epochs_e);
        let mut stop = false;
        if validate {
            let m = evaluate_tensors(&model, val, cfg.tau, cfg.sustain_k)?;
            rec.val_f1 = Some(m.f1);
            rec.val_ttd = m.ttd_hours;
            log::info!("epoch {epoch}: loss {:.5} val F1 {:.4}", mean.total, m.f1);
            if best.as_ref().is_none_or(|b| m.f1 > b.0) {
                best = Some((m.f1, epoch, model.params.clone(), m));
                stale = 0;
            } else {
                stale += 1;
                stop = stale >= cfg.patience;
            }
        } else {
            log::debug!("epoch {epoch}: loss {:.5}", mean.total);
        }
        history.push(rec);
        if stop {
            log::info!("early stop after epoch {epoch}");
            break;
        }
    }
    Ok(match best {
        Some((_, epoch, params, m)) => TrainOutcome {
            params,
            history,
            best_epoch: Some(epoch),
            best_val: Some(m),
        },
        None => TrainOutcome {
            params: model.params,
            history,
            best_epoch: None,
            best_val: None,
        },
    })
}
