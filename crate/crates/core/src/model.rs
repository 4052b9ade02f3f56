//! The detector: input standardization, GAT stack per frame, temporal
//! fusion per node, micro scoring head and multiscale fusion.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureTensor, FeatureToggles, NUM_FEATURES};
use crate::io::{read_json, write_json};
use crate::multiscale::{fuse, fuse_backward, louvain, Clustering, FusionCache, FusionMode, FusionParams, ScoreBundle};
use crate::network::NetworkGraph;
use crate::nn::gat::{gat_layer, gat_layer_backward, AttentionMode, AttentionSupport, GatCache, GatLayerParams};
use crate::nn::linalg::Parameters;
use crate::nn::lstm::{bilstm_backward, bilstm_fuse, BiLstm, BiLstmCache};
use crate::nn::mlp::{micro_score, micro_score_backward, MicroCache, MicroHead, MLP_HIDDEN};
use crate::rng;

pub const CHECKPOINT_FORMAT: &str = "pgat-checkpoint/1";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalMode {
    #[default]
    BiLstm,
    /// Mean of the window's embeddings (recurrent-fusion ablation).
    MeanPool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    /// Spatial embedding width d.
    pub hidden: usize,
    /// BiLSTM hidden size h per direction.
    pub lstm_hidden: usize,
    pub window: usize,
    pub attention: AttentionMode,
    pub temporal: TemporalMode,
    pub fusion: FusionMode,
    /// Feature toggles the model was trained with (informational).
    pub features: FeatureToggles,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 3,
            heads: 4,
            hidden: 16,
            lstm_hidden: 16,
            window: 24,
            attention: AttentionMode::Learned,
            temporal: TemporalMode::BiLstm,
            fusion: FusionMode::Adaptive,
            features: FeatureToggles::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.hidden == 0 || self.lstm_hidden == 0 || self.window == 0 {
            return Err(Error::InvalidArgument(
                "layers, heads, hidden, lstm_hidden and window must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn fused_dim(&self) -> usize {
        match self.temporal {
            TemporalMode::BiLstm => 2 * self.lstm_hidden,
            TemporalMode::MeanPool => self.hidden,
        }
    }
}

/// Fixed per-feature z-scoring fitted on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn identity() -> Self {
        Scaler {
            mean: vec![0.0; NUM_FEATURES],
            std: vec![1.0; NUM_FEATURES],
        }
    }

    /// Columns with (near) zero spread get unit scale.
    pub fn fit(tensors: &[&FeatureTensor]) -> Self {
        let mut sum = vec![0.0; NUM_FEATURES];
        let mut sq = vec![0.0; NUM_FEATURES];
        let mut count = 0.0;
        for x in tensors {
            for row in x.values().chunks_exact(NUM_FEATURES) {
                for f in 0..NUM_FEATURES {
                    sum[f] += row[f];
                }
                count += 1.0;
            }
        }
        if count == 0.0 {
            return Scaler::identity();
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        for x in tensors {
            for row in x.values().chunks_exact(NUM_FEATURES) {
                for f in 0..NUM_FEATURES {
                    sq[f] += (row[f] - mean[f]).powi(2);
                }
            }
        }
        let std = sq
            .iter()
            .map(|s| {
                let sd = (s / count).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Scaler { mean, std }
    }

    pub fn apply(&self, frame: &[f64]) -> Vec<f64> {
        frame
            .chunks_exact(NUM_FEATURES)
            .flat_map(|row| (0..NUM_FEATURES).map(move |f| (row[f] - self.mean[f]) / self.std[f]))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub scaler: Scaler,
    pub gat: Vec<GatLayerParams>,
    pub lstm: BiLstm,
    pub mlp: MicroHead,
    pub fusion: FusionParams,
}

impl ModelParams {
    pub fn init(config: ModelConfig, scaler: Scaler, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::seeded(seed);
        let gat = (0..config.layers)
            .map(|l| {
                let d_in = if l == 0 { NUM_FEATURES } else { config.hidden };
                GatLayerParams::glorot(d_in, config.hidden, config.heads, &mut r)
            })
            .collect();
        let lstm = BiLstm::init(config.hidden, config.lstm_hidden, &mut r);
        let mlp = MicroHead::init(config.fused_dim(), MLP_HIDDEN, &mut r);
        let fusion = FusionParams::init(config.fused_dim(), &mut r);
        Ok(ModelParams {
            config,
            scaler,
            gat,
            lstm,
            mlp,
            fusion,
        })
    }

    /// Same shapes, all trainable entries zero.
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            config: self.config.clone(),
            scaler: self.scaler.clone(),
            gat: self.gat.iter().map(GatLayerParams::zeros_like).collect(),
            lstm: self.lstm.zeros_like(),
            mlp: self.mlp.zeros_like(),
            fusion: self.fusion.zeros_like(),
        }
    }

    pub fn check(&self) -> Result<()> {
        self.config.validate()?;
        if let Some(group) = self.non_finite_group() {
            return Err(Error::NonFinite(group));
        }
        if self.gat.len() != self.config.layers {
            return Err(Error::Dimension("layer count differs from config".into()));
        }
        let mut d_in = NUM_FEATURES;
        for layer in &self.gat {
            layer.check()?;
            if layer.d_in() != d_in || layer.d_out() != self.config.hidden || layer.heads.len() != self.config.heads {
                return Err(Error::Dimension("attention layer shapes do not chain".into()));
            }
            d_in = layer.d_out();
        }
        if self.lstm.forward.input() != self.config.hidden || self.lstm.forward.hidden() != self.config.lstm_hidden {
            return Err(Error::Dimension("recurrent cell shapes differ from config".into()));
        }
        if self.mlp.input() != self.config.fused_dim() || self.fusion.w_pool.cols != self.config.fused_dim() {
            return Err(Error::Dimension("scoring head shapes differ from config".into()));
        }
        if self.scaler.mean.len() != NUM_FEATURES || self.scaler.std.len() != NUM_FEATURES {
            return Err(Error::Dimension("scaler must cover every feature".into()));
        }
        Ok(())
    }
}

impl Parameters for ModelParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        for (l, layer) in self.gat.iter().enumerate() {
            for (k, h) in layer.heads.iter().enumerate() {
                f(&format!("gat.{l}.{k}.w"), &h.w.data);
                f(&format!("gat.{l}.{k}.a"), &h.a);
            }
        }
        for (name, cell) in [("fwd", &self.lstm.forward), ("bwd", &self.lstm.backward)] {
            f(&format!("lstm.{name}.w_ih"), &cell.w_ih.data);
            f(&format!("lstm.{name}.w_hh"), &cell.w_hh.data);
            f(&format!("lstm.{name}.bias"), &cell.bias);
        }
        f("mlp.w1", &self.mlp.w1.data);
        f("mlp.b1", &self.mlp.b1);
        f("mlp.w2", &self.mlp.w2);
        f("mlp.b2", &self.mlp.b2);
        f("fusion.w_pool", &self.fusion.w_pool.data);
        f("fusion.v", &self.fusion.v);
        f("fusion.w_lambda", &self.fusion.w_lambda.data);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (l, layer) in self.gat.iter_mut().enumerate() {
            for (k, h) in layer.heads.iter_mut().enumerate() {
                f(&format!("gat.{l}.{k}.w"), &mut h.w.data);
                f(&format!("gat.{l}.{k}.a"), &mut h.a);
            }
        }
        for (name, cell) in [("fwd", &mut self.lstm.forward), ("bwd", &mut self.lstm.backward)] {
            f(&format!("lstm.{name}.w_ih"), &mut cell.w_ih.data);
            f(&format!("lstm.{name}.w_hh"), &mut cell.w_hh.data);
            f(&format!("lstm.{name}.bias"), &mut cell.bias);
        }
        f("mlp.w1", &mut self.mlp.w1.data);
        f("mlp.b1", &mut self.mlp.b1);
        f("mlp.w2", &mut self.mlp.w2);
        f("mlp.b2", &mut self.mlp.b2);
        f("fusion.w_pool", &mut self.fusion.w_pool.data);
        f("fusion.v", &mut self.fusion.v);
        f("fusion.w_lambda", &mut self.fusion.w_lambda.data);
    }
}

/// Spatial embedding of one timestep and the layer caches behind it.
#[derive(Clone, Debug)]
pub struct FrameOut {
    /// `N × d` row-major.
    pub z: Vec<f64>,
    pub caches: Vec<GatCache>,
}

impl FrameOut {
    /// Last-layer attention weights per head, aligned with the support columns.
    pub fn attention(&self) -> &[Vec<f64>] {
        &self.caches.last().expect("at least one layer").alpha
    }

    /// Sign of every attention logit (the LeakyReLU branch taken).
    pub fn activation_pattern(&self, out: &mut Vec<bool>) {
        for c in &self.caches {
            for head in &c.logits {
                out.extend(head.iter().map(|&z| z > 0.0));
            }
        }
    }
}

#[derive(Clone, Debug)]
enum TemporalCache {
    Lstm(BiLstmCache),
    Mean,
}

#[derive(Clone, Debug)]
pub struct WindowOut {
    pub bundle: ScoreBundle,
    steps: usize,
    temporal: Vec<TemporalCache>,
    micro: Vec<MicroCache>,
    fusion: FusionCache,
}

impl WindowOut {
    /// Branches taken at the non-smooth points downstream of the GAT stack:
    /// MLP ReLUs, output clamps and the arg-max cluster.
    pub fn activation_pattern(&self, out: &mut Vec<bool>) {
        for m in &self.micro {
            m.pattern(out);
        }
        out.extend(self.bundle.meso.iter().map(|&m| m == self.bundle.s[1]));
    }
}

/// Parameters bound to a network: attention support and clustering.
#[derive(Clone, Debug)]
pub struct Model {
    pub params: ModelParams,
    pub support: AttentionSupport,
    pub clustering: Clustering,
}

impl Model {
    pub fn new(params: ModelParams, g: &NetworkGraph) -> Result<Self> {
        params.check()?;
        Ok(Model {
            params,
            support: AttentionSupport::from_graph(g),
            clustering: louvain(g),
        })
    }

    pub fn nodes(&self) -> usize {
        self.support.nodes()
    }

    pub fn check_tensor(&self, x: &FeatureTensor) -> Result<()> {
        if x.nodes != self.nodes() {
            return Err(Error::Dimension(format!(
                "feature tensor has {} nodes, network has {}",
                x.nodes,
                self.nodes()
            )));
        }
        Ok(())
    }

    /// Raw `N × F` features to `N × d` embeddings.
    pub fn encode_frame(&self, raw: &[f64]) -> Result<FrameOut> {
        let mut h = self.params.scaler.apply(raw);
        let mut caches = Vec::with_capacity(self.params.gat.len());
        for layer in &self.params.gat {
            let (out, cache) = gat_layer(&h, &self.support, layer, self.params.config.attention)?;
            caches.push(cache);
            h = out;
        }
        Ok(FrameOut { z: h, caches })
    }

    /// Scores for the last frame of `frames` (oldest first).
    pub fn forward_window(&self, frames: &[&FrameOut]) -> Result<WindowOut> {
        if frames.is_empty() {
            return Err(Error::Dimension("empty window".into()));
        }
        let p = &self.params;
        let d = p.config.hidden;
        let n = self.nodes();
        let mut fused = Vec::with_capacity(n);
        let mut temporal = Vec::with_capacity(n);
        for i in 0..n {
            let seq: Vec<&[f64]> = frames.iter().map(|fr| &fr.z[i * d..(i + 1) * d]).collect();
            match p.config.temporal {
                TemporalMode::BiLstm => {
                    let (f, cache) = bilstm_fuse(&seq, &p.lstm)?;
                    fused.push(f);
                    temporal.push(TemporalCache::Lstm(cache));
                }
                TemporalMode::MeanPool => {
                    let mut f = vec![0.0; d];
                    for z in &seq {
                        for (a, b) in f.iter_mut().zip(*z) {
                            *a += b;
                        }
                    }
                    let w = seq.len() as f64;
                    f.iter_mut().for_each(|v| *v /= w);
                    fused.push(f);
                    temporal.push(TemporalCache::Mean);
                }
            }
        }
        let mut micro = Vec::with_capacity(n);
        let mut micro_caches = Vec::with_capacity(n);
        for f in &fused {
            let (s, c) = micro_score(f, &p.mlp);
            micro.push(s);
            micro_caches.push(c);
        }
        let (bundle, fusion) = fuse(&micro, &self.clustering, &fused, &p.fusion, p.config.fusion);
        Ok(WindowOut {
            bundle,
            steps: frames.len(),
            temporal,
            micro: micro_caches,
            fusion,
        })
    }

    /// Backward from `d final` to per-frame embedding gradients (`N × d`
    /// each, oldest first).
    pub fn backward_window(&self, out: &WindowOut, d_final: &[f64], grads: &mut ModelParams) -> Vec<Vec<f64>> {
        let p = &self.params;
        let d = p.config.hidden;
        let n = self.nodes();
        let (d_micro, mut d_fused) = fuse_backward(
            &out.bundle,
            &out.fusion,
            &self.clustering,
            &p.fusion,
            p.config.fusion,
            d_final,
            &mut grads.fusion,
        );
        for i in 0..n {
            let df = micro_score_backward(&out.micro[i], &p.mlp, d_micro[i], &mut grads.mlp);
            for (a, b) in d_fused[i].iter_mut().zip(df) {
                *a += b;
            }
        }
        let w = out.steps;
        let mut d_z = vec![vec![0.0; n * d]; w];
        for i in 0..n {
            let per_step: Vec<Vec<f64>> = match &out.temporal[i] {
                TemporalCache::Lstm(cache) => bilstm_backward(cache, &p.lstm, &d_fused[i], &mut grads.lstm),
                TemporalCache::Mean => {
                    let g: Vec<f64> = d_fused[i].iter().map(|v| v / w as f64).collect();
                    vec![g; w]
                }
            };
            for (s, g) in per_step.into_iter().enumerate() {
                d_z[s][i * d..(i + 1) * d].copy_from_slice(&g);
            }
        }
        d_z
    }

    /// Backward through the GAT stack and the scaler; returns `d raw` (`N × F`).
    pub fn backward_frame(&self, frame: &FrameOut, d_z: &[f64], grads: &mut ModelParams) -> Vec<f64> {
        let p = &self.params;
        let mut g = d_z.to_vec();
        for l in (0..p.gat.len()).rev() {
            g = gat_layer_backward(
                &frame.caches[l],
                &self.support,
                &p.gat[l],
                p.config.attention,
                &g,
                &mut grads.gat[l],
            );
        }
        for (k, v) in g.iter_mut().enumerate() {
            *v /= p.scaler.std[k % NUM_FEATURES];
        }
        g
    }

    /// Range of frames feeding the score at time `t` (shorter at the start).
    pub fn window_range(&self, t: usize) -> std::ops::Range<usize> {
        let w = self.params.config.window;
        (t + 1).saturating_sub(w)..t + 1
    }

    /// Encode every frame of a tensor.
    pub fn encode_all(&self, x: &FeatureTensor) -> Result<Vec<FrameOut>> {
        self.check_tensor(x)?;
        (0..x.steps).map(|t| self.encode_frame(x.frame(t))).collect()
    }

    /// Score every timestep of a feature tensor.
    pub fn score_series(&self, x: &FeatureTensor) -> Result<Vec<ScoreBundle>> {
        let frames = self.encode_all(x)?;
        self.score_frames(&frames)
    }

    pub fn score_frames(&self, frames: &[FrameOut]) -> Result<Vec<ScoreBundle>> {
        (0..frames.len())
            .map(|t| {
                let win: Vec<&FrameOut> = frames[self.window_range(t)].iter().collect();
                Ok(self.forward_window(&win)?.bundle)
            })
            .collect()
    }

    /// Final score of `target` for a raw window (`w` frames of `N × F`) and
    /// its gradient with respect to every raw input.
    pub fn input_gradient(&self, window: &[Vec<f64>], target: usize) -> Result<(f64, Vec<Vec<f64>>)> {
        let frames = window
            .iter()
            .map(|raw| self.encode_frame(raw))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&FrameOut> = frames.iter().collect();
        let out = self.forward_window(&refs)?;
        let mut d_final = vec![0.0; self.nodes()];
        d_final[target] = 1.0;
        let mut scratch = self.params.zeros_like();
        let d_z = self.backward_window(&out, &d_final, &mut scratch);
        let grads = frames
            .iter()
            .zip(&d_z)
            .map(|(fr, dz)| self.backward_frame(fr, dz, &mut scratch))
            .collect();
        Ok((out.bundle.final_scores[target], grads))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(params: ModelParams, seed: u64, config_hash: impl Into<String>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_hash: config_hash.into(),
            params,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Checkpoint = read_json(path)?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::parse(
                path.display().to_string(),
                format!("unsupported checkpoint format `{}`", c.format),
            ));
        }
        c.params.check()?;
        Ok(c)
    }
}
