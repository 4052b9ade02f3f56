//! Robustness sweeps (roughness error, sensor outage) and ablation runs.

use serde::{Deserialize, Serialize};

use super::baseline::ResidualBaseline;
use super::metrics::{network_alarm, Metrics};
use super::stats::{cohens_d, f1_ci, spearman, BootstrapCi, DEFAULT_RESAMPLES};
use super::{metrics_for_scores, DEFAULT_SUSTAIN, DEFAULT_TAU};
use crate::error::{Error, Result};
use crate::features::{assemble_features, FeatureConfig, FeatureTensor, FeatureToggles};
use crate::hydrosim::{mask_sensors, ScadaSeries};
use crate::model::{Model, TemporalMode};
use crate::multiscale::FusionMode;
use crate::network::NetworkGraph;
use crate::nn::gat::AttentionMode;
use crate::rng;
use crate::training::{train, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    RoughnessDelta,
    OutageFraction,
    Ablation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub setting: String,
    pub value: f64,
    pub metrics: Metrics,
    pub ci: BootstrapCi,
    /// F1 of each evaluated series (and mask seed, for outages).
    pub per_series_f1: Vec<f64>,
    /// Effect size of this point's per-series F1 against the reference point.
    pub cohens_d: Option<f64>,
    pub baseline: Option<Metrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub reference: String,
    pub points: Vec<SweepPoint>,
    /// Cohen's d of the point with the largest F1 drop from the reference.
    pub effect_size_cohens_d: Option<f64>,
    /// Rank correlation between |setting| and F1 over the points.
    pub spearman_rho: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepOptions {
    pub tau: f64,
    pub sustain: usize,
    pub n_resamples: usize,
    pub seed: u64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            tau: DEFAULT_TAU,
            sustain: DEFAULT_SUSTAIN,
            n_resamples: DEFAULT_RESAMPLES,
            seed: 0,
        }
    }
}

/// Metrics, timestep-bootstrap CI and per-series F1 of a model on tensors.
pub fn evaluate_point(
    model: &Model,
    tensors: &[FeatureTensor],
    setting: impl Into<String>,
    value: f64,
    opts: &SweepOptions,
) -> Result<SweepPoint> {
    if tensors.is_empty() {
        return Err(Error::InvalidArgument("no series to evaluate".into()));
    }
    let scores = tensors.iter().map(|x| model.score_series(x)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&FeatureTensor> = tensors.iter().collect();
    let metrics = metrics_for_scores(&refs, &scores, opts.tau, opts.sustain);
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    let mut per_series_f1 = Vec::new();
    for (x, s) in tensors.iter().zip(&scores) {
        let a = network_alarm(s, opts.tau);
        let y = x.network_labels();
        per_series_f1.push(metrics_for_scores(&[x], std::slice::from_ref(s), opts.tau, opts.sustain).f1);
        pred.extend(a);
        truth.extend(y);
    }
    let ci = f1_ci(&pred, &truth, opts.n_resamples, opts.seed)?;
    Ok(SweepPoint {
        setting: setting.into(),
        value,
        metrics,
        ci,
        per_series_f1,
        cohens_d: None,
        baseline: None,
    })
}

fn summarize(axis: SweepAxis, mut points: Vec<SweepPoint>, reference: usize) -> SweepResult {
    let base = points[reference].per_series_f1.clone();
    for (k, p) in points.iter_mut().enumerate() {
        if k != reference {
            p.cohens_d = cohens_d(&p.per_series_f1, &base).ok();
        }
    }
    let ref_f1 = points[reference].metrics.f1;
    let worst = points
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != reference)
        .max_by(|a, b| (ref_f1 - a.1.metrics.f1).total_cmp(&(ref_f1 - b.1.metrics.f1)))
        .map(|(k, _)| k);
    let magnitudes: Vec<f64> = points.iter().map(|p| p.value.abs()).collect();
    let f1s: Vec<f64> = points.iter().map(|p| p.metrics.f1).collect();
    SweepResult {
        axis,
        reference: points[reference].setting.clone(),
        effect_size_cohens_d: worst.and_then(|k| points[k].cohens_d),
        spearman_rho: match axis {
            SweepAxis::Ablation => None,
            _ => spearman(&magnitudes, &f1s).ok(),
        },
        points,
    }
}

fn sorted_unique(values: &[f64], what: &str) -> Result<Vec<f64>> {
    let mut v = values.to_vec();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite {what}")));
    }
    v.sort_by(f64::total_cmp);
    v.dedup();
    if v.is_empty() {
        return Err(Error::InvalidArgument(format!("no {what} given")));
    }
    Ok(v)
}

fn raw_residual_config(cfg: &FeatureConfig) -> FeatureConfig {
    FeatureConfig {
        toggles: FeatureToggles {
            phi_mass: true,
            phi_energy: true,
            normalize: false,
            interpolate: cfg.toggles.interpolate,
        },
        ..cfg.clone()
    }
}

/// Evaluate `model` on `series` with roughness mis-specified by each δ.
///
/// When `clean` series are given, a residual-threshold baseline is
/// calibrated on them at δ = 0 and evaluated next to the model at every δ.
/// The reference point is the δ closest to zero.
pub fn roughness_sweep(
    model: &Model,
    g: &NetworkGraph,
    series: &[&ScadaSeries],
    clean: &[&ScadaSeries],
    base: &FeatureConfig,
    deltas: &[f64],
    opts: &SweepOptions,
) -> Result<SweepResult> {
    let deltas = sorted_unique(deltas, "roughness deltas")?;
    if deltas.iter().any(|&d| d <= -1.0) {
        return Err(Error::InvalidArgument("roughness delta must exceed -1".into()));
    }
    let baseline = if clean.is_empty() {
        None
    } else {
        let cfg = FeatureConfig {
            roughness_delta: 0.0,
            ..raw_residual_config(base)
        };
        let x = clean.iter().map(|s| assemble_features(s, g, &cfg)).collect::<Result<Vec<_>>>()?;
        Some(ResidualBaseline::calibrate(&x, super::baseline::DEFAULT_FALSE_ALARM_RATE)?)
    };
    let mut points = Vec::new();
    for &delta in &deltas {
        let cfg = FeatureConfig {
            roughness_delta: delta,
            ..base.clone()
        };
        let x = series.iter().map(|s| assemble_features(s, g, &cfg)).collect::<Result<Vec<_>>>()?;
        let mut p = evaluate_point(model, &x, format!("{:+.0}%", delta * 100.0), delta, opts)?;
        if let Some(b) = &baseline {
            let raw = FeatureConfig {
                roughness_delta: delta,
                ..raw_residual_config(base)
            };
            let xr = series.iter().map(|s| assemble_features(s, g, &raw)).collect::<Result<Vec<_>>>()?;
            p.baseline = Some(b.evaluate(&xr, opts.sustain)?);
        }
        points.push(p);
    }
    let reference = nearest_zero(&deltas);
    Ok(summarize(SweepAxis::RoughnessDelta, points, reference))
}

fn nearest_zero(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(k, _)| k)
        .expect("non-empty")
}

/// Evaluate `model` with a fraction of pressure sensors masked, once per
/// mask seed. Unmeasured nodes are filled as `base.toggles.interpolate`
/// says. The reference point is the smallest fraction.
pub fn outage_sweep(
    model: &Model,
    g: &NetworkGraph,
    series: &[&ScadaSeries],
    base: &FeatureConfig,
    fractions: &[f64],
    mask_seeds: &[u64],
    opts: &SweepOptions,
) -> Result<SweepResult> {
    let fractions = sorted_unique(fractions, "outage fractions")?;
    if mask_seeds.is_empty() {
        return Err(Error::InvalidArgument("no mask seeds given".into()));
    }
    let mut points = Vec::new();
    for &fraction in &fractions {
        let mut x = Vec::new();
        for &seed in mask_seeds {
            for (k, s) in series.iter().enumerate() {
                let masked = mask_sensors(s, fraction, rng::derive(seed, k as u64))?;
                x.push(assemble_features(&masked, g, base)?);
            }
        }
        points.push(evaluate_point(model, &x, format!("{:.0}%", fraction * 100.0), fraction, opts)?);
    }
    Ok(summarize(SweepAxis::OutageFraction, points, 0))
}

/// Component removals, each retrained from scratch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    NoPhiMass,
    NoPhiEnergy,
    NoPhi,
    NoNormalization,
    UniformAttention,
    MeanPool,
    MicroOnly,
    EqualLambda,
    NoPhysicsLoss,
}

impl Ablation {
    pub const ALL: [Ablation; 10] = [
        Ablation::Full,
        Ablation::NoPhiMass,
        Ablation::NoPhiEnergy,
        Ablation::NoPhi,
        Ablation::NoNormalization,
        Ablation::UniformAttention,
        Ablation::MeanPool,
        Ablation::MicroOnly,
        Ablation::EqualLambda,
        Ablation::NoPhysicsLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoPhiMass => "no_phi_mass",
            Ablation::NoPhiEnergy => "no_phi_energy",
            Ablation::NoPhi => "no_phi",
            Ablation::NoNormalization => "no_normalization",
            Ablation::UniformAttention => "uniform_attention",
            Ablation::MeanPool => "mean_pool",
            Ablation::MicroOnly => "micro_only",
            Ablation::EqualLambda => "equal_lambda",
            Ablation::NoPhysicsLoss => "no_physics_loss",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown ablation `{s}`")))
    }

    /// Feature and training configuration for this variant.
    pub fn apply(self, features: &FeatureConfig, cfg: &TrainConfig) -> (FeatureConfig, TrainConfig) {
        let mut f = features.clone();
        let mut c = cfg.clone();
        match self {
            Ablation::Full => {}
            Ablation::NoPhiMass => f.toggles.phi_mass = false,
            Ablation::NoPhiEnergy => f.toggles.phi_energy = false,
            Ablation::NoPhi => {
                f.toggles.phi_mass = false;
                f.toggles.phi_energy = false;
            }
            Ablation::NoNormalization => f.toggles.normalize = false,
            Ablation::UniformAttention => c.model.attention = AttentionMode::Uniform,
            Ablation::MeanPool => c.model.temporal = TemporalMode::MeanPool,
            Ablation::MicroOnly => c.model.fusion = FusionMode::MicroOnly,
            Ablation::EqualLambda => c.model.fusion = FusionMode::Equal,
            Ablation::NoPhysicsLoss => c.lambda_p = 0.0,
        }
        (f, c)
    }
}

pub struct AblationData<'a> {
    pub train: &'a [&'a ScadaSeries],
    pub val: &'a [&'a ScadaSeries],
    pub test: &'a [&'a ScadaSeries],
}

/// Train and test every variant. Points follow the variant order and the
/// reference is `Full` when present, else the first variant.
pub fn ablation_run(
    g: &NetworkGraph,
    data: &AblationData,
    features: &FeatureConfig,
    cfg: &TrainConfig,
    variants: &[Ablation],
    opts: &SweepOptions,
) -> Result<SweepResult> {
    let mut variants = variants.to_vec();
    variants.sort();
    variants.dedup();
    if variants.is_empty() {
        return Err(Error::InvalidArgument("no ablation variants given".into()));
    }
    let feats = |s: &[&ScadaSeries], f: &FeatureConfig| -> Result<Vec<FeatureTensor>> {
        s.iter().map(|x| assemble_features(x, g, f)).collect()
    };
    let mut points = Vec::new();
    for (k, &v) in variants.iter().enumerate() {
        let (f, c) = v.apply(features, cfg);
        let out = train(&feats(data.train, &f)?, &feats(data.val, &f)?, g, &c)?;
        let model = Model::new(out.params, g)?;
        log::info!("ablation {} trained, best epoch {:?}", v.name(), out.best_epoch);
        points.push(evaluate_point(&model, &feats(data.test, &f)?, v.name(), k as f64, opts)?);
    }
    Ok(summarize(SweepAxis::Ablation, points, 0))
}
