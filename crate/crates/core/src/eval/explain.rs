//! Attention-path agreement and integrated-gradients attributions.

use serde::{Deserialize, Serialize};

use super::stats::spearman;
use crate::error::{Error, Result};
use crate::features::{FeatureGroup, FeatureTensor, NUM_FEATURES};
use crate::hydrosim::{AttackKind, AttackSpec};
use crate::model::{FrameOut, Model};
use crate::network::NetworkGraph;

pub const DEFAULT_IG_STEPS: usize = 50;

/// Last-layer attention per network edge: the mean over heads and over
/// both directions `α_ab`, `α_ba`.
pub fn edge_attention(model: &Model, frame: &FrameOut, g: &NetworkGraph) -> Vec<f64> {
    let alpha = frame.attention();
    let s = &model.support;
    let at = |a: usize, b: usize| -> f64 {
        let row = s.row(a);
        let k = s.offsets[a] + row.binary_search(&b).expect("edge endpoints are attention neighbors");
        alpha.iter().map(|head| head[k]).sum::<f64>() / alpha.len() as f64
    };
    (0..g.edge_count())
        .map(|k| {
            let (a, b) = g.endpoints(k);
            0.5 * (at(a, b) + at(b, a))
        })
        .collect()
}

/// Node an attack originates from: the target junction, the downstream
/// node of a pump, or the upstream end of an attacked flow meter.
pub fn attack_source(g: &NetworkGraph, spec: &AttackSpec) -> Result<usize> {
    if let Ok(i) = g.node_idx(&spec.target) {
        return Ok(i);
    }
    let k = g.edge_idx(&spec.target)?;
    let (from, to) = g.endpoints(k);
    Ok(if spec.kind == AttackKind::PumpShutdown { to } else { from })
}

/// Reference edge ranking for an attack. Edges on shortest hydraulic paths
/// from `source` to the `affected` nodes score higher the closer they sit
/// to the source; every other edge ties for last.
pub fn path_reference(g: &NetworkGraph, source: usize, affected: &[usize]) -> Vec<f64> {
    let off_path = -(g.edge_count() as f64) - 1.0;
    let mut score = vec![off_path; g.edge_count()];
    for &t in affected.iter().filter(|&&t| t != source) {
        let Some(path) = g.shortest_path_indices(source, t) else {
            continue;
        };
        for (hop, pair) in path.windows(2).enumerate() {
            let (u, v) = (pair[0], pair[1]);
            for &k in g.incident_edges(u) {
                let (a, b) = g.endpoints(k);
                if (a == u && b == v) || (a == v && b == u) {
                    score[k] = score[k].max(-(hop as f64));
                }
            }
        }
    }
    score
}

/// Spearman ρ between model attention and the reference ranking.
pub fn attention_path_spearman(attention: &[f64], reference: &[f64]) -> Result<f64> {
    if attention.len() < 2 {
        return Err(Error::InvalidArgument(
            "attention-path correlation needs a graph with at least two edges".into(),
        ));
    }
    spearman(attention, reference)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackExplanation {
    pub attack: AttackSpec,
    pub source: String,
    /// Per-edge attention averaged over the attack window.
    pub edge_attention: Vec<f64>,
    pub reference: Vec<f64>,
    pub spearman_rho: Option<f64>,
}

/// Attention-path agreement for attack `index` of a tensor's attack log.
/// Affected nodes are those labelled at any step of the window.
pub fn explain_attack(model: &Model, x: &FeatureTensor, g: &NetworkGraph, index: usize) -> Result<AttackExplanation> {
    let spec = x
        .attack_log
        .get(index)
        .ok_or_else(|| Error::InvalidArgument(format!("attack {index} not in log of {}", x.attack_log.len())))?
        .clone();
    model.check_tensor(x)?;
    let source = attack_source(g, &spec)?;
    let end = (spec.start + spec.duration).min(x.steps);
    if spec.start >= end {
        return Err(Error::InvalidArgument("attack window lies outside the series".into()));
    }
    let mut sum = vec![0.0; g.edge_count()];
    let mut affected = vec![false; g.node_count()];
    for t in spec.start..end {
        let fr = model.encode_frame(x.frame(t))?;
        for (s, a) in sum.iter_mut().zip(edge_attention(model, &fr, g)) {
            *s += a;
        }
        for (f, &y) in affected.iter_mut().zip(&x.labels[t]) {
            *f |= y != 0;
        }
    }
    let steps = (end - spec.start) as f64;
    let edge_attention: Vec<f64> = sum.into_iter().map(|s| s / steps).collect();
    let affected: Vec<usize> = (0..g.node_count()).filter(|&i| affected[i]).collect();
    let reference = path_reference(g, source, &affected);
    Ok(AttackExplanation {
        source: g.node(source).id.clone(),
        spearman_rho: attention_path_spearman(&edge_attention, &reference).ok(),
        attack: spec,
        edge_attention,
        reference,
    })
}

/// Per-feature mean over timesteps without any attack label.
pub fn normal_feature_means(tensors: &[FeatureTensor]) -> Result<[f64; NUM_FEATURES]> {
    let mut sum = [0.0; NUM_FEATURES];
    let mut count = 0usize;
    for x in tensors {
        for (t, row) in x.labels.iter().enumerate() {
            if row.iter().any(|&y| y != 0) {
                continue;
            }
            for i in 0..x.nodes {
                for (s, v) in sum.iter_mut().zip(x.get(t, i)) {
                    *s += v;
                }
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument("no attack-free timesteps for the attribution baseline".into()));
    }
    Ok(sum.map(|s| s / count as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupShare {
    pub group: FeatureGroup,
    pub share: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IgResult {
    pub target: usize,
    pub steps: usize,
    pub score: f64,
    pub baseline_score: f64,
    /// Per window frame, `N × F` row-major.
    pub attributions: Vec<Vec<f64>>,
    /// Signed attribution summed over frames and nodes, per feature.
    pub feature_totals: [f64; NUM_FEATURES],
    /// Share of total absolute attribution per feature group.
    pub group_shares: Vec<GroupShare>,
    /// `|Σ IG − (F(x) − F(x'))| / |F(x) − F(x')|`
    pub completeness_gap: f64,
}

impl IgResult {
    pub fn share(&self, group: FeatureGroup) -> f64 {
        self.group_shares.iter().find(|s| s.group == group).map_or(0.0, |s| s.share)
    }

    pub fn physics_share(&self) -> f64 {
        self.share(FeatureGroup::PhiMass) + self.share(FeatureGroup::PhiEnergy)
    }
}

/// Integrated gradients of `target`'s final score over a raw window
/// (`w` frames of `N × F`), against a baseline window whose every node and
/// frame holds `baseline`. The path integral uses the midpoint rule.
pub fn integrated_gradients(
    model: &Model,
    window: &[Vec<f64>],
    baseline: &[f64; NUM_FEATURES],
    target: usize,
    steps: usize,
) -> Result<IgResult> {
    let n = model.nodes();
    if steps == 0 {
        return Err(Error::InvalidArgument("integrated gradients need at least one step".into()));
    }
    if target >= n {
        return Err(Error::InvalidArgument(format!("target node {target} out of range")));
    }
    if window.is_empty() || window.iter().any(|f| f.len() != n * NUM_FEATURES) {
        return Err(Error::Dimension(format!("window frames must hold {n} × {NUM_FEATURES} values")));
    }
    let base: Vec<Vec<f64>> = window
        .iter()
        .map(|f| (0..f.len()).map(|k| baseline[k % NUM_FEATURES]).collect())
        .collect();
    let mut total: Vec<Vec<f64>> = window.iter().map(|f| vec![0.0; f.len()]).collect();
    let mut point = base.clone();
    for m in 0..steps {
        let a = (m as f64 + 0.5) / steps as f64;
        for ((p, x), b) in point.iter_mut().zip(window).zip(&base) {
            for ((pv, xv), bv) in p.iter_mut().zip(x).zip(b) {
                *pv = bv + a * (xv - bv);
            }
        }
        let (_, grads) = model.input_gradient(&point, target)?;
        for (acc, g) in total.iter_mut().zip(&grads) {
            for (t, gv) in acc.iter_mut().zip(g) {
                *t += gv;
            }
        }
    }
    let mut feature_totals = [0.0; NUM_FEATURES];
    let mut group_abs = [0.0; 4];
    let mut sum = 0.0;
    for ((acc, x), b) in total.iter_mut().zip(window).zip(&base) {
        for (k, ((t, xv), bv)) in acc.iter_mut().zip(x).zip(b).enumerate() {
            *t *= (xv - bv) / steps as f64;
            let f = k % NUM_FEATURES;
            feature_totals[f] += *t;
            let gi = FeatureGroup::ALL.iter().position(|&gr| gr == FeatureGroup::of(f)).expect("group");
            group_abs[gi] += t.abs();
            sum += *t;
        }
    }
    let (score, _) = model.input_gradient(window, target)?;
    let (baseline_score, _) = model.input_gradient(&base, target)?;
    let abs_total: f64 = group_abs.iter().sum();
    let group_shares = FeatureGroup::ALL
        .iter()
        .zip(group_abs)
        .map(|(&group, v)| GroupShare {
            group,
            share: if abs_total > 0.0 { v / abs_total } else { 0.0 },
        })
        .collect();
    let delta = score - baseline_score;
    Ok(IgResult {
        target,
        steps,
        score,
        baseline_score,
        attributions: total,
        feature_totals,
        group_shares,
        completeness_gap: (sum - delta).abs() / delta.abs().max(f64::MIN_POSITIVE),
    })
}

/// The model window ending at step `t` of a tensor, as raw frames.
pub fn window_at(model: &Model, x: &FeatureTensor, t: usize) -> Vec<Vec<f64>> {
    model.window_range(t).map(|s| x.frame(s).to_vec()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelParams, Scaler};
    use crate::network::{Edge, Node};
    use crate::rng;
    use rand::Rng;

    fn path_graph(n: usize) -> NetworkGraph {
        let mut nodes = vec![Node::reservoir("R", 40.0)];
        let mut edges = Vec::new();
        let mut prev = "R".to_string();
        for i in 0..n {
            let id = format!("J{i}");
            nodes.push(Node::junction(&id, 0.0, 0.001));
            edges.push(Edge::pipe(&format!("p{i}"), &prev, &id, 100.0, 0.2, 100.0));
            prev = id;
        }
        NetworkGraph::new(nodes, edges).unwrap()
    }

    fn random_model(g: &NetworkGraph, seed: u64) -> (Model, FeatureTensor) {
        let mut r = rng::seeded(seed);
        let mut x = FeatureTensor::zeros(6, g.node_count(), Default::default());
        for t in 0..6 {
            for i in 0..g.node_count() {
                for v in x.get_mut(t, i) {
                    *v = r.random_range(-1.0..1.0);
                }
            }
        }
        let cfg = ModelConfig {
            layers: 2,
            heads: 2,
            hidden: 4,
            lstm_hidden: 3,
            window: 3,
            ..Default::default()
        };
        let params = ModelParams::init(cfg, Scaler::fit(&[&x]), seed).unwrap();
        (Model::new(params, g).unwrap(), x)
    }

    #[test]
    fn completeness_holds_at_200_steps() {
        let g = path_graph(4);
        for seed in [1, 2, 3] {
            let (model, x) = random_model(&g, seed);
            let w = window_at(&model, &x, 5);
            let ig = integrated_gradients(&model, &w, &[0.0; NUM_FEATURES], 2, 200).unwrap();
            assert!((ig.score - ig.baseline_score).abs() > 1e-4);
            assert!(ig.completeness_gap < 0.01, "seed {seed}: gap {}", ig.completeness_gap);
            let shares: f64 = ig.group_shares.iter().map(|s| s.share).sum();
            assert!((shares - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_input_and_baseline_attribute_nothing() {
        let g = path_graph(3);
        let (model, _) = random_model(&g, 4);
        let b = [0.3; NUM_FEATURES];
        let w = vec![vec![0.3; g.node_count() * NUM_FEATURES]; 3];
        let ig = integrated_gradients(&model, &w, &b, 1, 10).unwrap();
        assert!(ig.attributions.iter().flatten().all(|&a| a == 0.0));
        assert_eq!(ig.score, ig.baseline_score);
    }

    #[test]
    fn path_reference_orders_by_hops() {
        let g = path_graph(4);
        // R-J0-J1-J2-J3; attack at J1 reaching J3
        let r = path_reference(&g, 2, &[2, 3, 4]);
        assert_eq!(r[2], 0.0);
        assert_eq!(r[3], -1.0);
        assert_eq!(r[0], r[1]);
        assert!(r[0] < -1.0);
        assert!((attention_path_spearman(&r, &r).unwrap() - 1.0).abs() < 1e-12);
        let reversed: Vec<f64> = r.iter().map(|v| -v).collect();
        assert!((attention_path_spearman(&reversed, &r).unwrap() + 1.0).abs() < 1e-12);
        assert!(attention_path_spearman(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn edge_attention_is_symmetric_average() {
        let g = path_graph(3);
        let (model, x) = random_model(&g, 5);
        let fr = model.encode_frame(x.frame(0)).unwrap();
        let a = edge_attention(&model, &fr, &g);
        assert_eq!(a.len(), g.edge_count());
        assert!(a.iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
