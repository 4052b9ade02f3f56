//! Multi-head graph attention layer.
//!
//! For head k: `e_ij = LeakyReLU(a_kᵀ [W_k h_i ‖ W_k h_j])`, softmax over
//! `j ∈ N(i) ∪ {i}`, messages `Σ_j α_ij W_k h_j`. Heads are averaged and
//! passed through ELU.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{axpy, dot, elu, elu_grad, Mat};
use crate::error::{Error, Result};
use crate::network::NetworkGraph;

/// Attention support in CSR form: row `i` lists `N(i) ∪ {i}` sorted.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionSupport {
    pub offsets: Vec<usize>,
    pub cols: Vec<usize>,
}

impl AttentionSupport {
    pub fn from_graph(g: &NetworkGraph) -> Self {
        let lists = (0..g.node_count())
            .map(|i| g.neighbors(i).to_vec())
            .collect::<Vec<_>>();
        Self::from_neighbor_lists(&lists)
    }

    /// Build from undirected neighbor lists (self-loops are added here).
    pub fn from_neighbor_lists(lists: &[Vec<usize>]) -> Self {
        let mut offsets = vec![0];
        let mut cols = Vec::new();
        for (i, list) in lists.iter().enumerate() {
            let mut row: Vec<usize> = list.iter().copied().filter(|&j| j != i).collect();
            row.push(i);
            row.sort_unstable();
            row.dedup();
            cols.extend(row);
            offsets.push(cols.len());
        }
        AttentionSupport { offsets, cols }
    }

    pub fn nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[usize] {
        &self.cols[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn num_pairs(&self) -> usize {
        self.cols.len()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    #[default]
    Learned,
    /// Frozen `1/(deg+1)` weights (graph-convolution ablation).
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatHead {
    /// `d_out × d_in`
    pub w: Mat,
    /// `2·d_out`: source half then neighbor half.
    pub a: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatLayerParams {
    pub heads: Vec<GatHead>,
    pub leaky_slope: f64,
}

impl GatLayerParams {
    pub fn glorot(d_in: usize, d_out: usize, heads: usize, rng: &mut impl Rng) -> Self {
        let heads = (0..heads)
            .map(|_| GatHead {
                w: Mat::glorot(d_out, d_in, rng),
                a: Mat::glorot(1, 2 * d_out, rng).data,
            })
            .collect();
        GatLayerParams {
            heads,
            leaky_slope: 0.2,
        }
    }

    pub fn zeros_like(&self) -> Self {
        GatLayerParams {
            heads: self
                .heads
                .iter()
                .map(|h| GatHead {
                    w: Mat::zeros(h.w.rows, h.w.cols),
                    a: vec![0.0; h.a.len()],
                })
                .collect(),
            leaky_slope: self.leaky_slope,
        }
    }

    pub fn d_in(&self) -> usize {
        self.heads[0].w.cols
    }

    pub fn d_out(&self) -> usize {
        self.heads[0].w.rows
    }

    pub fn check(&self) -> Result<()> {
        let (r, c) = (self.d_out(), self.d_in());
        for h in &self.heads {
            if h.w.rows != r || h.w.cols != c || h.a.len() != 2 * r {
                return Err(Error::Dimension("attention heads disagree on shape".into()));
            }
            if !h.w.is_finite() || h.a.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("attention parameters".into()));
            }
        }
        Ok(())
    }
}

/// Intermediates kept for the backward pass. `alpha[k]` is aligned with
/// `AttentionSupport::cols`.
#[derive(Clone, Debug)]
pub struct GatCache {
    pub input: Vec<f64>,
    pub proj: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
    pub pre: Vec<f64>,
}

/// One layer forward. `h` is `N × d_in` row-major; returns `N × d_out`.
pub fn gat_layer(
    h: &[f64],
    sup: &AttentionSupport,
    p: &GatLayerParams,
    mode: AttentionMode,
) -> Result<(Vec<f64>, GatCache)> {
    let n = sup.nodes();
    let (d_in, d_out) = (p.d_in(), p.d_out());
    if h.len() != n * d_in {
        return Err(Error::Dimension(format!(
            "layer input has {} values, expected {n}×{d_in}",
            h.len()
        )));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("attention layer input".into()));
    }
    let k_heads = p.heads.len();
    let inv_k = 1.0 / k_heads as f64;
    let mut pre = vec![0.0; n * d_out];
    let mut proj_all = Vec::with_capacity(k_heads);
    let mut logits_all = Vec::with_capacity(k_heads);
    let mut alpha_all = Vec::with_capacity(k_heads);

    for head in &p.heads {
        let mut proj = vec![0.0; n * d_out];
        for i in 0..n {
            head.w
                .matvec_into(&h[i * d_in..(i + 1) * d_in], &mut proj[i * d_out..(i + 1) * d_out]);
        }
        let (a_src, a_dst) = head.a.split_at(d_out);
        let mut logits = vec![0.0; sup.num_pairs()];
        let mut alpha = vec![0.0; sup.num_pairs()];
        match mode {
            AttentionMode::Learned => {
                let s_src: Vec<f64> = (0..n).map(|i| dot(a_src, &proj[i * d_out..(i + 1) * d_out])).collect();
                let s_dst: Vec<f64> = (0..n).map(|j| dot(a_dst, &proj[j * d_out..(j + 1) * d_out])).collect();
                for i in 0..n {
                    let (lo, hi) = (sup.offsets[i], sup.offsets[i + 1]);
                    let mut m = f64::NEG_INFINITY;
                    for idx in lo..hi {
                        let z = s_src[i] + s_dst[sup.cols[idx]];
                        logits[idx] = z;
                        let e = if z > 0.0 { z } else { p.leaky_slope * z };
                        alpha[idx] = e;
                        m = m.max(e);
                    }
                    let mut total = 0.0;
                    for a in &mut alpha[lo..hi] {
                        *a = (*a - m).exp();
                        total += *a;
                    }
                    for a in &mut alpha[lo..hi] {
                        *a /= total;
                    }
                }
            }
            AttentionMode::Uniform => {
                for i in 0..n {
                    let (lo, hi) = (sup.offsets[i], sup.offsets[i + 1]);
                    let u = 1.0 / (hi - lo) as f64;
                    alpha[lo..hi].fill(u);
                }
            }
        }
        for i in 0..n {
            let out = &mut pre[i * d_out..(i + 1) * d_out];
            for idx in sup.offsets[i]..sup.offsets[i + 1] {
                let j = sup.cols[idx];
                axpy(alpha[idx] * inv_k, &proj[j * d_out..(j + 1) * d_out], out);
            }
        }
        proj_all.push(proj);
        logits_all.push(logits);
        alpha_all.push(alpha);
    }
    let out = pre.iter().map(|&x| elu(x)).collect();
    Ok((
        out,
        GatCache {
            input: h.to_vec(),
            proj: proj_all,
            logits: logits_all,
            alpha: alpha_all,
            pre,
        },
    ))
}

/// Backward of [`gat_layer`]: accumulates parameter gradients into `grads`
/// and returns the gradient with respect to the layer input.
pub fn gat_layer_backward(
    cache: &GatCache,
    sup: &AttentionSupport,
    p: &GatLayerParams,
    mode: AttentionMode,
    d_out_grad: &[f64],
    grads: &mut GatLayerParams,
) -> Vec<f64> {
    let n = sup.nodes();
    let (d_in, d_out) = (p.d_in(), p.d_out());
    let inv_k = 1.0 / p.heads.len() as f64;
    let d_pre: Vec<f64> = d_out_grad
        .iter()
        .zip(&cache.pre)
        .map(|(g, &x)| g * elu_grad(x) * inv_k)
        .collect();
    let mut d_input = vec![0.0; n * d_in];

    for (k, head) in p.heads.iter().enumerate() {
        let proj = &cache.proj[k];
        let alpha = &cache.alpha[k];
        let mut d_proj = vec![0.0; n * d_out];
        let mut d_src = vec![0.0; n];
        let mut d_dst = vec![0.0; n];
        let mut d_alpha: Vec<f64> = Vec::new();
        for i in 0..n {
            let (lo, hi) = (sup.offsets[i], sup.offsets[i + 1]);
            let dp_i = &d_pre[i * d_out..(i + 1) * d_out];
            // d alpha_ij = dPre_i · P_j
            d_alpha.clear();
            d_alpha.resize(hi - lo, 0.0);
            for (slot, idx) in (lo..hi).enumerate() {
                let j = sup.cols[idx];
                let pj = &proj[j * d_out..(j + 1) * d_out];
                axpy(alpha[idx], dp_i, &mut d_proj[j * d_out..(j + 1) * d_out]);
                d_alpha[slot] = dot(dp_i, pj);
            }
            if mode == AttentionMode::Learned {
                let inner: f64 = (lo..hi).zip(d_alpha.iter()).map(|(idx, da)| alpha[idx] * da).sum();
                for (slot, idx) in (lo..hi).enumerate() {
                    let de = alpha[idx] * (d_alpha[slot] - inner);
                    let dz = if cache.logits[k][idx] > 0.0 { de } else { p.leaky_slope * de };
                    d_src[i] += dz;
                    d_dst[sup.cols[idx]] += dz;
                }
            }
        }
        let g = &mut grads.heads[k];
        if mode == AttentionMode::Learned {
            let (a_src, a_dst) = head.a.split_at(d_out);
            let (ga_src, ga_dst) = g.a.split_at_mut(d_out);
            for i in 0..n {
                let pi = &proj[i * d_out..(i + 1) * d_out];
                axpy(d_src[i], pi, ga_src);
                axpy(d_dst[i], pi, ga_dst);
                let dpi = &mut d_proj[i * d_out..(i + 1) * d_out];
                axpy(d_src[i], a_src, dpi);
                axpy(d_dst[i], a_dst, dpi);
            }
        }
        for i in 0..n {
            let dpi = &d_proj[i * d_out..(i + 1) * d_out];
            let hi = &cache.input[i * d_in..(i + 1) * d_in];
            g.w.outer_acc(dpi, hi);
            head.w.matvec_t_acc(dpi, &mut d_input[i * d_in..(i + 1) * d_in]);
        }
    }
    d_input
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    /// Dense reference: builds the full N×N logit matrix, masks by an
    /// adjacency matrix with self-loops, and aggregates head by head.
    fn dense_reference(h: &[Vec<f64>], adj: &[Vec<bool>], p: &GatLayerParams) -> Vec<Vec<f64>> {
        let n = h.len();
        let d_out = p.d_out();
        let mut acc = vec![vec![0.0; d_out]; n];
        for head in &p.heads {
            let wh: Vec<Vec<f64>> = h
                .iter()
                .map(|x| (0..d_out).map(|r| (0..x.len()).map(|c| head.w.at(r, c) * x[c]).sum()).collect())
                .collect();
            for i in 0..n {
                let mut e = vec![f64::NEG_INFINITY; n];
                for j in 0..n {
                    if adj[i][j] || i == j {
                        let mut z = 0.0;
                        for r in 0..d_out {
                            z += head.a[r] * wh[i][r] + head.a[d_out + r] * wh[j][r];
                        }
                        e[j] = if z > 0.0 { z } else { 0.2 * z };
                    }
                }
                let m = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = e.iter().map(|v| (v - m).exp()).sum();
                for j in 0..n {
                    let a = (e[j] - m).exp() / denom;
                    for r in 0..d_out {
                        acc[i][r] += a * wh[j][r] / p.heads.len() as f64;
                    }
                }
            }
        }
        acc.into_iter()
            .map(|row| row.into_iter().map(|x| if x > 0.0 { x } else { x.exp() - 1.0 }).collect())
            .collect()
    }

    fn random_input(n: usize, d: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::seeded(seed);
        (0..n * d).map(|_| r.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn matches_dense_reference() {
        for (n, edges, seed) in [
            (3usize, vec![(0usize, 1usize), (1, 2)], 1u64),
            (5, vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (1, 3)], 2),
            (4, vec![(0, 1), (0, 2), (0, 3)], 3),
        ] {
            let mut lists = vec![Vec::new(); n];
            let mut adj = vec![vec![false; n]; n];
            for &(a, b) in &edges {
                lists[a].push(b);
                lists[b].push(a);
                adj[a][b] = true;
                adj[b][a] = true;
            }
            let sup = AttentionSupport::from_neighbor_lists(&lists);
            let mut r = rng::seeded(seed);
            let p = GatLayerParams::glorot(5, 4, 3, &mut r);
            let x = random_input(n, 5, seed + 10);
            let (out, cache) = gat_layer(&x, &sup, &p, AttentionMode::Learned).unwrap();
            let rows: Vec<Vec<f64>> = x.chunks(5).map(|c| c.to_vec()).collect();
            let reference = dense_reference(&rows, &adj, &p);
            for i in 0..n {
                for c in 0..4 {
                    assert!((out[i * 4 + c] - reference[i][c]).abs() < 1e-10);
                }
            }
            for alpha in &cache.alpha {
                for i in 0..n {
                    let s: f64 = alpha[sup.offsets[i]..sup.offsets[i + 1]].iter().sum();
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn isolated_node_attends_to_itself() {
        let sup = AttentionSupport::from_neighbor_lists(&[vec![]]);
        let mut r = rng::seeded(4);
        let p = GatLayerParams::glorot(3, 2, 4, &mut r);
        let x = vec![0.3, -0.7, 1.1];
        let (out, cache) = gat_layer(&x, &sup, &p, AttentionMode::Learned).unwrap();
        for a in &cache.alpha {
            assert_eq!(a, &vec![1.0]);
        }
        for c in 0..2 {
            let mean: f64 = p.heads.iter().map(|h| h.w.matvec(&x)[c]).sum::<f64>() / 4.0;
            assert!((out[c] - elu(mean)).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_neighbors_get_uniform_attention() {
        let lists = vec![vec![1, 2, 3], vec![0], vec![0], vec![0]];
        let sup = AttentionSupport::from_neighbor_lists(&lists);
        let mut r = rng::seeded(5);
        let p = GatLayerParams::glorot(2, 3, 2, &mut r);
        let x = vec![0.4, -0.2].repeat(4);
        let (_, cache) = gat_layer(&x, &sup, &p, AttentionMode::Learned).unwrap();
        for a in &cache.alpha {
            for v in &a[sup.offsets[0]..sup.offsets[1]] {
                assert!((v - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn uniform_mode_rows_are_uniform() {
        let lists = vec![vec![1, 2], vec![0], vec![0]];
        let sup = AttentionSupport::from_neighbor_lists(&lists);
        let mut r = rng::seeded(6);
        let p = GatLayerParams::glorot(2, 2, 2, &mut r);
        let (_, cache) = gat_layer(&random_input(3, 2, 1), &sup, &p, AttentionMode::Uniform).unwrap();
        assert_eq!(&cache.alpha[0][0..3], &[1.0 / 3.0; 3]);
        assert_eq!(&cache.alpha[0][3..5], &[0.5, 0.5]);
    }

    #[test]
    fn rejects_bad_input() {
        let sup = AttentionSupport::from_neighbor_lists(&[vec![1], vec![0]]);
        let mut r = rng::seeded(7);
        let p = GatLayerParams::glorot(2, 2, 1, &mut r);
        assert!(matches!(gat_layer(&[0.0; 3], &sup, &p, AttentionMode::Learned), Err(Error::Dimension(_))));
        assert!(matches!(
            gat_layer(&[0.0, f64::NAN, 0.0, 0.0], &sup, &p, AttentionMode::Learned),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let lists = vec![vec![1, 3], vec![0, 2], vec![1], vec![0]];
        let sup = AttentionSupport::from_neighbor_lists(&lists);
        let mut r = rng::seeded(8);
        let p = GatLayerParams::glorot(3, 4, 2, &mut r);
        let x = random_input(4, 3, 9);
        let weights = random_input(4, 4, 10);
        let loss = |p: &GatLayerParams, x: &[f64]| -> f64 {
            let (out, _) = gat_layer(x, &sup, p, AttentionMode::Learned).unwrap();
            dot(&out, &weights)
        };
        let (_, cache) = gat_layer(&x, &sup, &p, AttentionMode::Learned).unwrap();
        let mut grads = p.zeros_like();
        let dx = gat_layer_backward(&cache, &sup, &p, AttentionMode::Learned, &weights, &mut grads);
        let h = 1e-6;
        for k in 0..2 {
            for idx in 0..p.heads[k].w.data.len() {
                let mut pp = p.clone();
                pp.heads[k].w.data[idx] += h;
                let up = loss(&pp, &x);
                pp.heads[k].w.data[idx] -= 2.0 * h;
                let fd = (up - loss(&pp, &x)) / (2.0 * h);
                assert!((fd - grads.heads[k].w.data[idx]).abs() < 1e-7);
            }
            for idx in 0..p.heads[k].a.len() {
                let mut pp = p.clone();
                pp.heads[k].a[idx] += h;
                let up = loss(&pp, &x);
                pp.heads[k].a[idx] -= 2.0 * h;
                let fd = (up - loss(&pp, &x)) / (2.0 * h);
                assert!((fd - grads.heads[k].a[idx]).abs() < 1e-7);
            }
        }
        for idx in 0..x.len() {
            let mut xp = x.clone();
            xp[idx] += h;
            let up = loss(&p, &xp);
            xp[idx] -= 2.0 * h;
            let fd = (up - loss(&p, &xp)) / (2.0 * h);
            assert!((fd - dx[idx]).abs() < 1e-7);
        }
    }
}
