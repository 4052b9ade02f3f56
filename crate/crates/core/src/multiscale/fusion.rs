//! Cluster attention pooling and adaptive micro/meso/macro fusion.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::louvain::Clustering;
use crate::nn::linalg::{dot, softmax_backward, softmax_in_place, Mat};

pub const POOL_DIM: usize = 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// λ = softmax(W_λ s_t)
    #[default]
    Adaptive,
    /// λ = (1, 0, 0)
    MicroOnly,
    /// λ = (1/3, 1/3, 1/3)
    Equal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    /// `POOL_DIM × 2h`
    pub w_pool: Mat,
    pub v: Vec<f64>,
    /// `3 × 3`
    pub w_lambda: Mat,
}

impl FusionParams {
    pub fn init(fused_dim: usize, rng: &mut impl Rng) -> Self {
        FusionParams {
            w_pool: Mat::glorot(POOL_DIM, fused_dim, rng),
            v: Mat::glorot(1, POOL_DIM, rng).data,
            w_lambda: Mat::glorot(3, 3, rng),
        }
    }

    pub fn zeros(fused_dim: usize) -> Self {
        FusionParams {
            w_pool: Mat::zeros(POOL_DIM, fused_dim),
            v: vec![0.0; POOL_DIM],
            w_lambda: Mat::zeros(3, 3),
        }
    }

    pub fn zeros_like(&self) -> Self {
        FusionParams {
            w_pool: Mat::zeros(self.w_pool.rows, self.w_pool.cols),
            v: vec![0.0; self.v.len()],
            w_lambda: Mat::zeros(3, 3),
        }
    }
}

/// Scores for one timestep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreBundle {
    pub micro: Vec<f64>,
    pub meso: Vec<f64>,
    pub macro_score: f64,
    pub s: [f64; 3],
    pub lambda: [f64; 3],
    pub final_scores: Vec<f64>,
    /// Pooling weight of each node inside its cluster.
    pub beta: Vec<f64>,
}

impl ScoreBundle {
    pub fn meso_of(&self, clustering: &Clustering, i: usize) -> f64 {
        self.meso[clustering.assignment[i]]
    }
}

#[derive(Clone, Debug)]
pub struct FusionCache {
    /// `tanh(W_pool f_i)` per node.
    pooled: Vec<Vec<f64>>,
    fused: Vec<Vec<f64>>,
}

fn pool_logit(f: &[f64], p: &FusionParams) -> (f64, Vec<f64>) {
    let mut t = p.w_pool.matvec(f);
    for x in t.iter_mut() {
        *x = x.tanh();
    }
    (dot(&p.v, &t), t)
}

/// Meso score and β for one cluster.
pub fn attention_pool(members: &[usize], micro: &[f64], f: &[Vec<f64>], p: &FusionParams) -> (f64, Vec<f64>) {
    let mut beta: Vec<f64> = members.iter().map(|&i| pool_logit(&f[i], p).0).collect();
    softmax_in_place(&mut beta);
    let meso = members.iter().zip(&beta).map(|(&i, b)| b * micro[i]).sum();
    (meso, beta)
}

pub fn population_std(x: &[f64]) -> f64 {
    if x.iter().all(|&v| v == x[0]) {
        return 0.0;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

pub fn fuse(micro: &[f64], clustering: &Clustering, f: &[Vec<f64>], p: &FusionParams, mode: FusionMode) -> (ScoreBundle, FusionCache) {
    let n = micro.len();
    let members = clustering.members();
    let mut pooled = Vec::with_capacity(n);
    let mut logits = Vec::with_capacity(n);
    for fi in f {
        let (u, t) = pool_logit(fi, p);
        logits.push(u);
        pooled.push(t);
    }
    let mut beta = vec![0.0; n];
    let mut meso = vec![0.0; clustering.count];
    for (c, m) in members.iter().enumerate() {
        let mut b: Vec<f64> = m.iter().map(|&i| logits[i]).collect();
        softmax_in_place(&mut b);
        for (&i, bi) in m.iter().zip(&b) {
            beta[i] = *bi;
            meso[c] += bi * micro[i];
        }
    }
    let macro_score = micro.iter().sum::<f64>() / n as f64;
    let max_meso = meso.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s = [population_std(micro), max_meso, macro_score];
    let lambda = match mode {
        FusionMode::Adaptive => {
            let mut z = p.w_lambda.matvec(&s);
            softmax_in_place(&mut z);
            [z[0], z[1], z[2]]
        }
        FusionMode::MicroOnly => [1.0, 0.0, 0.0],
        FusionMode::Equal => [1.0 / 3.0; 3],
    };
    let final_scores = (0..n)
        .map(|i| lambda[0] * micro[i] + lambda[1] * meso[clustering.assignment[i]] + lambda[2] * macro_score)
        .collect();
    (
        ScoreBundle {
            micro: micro.to_vec(),
            meso,
            macro_score,
            s,
            lambda,
            final_scores,
            beta,
        },
        FusionCache {
            pooled,
            fused: f.to_vec(),
        },
    )
}

/// Backward of [`fuse`]. Returns `(d micro, d f)` and accumulates into `grads`.
pub fn fuse_backward(
    bundle: &ScoreBundle,
    cache: &FusionCache,
    clustering: &Clustering,
    p: &FusionParams,
    mode: FusionMode,
    d_final: &[f64],
    grads: &mut FusionParams,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = bundle.micro.len();
    let lam = bundle.lambda;
    let mut d_micro = vec![0.0; n];
    let mut d_meso = vec![0.0; bundle.meso.len()];
    let mut d_macro = 0.0;
    let mut d_lambda = [0.0; 3];
    for i in 0..n {
        let c = clustering.assignment[i];
        let g = d_final[i];
        d_micro[i] += lam[0] * g;
        d_meso[c] += lam[1] * g;
        d_macro += lam[2] * g;
        d_lambda[0] += g * bundle.micro[i];
        d_lambda[1] += g * bundle.meso[c];
        d_lambda[2] += g * bundle.macro_score;
    }
    if mode == FusionMode::Adaptive {
        let dz = softmax_backward(&lam, &d_lambda);
        grads.w_lambda.outer_acc(&dz, &bundle.s);
        let mut ds = [0.0; 3];
        p.w_lambda.matvec_t_acc(&dz, &mut ds);
        let std = bundle.s[0];
        if std > 0.0 {
            for i in 0..n {
                d_micro[i] += ds[0] * (bundle.micro[i] - bundle.macro_score) / (n as f64 * std);
            }
        }
        let argmax = bundle
            .meso
            .iter()
            .position(|&m| m == bundle.s[1])
            .unwrap_or(0);
        d_meso[argmax] += ds[1];
        d_macro += ds[2];
    }
    for d in d_micro.iter_mut() {
        *d += d_macro / n as f64;
    }
    let mut d_f = vec![vec![0.0; p.w_pool.cols]; n];
    for (c, m) in clustering.members().iter().enumerate() {
        let beta: Vec<f64> = m.iter().map(|&i| bundle.beta[i]).collect();
        let d_beta: Vec<f64> = m.iter().map(|&i| d_meso[c] * bundle.micro[i]).collect();
        let du = softmax_backward(&beta, &d_beta);
        for (k, &i) in m.iter().enumerate() {
            d_micro[i] += beta[k] * d_meso[c];
            if du[k] == 0.0 {
                continue;
            }
            let t = &cache.pooled[i];
            let mut d_pre = vec![0.0; t.len()];
            for r in 0..t.len() {
                grads.v[r] += du[k] * t[r];
                d_pre[r] = du[k] * p.v[r] * (1.0 - t[r] * t[r]);
            }
            grads.w_pool.outer_acc(&d_pre, &cache.fused[i]);
            p.w_pool.matvec_t_acc(&d_pre, &mut d_f[i]);
        }
    }
    (d_micro, d_f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn two_clusters() -> Clustering {
        Clustering {
            node_ids: (0..6).map(|i| format!("N{i}")).collect(),
            assignment: vec![0, 0, 0, 1, 1, 1],
            count: 2,
            modularity: 0.0,
        }
    }

    fn random_features(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng::seeded(seed);
        (0..n).map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn singleton_cluster_passes_micro_through() {
        let mut r = rng::seeded(1);
        let p = FusionParams::init(4, &mut r);
        let f = random_features(3, 4, 2);
        let (meso, beta) = attention_pool(&[1], &[0.1, 0.7, 0.3], &f, &p);
        assert_eq!(beta, vec![1.0]);
        assert_eq!(meso, 0.7);
    }

    #[test]
    fn identical_features_pool_to_mean() {
        let mut r = rng::seeded(1);
        let p = FusionParams::init(4, &mut r);
        let f = vec![vec![0.3, -0.2, 0.5, 0.1]; 4];
        let micro = [0.1, 0.2, 0.6, 0.9];
        let (meso, beta) = attention_pool(&[0, 1, 2, 3], &micro, &f, &p);
        for b in beta {
            assert!((b - 0.25).abs() < 1e-15);
        }
        assert!((meso - 0.45).abs() < 1e-15);
    }

    #[test]
    fn zero_lambda_weights_average_the_scales() {
        let mut r = rng::seeded(3);
        let mut p = FusionParams::init(4, &mut r);
        p.w_lambda = Mat::zeros(3, 3);
        let c = two_clusters();
        let micro = [0.1, 0.2, 0.3, 0.6, 0.8, 0.9];
        let (b, _) = fuse(&micro, &c, &random_features(6, 4, 4), &p, FusionMode::Adaptive);
        for i in 0..6 {
            let expect = (micro[i] + b.meso_of(&c, i) + b.macro_score) / 3.0;
            assert!((b.final_scores[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn equal_micro_is_a_fixed_point() {
        let mut r = rng::seeded(3);
        let p = FusionParams::init(4, &mut r);
        let (b, _) = fuse(&[0.37; 6], &two_clusters(), &random_features(6, 4, 5), &p, FusionMode::Adaptive);
        assert_eq!(b.s[0], 0.0);
        for x in b.final_scores.iter().chain(&b.meso) {
            assert!((x - 0.37).abs() < 1e-15);
        }
    }

    /// Step-by-step evaluation of a six-node, two-cluster case.
    #[test]
    fn matches_hand_arithmetic() {
        let c = two_clusters();
        let mut p = FusionParams::zeros(2);
        p.w_pool = Mat::from_vec(POOL_DIM, 2, (0..2 * POOL_DIM).map(|k| 0.05 * (k % 7) as f64 - 0.1).collect());
        p.v = (0..POOL_DIM).map(|k| 0.1 * (k % 3) as f64 - 0.1).collect();
        p.w_lambda = Mat::from_vec(3, 3, vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.5, -1.0, 1.0, 0.75]);
        let f = vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.5, -0.5],
            vec![-1.0, 0.2],
            vec![0.3, 0.3],
            vec![0.9, -0.8],
        ];
        let micro = [0.2, 0.4, 0.9, 0.1, 0.15, 0.3];
        let (b, _) = fuse(&micro, &c, &f, &p, FusionMode::Adaptive);

        let mut logit = [0.0; 6];
        for i in 0..6 {
            for r in 0..POOL_DIM {
                let pre = p.w_pool.data[2 * r] * f[i][0] + p.w_pool.data[2 * r + 1] * f[i][1];
                logit[i] += p.v[r] * pre.tanh();
            }
        }
        let mut meso = [0.0; 2];
        for (k, range) in [(0usize, 0..3usize), (1, 3..6)] {
            let z: f64 = range.clone().map(|i| logit[i].exp()).sum();
            meso[k] = range.map(|i| logit[i].exp() / z * micro[i]).sum();
        }
        let mean = micro.iter().sum::<f64>() / 6.0;
        let var = micro.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / 6.0;
        let s = [var.sqrt(), meso[0].max(meso[1]), mean];
        let z: Vec<f64> = (0..3)
            .map(|r| (0..3).map(|k| p.w_lambda.data[3 * r + k] * s[k]).sum::<f64>().exp())
            .collect();
        let zs: f64 = z.iter().sum();
        let lam: Vec<f64> = z.iter().map(|v| v / zs).collect();
        for i in 0..6 {
            let expect = lam[0] * micro[i] + lam[1] * meso[i / 3] + lam[2] * mean;
            assert!((b.final_scores[i] - expect).abs() < 1e-12);
        }
        for k in 0..3 {
            assert!((b.lambda[k] - lam[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_modes() {
        let mut r = rng::seeded(3);
        let p = FusionParams::init(4, &mut r);
        let micro = [0.1, 0.2, 0.3, 0.6, 0.8, 0.9];
        let f = random_features(6, 4, 6);
        let (b, _) = fuse(&micro, &two_clusters(), &f, &p, FusionMode::MicroOnly);
        assert_eq!(b.final_scores, micro.to_vec());
        let (b, _) = fuse(&micro, &two_clusters(), &f, &p, FusionMode::Equal);
        assert_eq!(b.lambda, [1.0 / 3.0; 3]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut r = rng::seeded(8);
        let p = FusionParams::init(4, &mut r);
        let c = two_clusters();
        let micro = vec![0.12, 0.47, 0.81, 0.33, 0.05, 0.66];
        let f = random_features(6, 4, 9);
        let wts = [0.7, -0.3, 1.1, 0.4, -0.9, 0.2];
        for mode in [FusionMode::Adaptive, FusionMode::Equal] {
            let loss = |p: &FusionParams, micro: &[f64], f: &[Vec<f64>]| {
                let (b, _) = fuse(micro, &c, f, p, mode);
                b.final_scores.iter().zip(&wts).map(|(a, w)| a * w).sum::<f64>()
            };
            let (b, cache) = fuse(&micro, &c, &f, &p, mode);
            let mut g = p.zeros_like();
            let (dm, df) = fuse_backward(&b, &cache, &c, &p, mode, &wts, &mut g);
            let h = 1e-6;
            for i in 0..6 {
                let mut a = micro.clone();
                a[i] += h;
                let up = loss(&p, &a, &f);
                a[i] -= 2.0 * h;
                let fd = (up - loss(&p, &a, &f)) / (2.0 * h);
                assert!((fd - dm[i]).abs() < 1e-8, "micro {i}: {fd} vs {}", dm[i]);
                for j in 0..4 {
                    let mut ff = f.clone();
                    ff[i][j] += h;
                    let up = loss(&p, &micro, &ff);
                    ff[i][j] -= 2.0 * h;
                    let fd = (up - loss(&p, &micro, &ff)) / (2.0 * h);
                    assert!((fd - df[i][j]).abs() < 1e-8);
                }
            }
            let groups: [(&dyn Fn(&mut FusionParams) -> &mut Vec<f64>, &Vec<f64>); 3] = [
                (&|q| &mut q.w_pool.data, &g.w_pool.data),
                (&|q| &mut q.v, &g.v),
                (&|q| &mut q.w_lambda.data, &g.w_lambda.data),
            ];
            for (get, an) in groups {
                for idx in 0..an.len() {
                    let mut q = p.clone();
                    get(&mut q)[idx] += h;
                    let up = loss(&q, &micro, &f);
                    get(&mut q)[idx] -= 2.0 * h;
                    let fd = (up - loss(&q, &micro, &f)) / (2.0 * h);
                    assert!((fd - an[idx]).abs() < 1e-8);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn lambda_simplex_and_bounds(
            micro in prop::collection::vec(1e-7f64..1.0, 6),
            wl in prop::collection::vec(-50.0f64..50.0, 9),
            seed in 0u64..100,
        ) {
            let mut r = rng::seeded(seed);
            let mut p = FusionParams::init(3, &mut r);
            p.w_lambda = Mat::from_vec(3, 3, wl);
            let c = two_clusters();
            let (b, _) = fuse(&micro, &c, &random_features(6, 3, seed), &p, FusionMode::Adaptive);
            prop_assert!(b.lambda.iter().all(|&l| l >= 0.0));
            prop_assert!((b.lambda.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let lo = micro.iter().chain(&b.meso).cloned().fold(b.macro_score, f64::min);
            let hi = micro.iter().chain(&b.meso).cloned().fold(b.macro_score, f64::max);
            for (k, m) in c.members().iter().enumerate() {
                let mlo = m.iter().map(|&i| micro[i]).fold(f64::INFINITY, f64::min);
                let mhi = m.iter().map(|&i| micro[i]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(b.meso[k] >= mlo - 1e-15 && b.meso[k] <= mhi + 1e-15);
                prop_assert!((m.iter().map(|&i| b.beta[i]).sum::<f64>() - 1.0).abs() < 1e-12);
            }
            for i in 0..6 {
                let f = b.final_scores[i];
                prop_assert!(f >= lo - 1e-15 && f <= hi + 1e-15);
                let exact = b.lambda[0] * micro[i] + b.lambda[1] * b.meso_of(&c, i) + b.lambda[2] * b.macro_score;
                prop_assert_eq!(f, exact);
            }
        }
    }
}
