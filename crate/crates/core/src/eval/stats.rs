//! Bootstrap confidence intervals, effect sizes and rank correlation.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::metrics::{prf, Confusion};
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_RESAMPLES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub n_resamples: usize,
    pub seed: u64,
    /// Resamples on which the statistic was undefined and that were dropped.
    pub skipped: usize,
}

/// Linear-interpolated percentile of sorted data, `q ∈ [0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile bootstrap (2.5 / 97.5) over `n_items` exchangeable items.
///
/// `stat` receives the index multiset of one resample and returns `None`
/// where the statistic is undefined; such resamples are counted in
/// `skipped`. The point estimate uses the identity sample.
pub fn bootstrap_ci<F>(n_items: usize, stat: F, n_resamples: usize, seed: u64) -> Result<BootstrapCi>
where
    F: Fn(&[usize]) -> Option<f64>,
{
    if n_items < 2 {
        return Err(Error::InvalidArgument(format!(
            "bootstrap needs at least 2 samples, got {n_items}"
        )));
    }
    if n_resamples == 0 {
        return Err(Error::InvalidArgument("bootstrap needs at least one resample".into()));
    }
    let identity: Vec<usize> = (0..n_items).collect();
    let point = stat(&identity)
        .ok_or_else(|| Error::InvalidArgument("statistic undefined on the full sample".into()))?;

    let mut r = rng::seeded(seed);
    let mut idx = vec![0; n_items];
    let mut values = Vec::with_capacity(n_resamples);
    let mut skipped = 0;
    for _ in 0..n_resamples {
        for slot in idx.iter_mut() {
            *slot = r.random_range(0..n_items);
        }
        match stat(&idx) {
            Some(v) if v.is_finite() => values.push(v),
            _ => skipped += 1,
        }
    }
    if values.is_empty() {
        return Err(Error::InvalidArgument("statistic undefined on every resample".into()));
    }
    values.sort_by(f64::total_cmp);
    Ok(BootstrapCi {
        point,
        lo: percentile(&values, 0.025),
        hi: percentile(&values, 0.975),
        n_resamples,
        seed,
        skipped,
    })
}

/// Bootstrap CI of F1 over timesteps. A resample with no positive truth
/// label is undefined.
pub fn f1_ci(pred: &[u8], truth: &[u8], n_resamples: usize, seed: u64) -> Result<BootstrapCi> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidArgument("prediction and truth lengths differ".into()));
    }
    let stat = |idx: &[usize]| {
        let mut c = Confusion::default();
        for &t in idx {
            c.add(Confusion::of(&pred[t..=t], &truth[t..=t]));
        }
        (c.tp + c.fn_ > 0).then(|| prf(c).2)
    };
    bootstrap_ci(pred.len(), stat, n_resamples, seed)
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn sample_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

/// Cohen's d of `a` over `b` with the pooled standard deviation.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument("Cohen's d needs at least 2 samples per group".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = (((na - 1.0) * sample_variance(a) + (nb - 1.0) * sample_variance(b)) / (na + nb - 2.0)).sqrt();
    if !(pooled > 0.0) {
        return Err(Error::InvalidArgument("Cohen's d undefined: pooled standard deviation is zero".into()));
    }
    Ok((mean(a) - mean(b)) / pooled)
}

/// Ranks starting at 1, ties get the average of the ranks they span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = r;
        }
        start = end;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's ρ with tie correction (Pearson on average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument("rank correlation inputs differ in length".into()));
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument("rank correlation needs at least 2 items".into()));
    }
    pearson(&average_ranks(a), &average_ranks(b))
        .ok_or_else(|| Error::InvalidArgument("rank correlation undefined for a constant ranking".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Bernoulli, Distribution, Normal};

    fn mean_ci(x: &[f64], seed: u64) -> BootstrapCi {
        bootstrap_ci(x.len(), |idx| Some(idx.iter().map(|&i| x[i]).sum::<f64>() / idx.len() as f64), 1000, seed).unwrap()
    }

    #[test]
    fn bernoulli_mean_coverage_is_near_nominal() {
        let mut r = rng::seeded(11);
        let dist = Bernoulli::new(0.8).unwrap();
        let trials = 200;
        let mut covered = 0;
        for k in 0..trials {
            let x: Vec<f64> = (0..200).map(|_| f64::from(u8::from(dist.sample(&mut r)))).collect();
            let ci = mean_ci(&x, k);
            if ci.lo <= 0.8 && 0.8 <= ci.hi {
                covered += 1;
            }
        }
        let rate = covered as f64 / trials as f64;
        assert!((0.90..=0.99).contains(&rate), "coverage {rate}");
    }

    #[test]
    fn width_shrinks_with_root_sample_size() {
        let mut r = rng::seeded(12);
        let dist = Bernoulli::new(0.8).unwrap();
        let width = |m: usize, r: &mut rng::Rng| {
            (0..20)
                .map(|k| {
                    let x: Vec<f64> = (0..m).map(|_| f64::from(u8::from(dist.sample(r)))).collect();
                    let ci = mean_ci(&x, k);
                    ci.hi - ci.lo
                })
                .sum::<f64>()
                / 20.0
        };
        let ratio = width(400, &mut r) / width(100, &mut r);
        assert!((ratio - 0.5).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn f1_ci_skips_resamples_without_positives() {
        let mut truth = vec![0u8; 50];
        truth[7] = 1;
        let pred = truth.clone();
        let ci = f1_ci(&pred, &truth, 1000, 3).unwrap();
        assert_eq!(ci.point, 1.0);
        // P(index 7 never drawn) = (49/50)^50 ≈ 0.364
        let frac = ci.skipped as f64 / 1000.0;
        assert!((frac - 0.364).abs() < 0.05, "{frac}");
        assert_eq!((ci.lo, ci.hi), (1.0, 1.0));
    }

    #[test]
    fn bootstrap_is_deterministic_and_rejects_tiny_input() {
        let x = [0.1, 0.5, 0.2, 0.9, 0.4];
        assert_eq!(mean_ci(&x, 5), mean_ci(&x, 5));
        assert!(bootstrap_ci(1, |_| Some(0.0), 10, 0).is_err());
    }

    #[test]
    fn cohens_d_recovers_unit_effect() {
        let mut r = rng::seeded(13);
        let a: Vec<f64> = Normal::new(0.9, 0.1).unwrap().sample_iter(&mut r).take(500).collect();
        let b: Vec<f64> = Normal::new(0.8, 0.1).unwrap().sample_iter(&mut r).take(500).collect();
        let d = cohens_d(&a, &b).unwrap();
        assert!((d - 1.0).abs() < 0.2, "{d}");
    }

    #[test]
    fn cohens_d_edge_cases() {
        let a = [0.3, 0.5, 0.9];
        assert_eq!(cohens_d(&a, &a).unwrap(), 0.0);
        assert!(cohens_d(&[1.0, 1.0], &[0.0, 0.0]).is_err());
        // means 2 and 4, both variances 1
        assert!((cohens_d(&[1.0, 2.0, 3.0], &[3.0, 4.0, 5.0]).unwrap() + 2.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_oracles() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        // hand-computed with ties: ranks (1.5,1.5,3,4) vs (1,2,3,4)
        let rho = spearman(&[1.0, 1.0, 2.0, 3.0], &a).unwrap();
        assert!((rho - 0.948_683_298_050_513_8).abs() < 1e-12, "{rho}");
        assert!(spearman(&[1.0], &[1.0]).is_err());
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0]), vec![2.5, 1.0, 2.5]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn mean_ci_within_sample_range(x in prop::collection::vec(-10.0f64..10.0, 2..40), seed in 0u64..1000) {
            let ci = mean_ci(&x, seed);
            let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(ci.lo <= ci.hi);
            prop_assert!(lo - 1e-9 <= ci.lo && ci.hi <= hi + 1e-9);
        }

        #[test]
        fn spearman_in_unit_interval(pairs in prop::collection::vec((0.0f64..5.0, 0.0f64..5.0), 3..30)) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            if let Ok(rho) = spearman(&a, &b) {
                prop_assert!((-1.0..=1.0).contains(&rho));
            }
        }
    }
}
