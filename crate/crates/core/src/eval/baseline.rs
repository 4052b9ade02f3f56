//! Residual-threshold baseline: alarm when a raw conservation residual
//! anywhere in the network exceeds a threshold calibrated on clean data.
//!
//! Mass residuals (m³/s) and energy residuals (m) have different units, so
//! each kind is first scaled by its own clean 99th percentile and a single
//! threshold is then set on the larger of the two scaled values.

use serde::{Deserialize, Serialize};

use super::metrics::{metrics_from, Confusion, Metrics, TtdSummary};
use super::stats::percentile;
use super::{attack_onsets, time_to_detection};
use crate::error::{Error, Result};
use crate::features::{Feature, FeatureTensor};

pub const DEFAULT_FALSE_ALARM_RATE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualBaseline {
    pub mass_scale: f64,
    pub energy_scale: f64,
    pub tau: f64,
    pub target_false_alarm_rate: f64,
}

/// Per-step `(max_i |r_mass|, max_i |r_energy|)`. The tensor must hold raw
/// (unnormalized) residuals.
pub fn residual_maxima(x: &FeatureTensor) -> Result<Vec<(f64, f64)>> {
    let t = &x.config.toggles;
    if t.normalize || !t.phi_mass || !t.phi_energy {
        return Err(Error::InvalidArgument(
            "residual baseline needs raw residual features (normalization off, both residuals on)".into(),
        ));
    }
    Ok((0..x.steps)
        .map(|s| {
            (0..x.nodes).fold((0.0f64, 0.0f64), |(m, e), i| {
                let v = x.get(s, i);
                (m.max(v[Feature::PhiMass as usize].abs()), e.max(v[Feature::PhiEnergy as usize].abs()))
            })
        })
        .collect())
}

fn quantile_of(mut v: Vec<f64>, q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    percentile(&v, q)
}

impl ResidualBaseline {
    /// Calibrate on attack-free tensors so that at most `far` of their
    /// timesteps alarm.
    pub fn calibrate(clean: &[FeatureTensor], far: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&far) {
            return Err(Error::InvalidArgument(format!("false-alarm rate {far} outside [0, 1)")));
        }
        let mut steps = Vec::new();
        for x in clean {
            steps.extend(residual_maxima(x)?);
        }
        if steps.is_empty() {
            return Err(Error::InvalidArgument("no clean timesteps to calibrate on".into()));
        }
        let q = 1.0 - far;
        let floor = f64::MIN_POSITIVE;
        let mass_scale = quantile_of(steps.iter().map(|s| s.0).collect(), q).max(floor);
        let energy_scale = quantile_of(steps.iter().map(|s| s.1).collect(), q).max(floor);
        let mut b = ResidualBaseline {
            mass_scale,
            energy_scale,
            tau: 0.0,
            target_false_alarm_rate: far,
        };
        b.tau = quantile_of(steps.iter().map(|&s| b.statistic(s)).collect(), q);
        Ok(b)
    }

    fn statistic(&self, (m, e): (f64, f64)) -> f64 {
        (m / self.mass_scale).max(e / self.energy_scale)
    }

    pub fn alarms(&self, x: &FeatureTensor) -> Result<Vec<u8>> {
        Ok(residual_maxima(x)?
            .into_iter()
            .map(|s| u8::from(self.statistic(s) > self.tau))
            .collect())
    }

    pub fn evaluate(&self, tensors: &[FeatureTensor], sustain: usize) -> Result<Metrics> {
        let mut c = Confusion::default();
        let mut ttd = TtdSummary::default();
        for x in tensors {
            let a = self.alarms(x)?;
            c.add(Confusion::of(&a, &x.network_labels()));
            ttd.extend(time_to_detection(&a, &attack_onsets(x), sustain, x.timestep));
        }
        Ok(metrics_from(c, &ttd, self.tau, sustain))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureConfig, FeatureToggles, NUM_FEATURES};

    fn raw_tensor(mass: &[f64], energy: &[f64]) -> FeatureTensor {
        let cfg = FeatureConfig {
            toggles: FeatureToggles {
                normalize: false,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut x = FeatureTensor::zeros(mass.len(), 2, cfg);
        for t in 0..mass.len() {
            x.get_mut(t, 1)[Feature::PhiMass as usize] = mass[t];
            x.get_mut(t, 0)[Feature::PhiEnergy as usize] = energy[t];
        }
        x
    }

    #[test]
    fn calibration_hits_the_target_rate() {
        let mass: Vec<f64> = (0..1000).map(|t| 1e-4 * ((t * 37) % 1000) as f64 / 1000.0).collect();
        let energy: Vec<f64> = (0..1000).map(|t| 0.5 * ((t * 91) % 1000) as f64 / 1000.0).collect();
        let x = raw_tensor(&mass, &energy);
        let b = ResidualBaseline::calibrate(std::slice::from_ref(&x), 0.01).unwrap();
        let rate = b.alarms(&x).unwrap().iter().filter(|&&a| a == 1).count() as f64 / 1000.0;
        assert!(rate <= 0.01 && rate > 0.0, "{rate}");
    }

    #[test]
    fn large_residual_of_either_kind_alarms() {
        let clean = raw_tensor(&[1e-5; 50], &[0.01; 50]);
        let b = ResidualBaseline::calibrate(std::slice::from_ref(&clean), 0.01).unwrap();
        let hit = raw_tensor(&[1e-5, 1e-3, 1e-5], &[0.01, 0.01, 2.0]);
        assert_eq!(b.alarms(&hit).unwrap(), vec![0, 1, 1]);
        assert_eq!(hit.get(0, 0).len(), NUM_FEATURES);
    }

    #[test]
    fn normalized_features_are_rejected() {
        let x = FeatureTensor::zeros(3, 2, FeatureConfig::default());
        assert!(residual_maxima(&x).is_err());
    }
}
