//! Microwave loss-chain bookkeeping and power-to-field conversion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub label: String,
    /// dB; negative for losses.
    pub gain_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossChain {
    pub stages: Vec<Stage>,
    /// GHz
    pub reference_frequency: f64,
}

impl LossChain {
    pub fn new(stages: Vec<Stage>, reference_frequency: f64) -> Result<Self> {
        let chain = Self {
            stages,
            reference_frequency,
        };
        chain.validate()?;
        Ok(chain)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::invalid("loss chain has no stages"));
        }
        if let Some(s) = self.stages.iter().find(|s| !s.gain_db.is_finite()) {
            return Err(Error::invalid(format!("stage '{}' has non-finite gain", s.label)));
        }
        if !(self.reference_frequency > 0.0) {
            return Err(Error::invalid("reference frequency must be positive"));
        }
        Ok(())
    }

    /// The measured line at 2.967 GHz, source to antenna. The antenna
    /// reflection stage is optional since it is often compensated separately.
    pub fn measured(include_reflection: bool) -> Self {
        let mut stages = vec![
            stage("attenuators + cable", -31.25),
            stage("power amplifier", 45.41),
            stage("power combiner", -3.36),
            stage("fridge line", -7.78),
            stage("circulator", -0.60),
        ];
        if include_reflection {
            stages.push(stage("antenna reflection", -7.60));
        }
        Self {
            stages,
            reference_frequency: 2.967,
        }
    }

    /// Stages of `self` followed by those of `other`.
    pub fn concat(&self, other: &LossChain) -> LossChain {
        LossChain {
            stages: self.stages.iter().chain(&other.stages).cloned().collect(),
            reference_frequency: self.reference_frequency,
        }
    }
}

fn stage(label: &str, gain_db: f64) -> Stage {
    Stage {
        label: label.to_owned(),
        gain_db,
    }
}

/// Net gain in dB.
pub fn chain_gain(chain: &LossChain) -> f64 {
    chain.stages.iter().map(|s| s.gain_db).sum()
}

/// Power delivered after the chain, same unit as `p_source`.
pub fn power_at_antenna(p_source: f64, chain: &LossChain) -> Result<f64> {
    if !(p_source > 0.0 && p_source.is_finite()) {
        return Err(Error::invalid(format!("source power must be > 0, got {p_source}")));
    }
    Ok(p_source * 10f64.powf(chain_gain(chain) / 10.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConversionResult {
    /// Measured Rabi slope, MHz/√W.
    pub slope_mhz_per_sqrtw: f64,
    /// Field perpendicular to the NV axis, mT/√W.
    pub b1_perp_mt_per_sqrtw: f64,
    /// Total linear B₁ amplitude, mT/√W.
    pub b1_total_mt_per_sqrtw: f64,
    /// Rabi slope for a field fully perpendicular to the axis, MHz/√W.
    pub theoretical_rabi_mhz_per_sqrtw: f64,
}

/// Converts a measured Rabi slope into field conversion factors.
///
/// `B₁⊥ = √2·slope/γₑ` undoes the spin-1 linear-drive factor, and
/// `B₁ = B₁⊥/sin α` undoes the projection onto the NV axis. The implied
/// perpendicular-geometry Rabi slope is then `γₑ·B₁/√2 = slope/sin α`.
pub fn conversion_pipeline(slope: f64, alpha_deg: f64, gamma_e: f64) -> Result<ConversionResult> {
    if !(slope > 0.0 && slope.is_finite()) {
        return Err(Error::invalid(format!("slope must be > 0, got {slope}")));
    }
    if !(alpha_deg > 0.0 && alpha_deg < 90.0) {
        return Err(Error::invalid(format!(
            "alpha must be in (0, 90) degrees, got {alpha_deg}"
        )));
    }
    if !(gamma_e > 0.0) {
        return Err(Error::invalid("gamma_e must be > 0"));
    }
    let sin_a = alpha_deg.to_radians().sin();
    let b1_perp = 2f64.sqrt() * slope / gamma_e;
    let b1_total = b1_perp / sin_a;
    Ok(ConversionResult {
        slope_mhz_per_sqrtw: slope,
        b1_perp_mt_per_sqrtw: b1_perp,
        b1_total_mt_per_sqrtw: b1_total,
        theoretical_rabi_mhz_per_sqrtw: gamma_e * b1_total / 2f64.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{tetrahedral_angle_deg, GAMMA_E_MHZ_PER_MT};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn measured_chain_totals() {
        assert_relative_eq!(chain_gain(&LossChain::measured(false)), 2.42, epsilon = 1e-9);
        assert_relative_eq!(chain_gain(&LossChain::measured(true)), -5.18, epsilon = 1e-9);
        let zeros = LossChain::new(vec![stage("a", 0.0), stage("b", 0.0)], 1.0).unwrap();
        assert_eq!(chain_gain(&zeros), 0.0);
    }

    #[test]
    fn antenna_power() {
        let flat = LossChain::new(vec![stage("through", 0.0)], 1.0).unwrap();
        assert_eq!(power_at_antenna(1.0, &flat).unwrap(), 1.0);
        let half = LossChain::new(vec![stage("3dB", -3.0103)], 1.0).unwrap();
        assert_relative_eq!(power_at_antenna(1.0, &half).unwrap(), 0.5, epsilon = 1e-5);
        let p = power_at_antenna(1.0, &LossChain::measured(true)).unwrap();
        assert_relative_eq!(p, 10f64.powf(-0.518), max_relative = 1e-12);
        assert!((p - 0.303).abs() < 5e-4);
        assert!(power_at_antenna(0.0, &flat).is_err());
    }

    #[test]
    fn empty_chain_rejected() {
        assert!(LossChain::new(vec![], 2.967).is_err());
        assert!(LossChain::new(vec![stage("x", f64::NAN)], 2.967).is_err());
    }

    #[test]
    fn measured_slope_conversion() {
        let r = conversion_pipeline(211.6, tetrahedral_angle_deg(), GAMMA_E_MHZ_PER_MT).unwrap();
        assert!((r.b1_total_mt_per_sqrtw - 13.1).abs() < 0.1);
        assert!((r.theoretical_rabi_mhz_per_sqrtw - 259.0).abs() < 2.0);
        let perp = conversion_pipeline(211.6, 89.999_999_999, 28.024).unwrap();
        assert_relative_eq!(
            perp.b1_total_mt_per_sqrtw,
            2f64.sqrt() * 211.6 / 28.024,
            max_relative = 1e-12
        );
        assert!(conversion_pipeline(211.6, 90.0, 28.024).is_err());
        assert!(conversion_pipeline(-1.0, 45.0, 28.024).is_err());
    }

    proptest! {
        #[test]
        fn gain_is_permutation_invariant(gains in prop::collection::vec(-40.0f64..40.0, 1..8), rot in 0usize..8) {
            let stages: Vec<Stage> = gains.iter().map(|&g| stage("s", g)).collect();
            let mut rotated = stages.clone();
            let k = rot % rotated.len();
            rotated.rotate_left(k);
            rotated.reverse();
            let a = chain_gain(&LossChain::new(stages, 1.0).unwrap());
            let b = chain_gain(&LossChain::new(rotated, 1.0).unwrap());
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn antenna_power_multiplies_over_concat(g1 in -30.0f64..30.0, g2 in -30.0f64..30.0, p in 1e-6f64..10.0) {
            let a = LossChain::new(vec![stage("a", g1)], 1.0).unwrap();
            let b = LossChain::new(vec![stage("b", g2)], 1.0).unwrap();
            let joint = power_at_antenna(p, &a.concat(&b)).unwrap();
            let staged = power_at_antenna(power_at_antenna(p, &a).unwrap(), &b).unwrap();
            prop_assert!((joint - staged).abs() <= 1e-12 * joint.max(staged));
        }

        #[test]
        fn conversion_round_trip(slope in 1.0f64..1000.0, alpha in 1.0f64..89.0) {
            let r = conversion_pipeline(slope, alpha, 28.024).unwrap();
            let back = r.theoretical_rabi_mhz_per_sqrtw * alpha.to_radians().sin();
            prop_assert!((back - slope).abs() <= 1e-12 * slope);
            let r2 = conversion_pipeline(2.0 * slope, alpha, 28.024).unwrap();
            prop_assert!((r2.b1_total_mt_per_sqrtw - 2.0 * r.b1_total_mt_per_sqrtw).abs() <= 1e-12 * r2.b1_total_mt_per_sqrtw);
        }
    }
}
