//! Dielectric-resonator response: quality factors, one-port reflection,
//! field enhancement versus detuning and reflection compensation.

mod tuning;

pub use tuning::{
    controller_step, duty_cycle_compensation, simulate_tuning_loop, temperature_to_frequency, CalibrationTable,
    ControllerState, LoopSample, ThermalPlant,
};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResonatorState {
    /// GHz
    pub f0: f64,
    pub q_internal: f64,
    pub q_external: f64,
    /// K
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_epsilon")]
    pub material_epsilon_r: f64,
}

fn default_temperature() -> f64 {
    17.0
}

fn default_epsilon() -> f64 {
    4300.0
}

impl ResonatorState {
    pub fn new(f0: f64, q_internal: f64, q_external: f64) -> Result<Self> {
        let s = Self {
            f0,
            q_internal,
            q_external,
            temperature: default_temperature(),
            material_epsilon_r: default_epsilon(),
        };
        s.validate()?;
        Ok(s)
    }

    /// Near-critically coupled stack as measured on the VNA.
    pub fn critically_coupled() -> Self {
        Self::new(2.967, 1275.0, 1328.0).expect("valid constants")
    }

    /// Overcoupled operating point whose loaded Q is 190.7 with Q_I = 752.
    pub fn chevron_calibrated() -> Self {
        let q_i = 752.0;
        let q_l = 190.7;
        let q_e = 1.0 / (1.0 / q_l - 1.0 / q_i);
        Self::new(2.967, q_i, q_e).expect("valid constants")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f0 > 0.0 && self.f0.is_finite()) {
            return Err(Error::invalid(format!("f0 must be > 0, got {}", self.f0)));
        }
        if !(self.q_internal > 0.0) || !(self.q_external > 0.0) {
            return Err(Error::invalid("quality factors must be > 0"));
        }
        Ok(())
    }

    pub fn q_loaded(&self) -> f64 {
        loaded_q(self.q_internal, self.q_external)
    }

    /// Coupling coefficient κ = Q_I/Q_E; > 1 is overcoupled.
    pub fn coupling(&self) -> f64 {
        self.q_internal / self.q_external
    }

    /// Loaded full width at half maximum, MHz.
    pub fn fwhm_mhz(&self) -> f64 {
        self.f0 * 1e3 / self.q_loaded()
    }
}

/// 1/Q_L = 1/Q_I + 1/Q_E. Infinite inputs drop out.
pub fn loaded_q(q_internal: f64, q_external: f64) -> f64 {
    1.0 / (1.0 / q_internal + 1.0 / q_external)
}

/// One-port reflection coefficient at `f` (GHz).
///
/// Γ = −1 + (2Q_L/Q_E)/(1 + 2iQ_L·δ), δ = (f − f0)/f0; at resonance this is
/// (κ − 1)/(κ + 1) and far off resonance Γ → −1.
pub fn s11_response(state: &ResonatorState, f: f64) -> Complex64 {
    let q_l = state.q_loaded();
    let delta = (f - state.f0) / state.f0;
    let denom = Complex64::new(1.0, 2.0 * q_l * delta);
    Complex64::new(-1.0, 0.0) + Complex64::new(2.0 * q_l / state.q_external, 0.0) / denom
}

/// Field multiplier at resonator detuning `delta` (MHz):
/// `m² = bg² + 1/(1 + (2Q_L·Δ/f0)²)`, unit resonant peak.
pub fn enhancement_factor(state: &ResonatorState, delta: f64, background: f64) -> Result<f64> {
    if !(background >= 0.0 && background.is_finite()) {
        return Err(Error::invalid(format!("background must be >= 0, got {background}")));
    }
    let x = 2.0 * state.q_loaded() * delta / (state.f0 * 1e3);
    Ok((background * background + 1.0 / (1.0 + x * x)).sqrt())
}

/// Background floor that makes the on/off field ratio equal `ratio`.
pub fn background_for_enhancement(ratio: f64) -> Result<f64> {
    if !(ratio > 1.0) {
        return Err(Error::invalid(format!("enhancement ratio must exceed 1, got {ratio}")));
    }
    Ok(1.0 / (ratio * ratio - 1.0).sqrt())
}

/// Fraction of incident power absorbed for a reflection of `s11_db`, in dB.
/// Returns −∞ at total reflection (0 dB).
pub fn compensated_gain(s11_db: f64) -> Result<f64> {
    if s11_db.is_nan() || s11_db > 0.0 {
        return Err(Error::invalid(format!("S11 must be <= 0 dB, got {s11_db}")));
    }
    if s11_db == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let reflected = 10f64.powf(s11_db / 20.0).powi(2);
    Ok(10.0 * (1.0 - reflected).log10())
}
