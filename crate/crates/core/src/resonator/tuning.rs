//! Thermal tuning of the resonator: calibration curves, a first-order lag
//! plant, the PD frequency lock and pulse duty-cycle padding.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape-preserving piecewise-cubic (Fritsch–Carlson) interpolant over a
/// strictly monotonic table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTable", into = "RawTable")]
pub struct CalibrationTable {
    x: Vec<f64>,
    y: Vec<f64>,
    slopes: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTable {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl TryFrom<RawTable> for CalibrationTable {
    type Error = Error;

    fn try_from(raw: RawTable) -> Result<Self> {
        CalibrationTable::new(raw.x, raw.y)
    }
}

impl From<CalibrationTable> for RawTable {
    fn from(t: CalibrationTable) -> Self {
        RawTable { x: t.x, y: t.y }
    }
}

const TEMPERATURE_FIXTURE: &str = include_str!("../../fixtures/temperature_frequency.csv");
const LASER_FIXTURE: &str = include_str!("../../fixtures/laser_power_frequency.csv");

impl CalibrationTable {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() || x.len() < 2 {
            return Err(Error::invalid("calibration table needs >= 2 matching x/y points"));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::invalid("calibration table contains non-finite values"));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("calibration x values must be strictly increasing"));
        }
        let rising = y.windows(2).all(|w| w[1] > w[0]);
        let falling = y.windows(2).all(|w| w[1] < w[0]);
        if !rising && !falling {
            return Err(Error::invalid("calibration y values must be strictly monotonic"));
        }
        let slopes = pchip_slopes(&x, &y);
        Ok(Self { x, y, slopes })
    }

    /// Two-column CSV with a header row.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            if rec.len() != 2 {
                return Err(Error::Parse(format!("row {}: expected 2 columns", i + 2)));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: {e}", i + 2)))
            };
            x.push(parse(&rec[0])?);
            y.push(parse(&rec[1])?);
        }
        Self::new(x, y)
    }

    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_csv_str(&text)
    }

    pub fn range(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.x.iter().copied().zip(self.y.iter().copied())
    }

    pub fn eval(&self, at: f64) -> Result<f64> {
        let (lo, hi) = self.range();
        if !(at >= lo && at <= hi) {
            return Err(Error::OutOfRange {
                what: "calibration input",
                value: at,
                min: lo,
                max: hi,
            });
        }
        let k = match self.x.partition_point(|&v| v <= at) {
            0 => 0,
            p => (p - 1).min(self.x.len() - 2),
        };
        let h = self.x[k + 1] - self.x[k];
        let t = (at - self.x[k]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        Ok(h00 * self.y[k] + h10 * h * self.slopes[k] + h01 * self.y[k + 1] + h11 * h * self.slopes[k + 1])
    }

    /// Inverse lookup by bisection (the table is monotonic).
    pub fn invert(&self, target: f64) -> Result<f64> {
        let (lo, hi) = self.range();
        let (ylo, yhi) = (self.y[0], self.y[self.y.len() - 1]);
        let (ymin, ymax) = (ylo.min(yhi), ylo.max(yhi));
        if !(target >= ymin && target <= ymax) {
            return Err(Error::OutOfRange {
                what: "calibration output",
                value: target,
                min: ymin,
                max: ymax,
            });
        }
        let rising = yhi > ylo;
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            let below = self.eval(m)? < target;
            if below == rising {
                a = m;
            } else {
                b = m;
            }
        }
        Ok(0.5 * (a + b))
    }
}

fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let d: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    if n == 2 {
        return vec![d[0], d[0]];
    }
    let mut m = vec![0.0; n];
    for k in 1..n - 1 {
        if d[k - 1] * d[k] <= 0.0 {
            m[k] = 0.0;
        } else {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            m[k] = (w1 + w2) / (w1 / d[k - 1] + w2 / d[k]);
        }
    }
    let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
        let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if s.signum() != d0.signum() {
            0.0
        } else if d0.signum() != d1.signum() && s.abs() > 3.0 * d0.abs() {
            3.0 * d0
        } else {
            s
        }
    };
    m[0] = end(h[0], h[1], d[0], d[1]);
    m[n - 1] = end(h[n - 2], h[n - 3], d[n - 2], d[n - 3]);
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalPlant {
    /// First-order lag time constant, s.
    pub tau_thermal: f64,
    /// K → GHz
    pub freq_vs_temp: CalibrationTable,
    /// mW → GHz
    pub freq_vs_laser_power: CalibrationTable,
}

impl ThermalPlant {
    /// The shipped reconstructed calibration with a 5 s lag.
    pub fn fixture() -> Self {
        Self {
            tau_thermal: 5.0,
            freq_vs_temp: CalibrationTable::from_csv_str(TEMPERATURE_FIXTURE).expect("shipped fixture parses"),
            freq_vs_laser_power: CalibrationTable::from_csv_str(LASER_FIXTURE).expect("shipped fixture parses"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_thermal > 0.0 && self.tau_thermal.is_finite()) {
            return Err(Error::invalid("tau_thermal must be > 0"));
        }
        Ok(())
    }

    /// Frequency the resonator relaxes towards at a given heating power.
    pub fn steady_state(&self, laser_mw: f64) -> Result<f64> {
        let (lo, hi) = self.freq_vs_laser_power.range();
        self.freq_vs_laser_power.eval(laser_mw.clamp(lo, hi))
    }

    /// Advances the resonator frequency by one exact first-order-lag step.
    pub fn advance(&self, f_now: f64, laser_mw: f64, disturbance_ghz: f64, dt: f64) -> Result<f64> {
        let target = self.steady_state(laser_mw)? + disturbance_ghz;
        let a = 1.0 - (-dt / self.tau_thermal).exp();
        Ok(f_now + a * (target - f_now))
    }
}

/// Frequency at cryostat temperature `t` (K) from the plant's calibration.
pub fn temperature_to_frequency(plant: &ThermalPlant, t: f64) -> Result<f64> {
    plant.freq_vs_temp.eval(t)
}

/// Proportional-derivative frequency lock driving the heating laser.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerState {
    /// mW per GHz of error.
    pub k_p: f64,
    /// mW·s per GHz of error.
    pub k_d: f64,
    /// GHz
    pub setpoint: f64,
    /// GHz
    #[serde(default)]
    pub last_error: f64,
    /// Current laser power, mW.
    pub output: f64,
    /// Feed-forward operating point, mW.
    pub bias: f64,
    /// Actuator ceiling, mW.
    pub max_output: f64,
}

impl ControllerState {
    /// Idle controller sitting at its operating point.
    pub fn new(k_p: f64, k_d: f64, setpoint: f64, bias: f64, max_output: f64) -> Result<Self> {
        let c = Self {
            k_p,
            k_d,
            setpoint,
            last_error: 0.0,
            output: bias.clamp(0.0, max_output),
            bias,
            max_output,
        };
        c.validate()?;
        Ok(c)
    }

    /// Default gains for the fixture plant, biased at the heating power that
    /// holds `setpoint` with no disturbance.
    pub fn default_for(plant: &ThermalPlant, setpoint: f64) -> Result<Self> {
        let bias = plant.freq_vs_laser_power.invert(setpoint)?;
        let (_, max) = plant.freq_vs_laser_power.range();
        Self::new(10_000.0, 250.0, setpoint, bias, max)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_output > 0.0) {
            return Err(Error::invalid("max_output must be > 0"));
        }
        if [
            self.k_p,
            self.k_d,
            self.setpoint,
            self.bias,
            self.output,
            self.last_error,
        ]
        .iter()
        .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("controller state must be finite"));
        }
        Ok(())
    }
}

/// One controller update from a frequency reading; returns the new state and
/// the commanded laser power (mW).
pub fn controller_step(ctrl: &ControllerState, measured_f0: f64, dt: f64) -> Result<(ControllerState, f64)> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("dt must be > 0, got {dt}")));
    }
    let error = ctrl.setpoint - measured_f0;
    let raw = ctrl.bias + ctrl.k_p * error + ctrl.k_d * (error - ctrl.last_error) / dt;
    let output = raw.clamp(0.0, ctrl.max_output);
    let next = ControllerState {
        last_error: error,
        output,
        ..*ctrl
    };
    Ok((next, output))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopSample {
    /// s
    pub t: f64,
    /// GHz
    pub f0: f64,
    /// GHz
    pub error: f64,
    /// mW
    pub output: f64,
}

/// Closed-loop simulation: each step reads the resonator, updates the
/// controller, then advances the plant under `disturbance(t)` (GHz).
pub fn simulate_tuning_loop(
    plant: &ThermalPlant,
    ctrl: &ControllerState,
    f_initial: f64,
    dt: f64,
    steps: usize,
    disturbance: impl Fn(f64) -> f64,
) -> Result<Vec<LoopSample>> {
    plant.validate()?;
    ctrl.validate()?;
    let mut state = *ctrl;
    let mut f = f_initial;
    let mut out = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * dt;
        let (next, power) = controller_step(&state, f, dt)?;
        out.push(LoopSample {
            t,
            f0: f,
            error: next.last_error,
            output: power,
        });
        state = next;
        f = plant.advance(f, power, disturbance(t), dt)?;
    }
    Ok(out)
}

/// Padding time that keeps T₁ + T₂ equal to `total` (µs).
pub fn duty_cycle_compensation(t1_mw: f64, total: f64) -> Result<f64> {
    if !(t1_mw >= 0.0) || !(t1_mw <= total) {
        return Err(Error::invalid(format!(
            "microwave time {t1_mw} µs must lie within [0, {total}] µs"
        )));
    }
    Ok(total - t1_mw)
}
