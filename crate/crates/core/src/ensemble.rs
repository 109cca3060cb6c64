//! Volume- and ensemble-averaged Rabi signals and the simulated sweeps built
//! on them: power, resonator detuning (chevron), sample position and an
//! incoherent ODMR map.
//!
//! A trace is the laser-weighted average over the detection volume, the
//! NV orientations and the three ¹⁴N hyperfine lines of the ms = +1
//! transition, further averaged over a Gaussian detuning distribution.

use std::f64::consts::PI;
use std::io::Write;
use std::num::NonZeroUsize;

use gauss_quad::hermite::GaussHermite;
use gauss_quad::legendre::GaussLegendre;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{b1_at, laser_intensity, spot_radius, B1Source, BeamModel};
use crate::fitting::{fit_decaying_sinusoid, fit_lorentzian, FitResult, FitSettings};
use crate::resonator::{compensated_gain, enhancement_factor, ResonatorState};
use crate::spin::{
    effective_drive_frequency, rabi_population, transition_table, NVOrientation, RabiTrace, SpinParams, TraceMetadata,
};
use crate::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleParams {
    /// Gaussian standard deviation of the detuning, MHz.
    pub broadening_sigma: f64,
    /// Gauss–Hermite order for the detuning average.
    pub n_detuning_samples: usize,
    /// mm
    pub volume_min: Vec3,
    /// mm
    pub volume_max: Vec3,
    pub quadrature_points: [usize; 3],
    /// Only used when `noise_std > 0`.
    pub rng_seed: u64,
    #[serde(default)]
    pub noise_std: f64,
    /// Indices into `NVOrientation::all()`.
    #[serde(default = "all_orientations")]
    pub orientations: Vec<usize>,
}

fn all_orientations() -> Vec<usize> {
    vec![0, 1, 2, 3]
}

impl Default for EnsembleParams {
    fn default() -> Self {
        Self {
            broadening_sigma: 1.868,
            n_detuning_samples: 15,
            // 2.6 × 2.6 × 0.25 mm diamond
            volume_min: Vec3::new(-1.3, -1.3, -0.125),
            volume_max: Vec3::new(1.3, 1.3, 0.125),
            quadrature_points: [6, 6, 8],
            rng_seed: 0,
            noise_std: 0.0,
            orientations: all_orientations(),
        }
    }
}

impl EnsembleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.broadening_sigma >= 0.0 && self.broadening_sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "broadening_sigma must be >= 0, got {}",
                self.broadening_sigma
            )));
        }
        if self.n_detuning_samples == 0 {
            return Err(Error::invalid("n_detuning_samples must be >= 1"));
        }
        if self.quadrature_points.iter().any(|&n| n < 2) {
            return Err(Error::invalid("quadrature_points must be >= 2 per axis"));
        }
        for k in 0..3 {
            if !(self.volume_min[k] < self.volume_max[k]) {
                return Err(Error::invalid("volume_min must be below volume_max on every axis"));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("noise_std must be >= 0"));
        }
        if self.orientations.is_empty() || self.orientations.iter().any(|&i| i > 3) {
            return Err(Error::invalid("orientations must be a non-empty subset of 0..=3"));
        }
        Ok(())
    }

    /// Detuning nodes (MHz) and weights summing to one.
    pub fn detuning_nodes(&self) -> Vec<(f64, f64)> {
        if self.broadening_sigma == 0.0 || self.n_detuning_samples == 1 {
            return vec![(0.0, 1.0)];
        }
        let rule = GaussHermite::new(NonZeroUsize::new(self.n_detuning_samples).unwrap());
        rule.as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| (std::f64::consts::SQRT_2 * self.broadening_sigma * x, w / PI.sqrt()))
            .collect()
    }
}

/// Everything that defines a trace except the applied power.
#[derive(Debug, Clone, PartialEq)]
pub struct RabiSetup {
    /// mT
    pub b0: Vec3,
    pub b1: B1Source,
    pub beam: BeamModel,
    pub ensemble: EnsembleParams,
    pub spin: SpinParams,
    /// GHz
    pub drive_freq: f64,
}

impl RabiSetup {
    pub fn validate(&self) -> Result<()> {
        self.beam.validate()?;
        self.ensemble.validate()?;
        self.spin.validate()?;
        if !(self.drive_freq > 0.0 && self.drive_freq.is_finite()) {
            return Err(Error::invalid(format!(
                "drive_freq must be > 0, got {}",
                self.drive_freq
            )));
        }
        if let Some((lo, hi)) = self.b1.bounds() {
            for k in 0..3 {
                if self.ensemble.volume_min[k] < lo[k] || self.ensemble.volume_max[k] > hi[k] {
                    return Err(Error::OutOfRange {
                        what: "volume bounds against B1 grid",
                        value: if self.ensemble.volume_min[k] < lo[k] {
                            self.ensemble.volume_min[k]
                        } else {
                            self.ensemble.volume_max[k]
                        },
                        min: lo[k],
                        max: hi[k],
                    });
                }
            }
        }
        Ok(())
    }
}

/// Mean ms = +1, m_I = 0 transition frequency over the orientations, GHz.
/// Driving here puts the source on the central hyperfine line.
pub fn resonant_drive_frequency(b0: &Vec3, spin: &SpinParams, orientations: &[usize]) -> Result<f64> {
    let table = transition_table(b0, spin)?;
    let lines: Vec<f64> = table
        .plus
        .iter()
        .filter(|t| t.m_i == 0 && orientations.contains(&t.orientation_index))
        .map(|t| t.frequency)
        .collect();
    if lines.is_empty() {
        return Err(Error::invalid("no transitions for the selected orientations"));
    }
    Ok(lines.iter().sum::<f64>() / lines.len() as f64)
}

/// Laser-weighted Gauss–Legendre nodes over the detection volume: positions
/// (mm) and normalized weights.
pub fn volume_nodes(beam: &BeamModel, ens: &EnsembleParams) -> Result<Vec<(Vec3, f64)>> {
    let [nx, ny, nz] = ens.quadrature_points;
    let rule = |n: usize| GaussLegendre::new(NonZeroUsize::new(n).unwrap());
    let (gx, gy, gz) = (rule(nx), rule(ny), rule(nz));
    let map = |(x, w): &(f64, f64), a: f64, b: f64| (0.5 * (a + b) + 0.5 * (b - a) * x, 0.5 * (b - a) * w);

    let mut nodes = Vec::with_capacity(nx * ny * nz);
    for zn in gz.as_node_weight_pairs() {
        let (z, wz) = map(zn, ens.volume_min.z, ens.volume_max.z);
        let half = 4.0 * spot_radius(beam, z) * 1e-3;
        let (x0, x1) = (
            (beam.mu_x - half).max(ens.volume_min.x),
            (beam.mu_x + half).min(ens.volume_max.x),
        );
        let (y0, y1) = (
            (beam.mu_y - half).max(ens.volume_min.y),
            (beam.mu_y + half).min(ens.volume_max.y),
        );
        if x0 >= x1 || y0 >= y1 {
            continue;
        }
        for xn in gx.as_node_weight_pairs() {
            let (x, wx) = map(xn, x0, x1);
            for yn in gy.as_node_weight_pairs() {
                let (y, wy) = map(yn, y0, y1);
                let w = wx * wy * wz * laser_intensity(beam, x, y, z);
                if w > 0.0 {
                    nodes.push((Vec3::new(x, y, z), w));
                }
            }
        }
    }
    let total: f64 = nodes.iter().map(|n| n.1).sum();
    if nodes.is_empty() || !(total > 0.0) {
        return Err(Error::invalid("laser beam does not overlap the sample volume"));
    }
    for n in &mut nodes {
        n.1 /= total;
    }
    Ok(nodes)
}

/// One two-level channel: drive (rad/µs), static detuning (rad/µs), weight.
#[derive(Debug, Clone, Copy)]
struct Channel {
    omega_1: f64,
    delta: f64,
    weight: f64,
}

fn channels(setup: &RabiSetup, power: f64, field_scale: f64) -> Result<Vec<Channel>> {
    setup.validate()?;
    if !(power >= 0.0 && power.is_finite()) {
        return Err(Error::invalid(format!("power must be >= 0 W, got {power}")));
    }
    let orientations = NVOrientation::all();
    let table = transition_table(&setup.b0, &setup.spin)?;
    let lines: Vec<_> = table
        .plus
        .iter()
        .filter(|t| setup.ensemble.orientations.contains(&t.orientation_index))
        .collect();
    let per_line = 1.0 / lines.len() as f64;
    let mut out = Vec::new();
    for (pos, w) in volume_nodes(&setup.beam, &setup.ensemble)? {
        let b1 = b1_at(&setup.b1, &pos, power)? * field_scale;
        for line in &lines {
            let rabi = effective_drive_frequency(&b1, &orientations[line.orientation_index], &setup.spin);
            out.push(Channel {
                omega_1: 2.0 * PI * rabi,
                delta: 2.0 * PI * (line.frequency - setup.drive_freq) * 1e3,
                weight: w * per_line,
            });
        }
    }
    Ok(out)
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.len() < 2 {
        return Err(Error::invalid("time grid needs at least 2 samples"));
    }
    let dt = (t_grid[t_grid.len() - 1] - t_grid[0]) / (t_grid.len() - 1) as f64;
    if !(dt > 0.0) {
        return Err(Error::invalid("time grid must be increasing"));
    }
    for (i, t) in t_grid.iter().enumerate() {
        if (t - (t_grid[0] + dt * i as f64)).abs() > 1e-9 * dt.max(t.abs()) {
            return Err(Error::invalid("time grid must be uniform"));
        }
    }
    Ok(())
}

fn synthesize(
    t_grid: &[f64],
    setup: &RabiSetup,
    power: f64,
    field_scale: f64,
    detunings: &[(f64, f64)],
    seed: u64,
) -> Result<RabiTrace> {
    check_grid(t_grid)?;
    if detunings.is_empty() || detunings.iter().any(|(d, w)| !d.is_finite() || !(*w >= 0.0)) {
        return Err(Error::invalid(
            "detuning samples must be finite with non-negative weights",
        ));
    }
    let wsum: f64 = detunings.iter().map(|d| d.1).sum();
    if !(wsum > 0.0) {
        return Err(Error::invalid("detuning weights sum to zero"));
    }
    let chans = channels(setup, power, field_scale)?;
    let mut population: Vec<f64> = t_grid
        .par_iter()
        .map(|&t| {
            let mut acc = 0.0;
            for c in &chans {
                let mut inner = 0.0;
                for &(d, w) in detunings {
                    inner += w * rabi_population(c.omega_1, c.delta + 2.0 * PI * d, t);
                }
                acc += c.weight * inner;
            }
            acc / wsum
        })
        .collect();
    if setup.ensemble.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, setup.ensemble.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
        for p in &mut population {
            *p += normal.sample(&mut rng);
        }
    }
    RabiTrace::new(
        t_grid.to_vec(),
        population,
        TraceMetadata {
            power: Some(power),
            ..Default::default()
        },
    )
}

/// Ensemble-averaged ms = +1 population on a uniform time grid (µs) for
/// `power` W of drive.
pub fn total_rabi_signal(t_grid: &[f64], setup: &RabiSetup, power: f64) -> Result<RabiTrace> {
    let nodes = setup.ensemble.detuning_nodes();
    synthesize(t_grid, setup, power, 1.0, &nodes, setup.ensemble.rng_seed)
}

/// Like [`total_rabi_signal`] but averaging over explicit `(detuning MHz,
/// weight)` samples instead of Gauss–Hermite nodes.
pub fn total_rabi_signal_with_detunings(
    t_grid: &[f64],
    setup: &RabiSetup,
    power: f64,
    detunings: &[(f64, f64)],
) -> Result<RabiTrace> {
    synthesize(t_grid, setup, power, 1.0, detunings, setup.ensemble.rng_seed)
}

/// Sampling of each simulated trace in a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepOptions {
    /// Window length in periods of the expected oscillation.
    pub periods: f64,
    pub samples: usize,
    #[serde(default)]
    pub fit: FitSettings,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            periods: 6.0,
            samples: 400,
            fit: FitSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// W
    Power,
    /// MHz
    Detuning,
    /// mm
    Position,
}

impl SweepAxis {
    fn column(&self) -> &'static str {
        match self {
            SweepAxis::Power => "power_w",
            SweepAxis::Detuning => "detuning_mhz",
            SweepAxis::Position => "position_mm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: f64,
    /// MHz, after any reflection compensation.
    pub omega_r: f64,
    pub omega_r_ci: f64,
    /// 1/T₂ Rabi, 1/µs
    pub decay_rate: f64,
    pub stretch_n: f64,
    /// MHz, as fitted before compensation.
    pub omega_r_measured: f64,
    /// dB applied to the drive power at this point.
    pub compensation_db: f64,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn axis_values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.axis).collect()
    }

    pub fn omega_r(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.omega_r).collect()
    }

    pub fn decay_rate(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.decay_rate).collect()
    }

    pub fn all_converged(&self) -> bool {
        self.points.iter().all(|p| p.converged)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            self.axis.column(),
            "omega_r_mhz",
            "omega_r_ci_mhz",
            "decay_rate_per_us",
            "stretch_n",
            "omega_r_measured_mhz",
            "compensation_db",
            "converged",
        ])?;
        for p in &self.points {
            w.write_record([
                fmt_num(p.axis),
                fmt_num(p.omega_r),
                fmt_num(p.omega_r_ci),
                fmt_num(p.decay_rate),
                fmt_num(p.stretch_n),
                fmt_num(p.omega_r_measured),
                fmt_num(p.compensation_db),
                p.converged.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest round-trip representation, so reruns are byte-identical.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:?}")
    }
}

/// Writes `time_us,population` rows.
pub fn write_trace_csv<W: Write>(trace: &RabiTrace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time_us", "population"])?;
    for (t, p) in trace.times.iter().zip(&trace.population) {
        w.write_record([fmt_num(*t), fmt_num(*p)])?;
    }
    w.flush()?;
    Ok(())
}

/// Expected oscillation frequency (MHz) including the detuning spread; used
/// only to size the time window.
fn nominal_frequency(setup: &RabiSetup, power: f64, field_scale: f64) -> Result<f64> {
    let centre = Vec3::new(
        setup.beam.mu_x,
        setup.beam.mu_y,
        0.5 * (setup.ensemble.volume_min.z + setup.ensemble.volume_max.z),
    );
    let b1 = b1_at(&setup.b1, &centre, power)? * field_scale;
    let all = NVOrientation::all();
    let sel = &setup.ensemble.orientations;
    let rabi = sel
        .iter()
        .map(|&i| effective_drive_frequency(&b1, &all[i], &setup.spin))
        .sum::<f64>()
        / sel.len() as f64;
    let a = setup.spin.hyperfine_a;
    let spread2 = setup.ensemble.broadening_sigma.powi(2) + 2.0 / 3.0 * a * a;
    Ok((rabi * rabi + spread2).sqrt())
}

struct PointSpec {
    axis: f64,
    power: f64,
    field_scale: f64,
    compensation_db: f64,
    setup: RabiSetup,
}

fn run_point(point: &PointSpec, opts: &SweepOptions, index: usize) -> SweepPoint {
    let attempt = || -> Result<FitResult> {
        let f = nominal_frequency(&point.setup, point.power, point.field_scale)?;
        if !(f > 0.0) {
            return Err(Error::invalid("no drive and no detuning spread: nothing to fit"));
        }
        let t_max = opts.periods / f;
        let times: Vec<f64> = (0..opts.samples)
            .map(|i| t_max * i as f64 / (opts.samples - 1) as f64)
            .collect();
        let nodes = point.setup.ensemble.detuning_nodes();
        let seed = point.setup.ensemble.rng_seed.wrapping_add(index as u64);
        let trace = synthesize(&times, &point.setup, point.power, point.field_scale, &nodes, seed)?;
        fit_decaying_sinusoid(&trace, &opts.fit)
    };
    let comp = 10f64.powf(-point.compensation_db / 20.0);
    match attempt() {
        Ok(fit) => {
            let omega = fit.get("omega_r").unwrap();
            SweepPoint {
                axis: point.axis,
                omega_r: omega * comp,
                omega_r_ci: fit.ci("omega_r").unwrap() * comp,
                decay_rate: 1.0 / fit.get("tau").unwrap(),
                stretch_n: fit.get("n").unwrap(),
                omega_r_measured: omega,
                compensation_db: point.compensation_db,
                converged: fit.converged,
                error: None,
            }
        }
        Err(e) => SweepPoint {
            axis: point.axis,
            omega_r: f64::NAN,
            omega_r_ci: f64::NAN,
            decay_rate: f64::NAN,
            stretch_n: f64::NAN,
            omega_r_measured: f64::NAN,
            compensation_db: point.compensation_db,
            converged: false,
            error: Some(e.to_string()),
        },
    }
}

fn run_sweep(axis: SweepAxis, specs: Vec<PointSpec>, opts: &SweepOptions) -> Result<SweepResult> {
    if opts.samples < 16 || !(opts.periods > 0.0) {
        return Err(Error::invalid("sweep needs >= 16 samples and periods > 0"));
    }
    let points = specs
        .par_iter()
        .enumerate()
        .map(|(i, s)| run_point(s, opts, i))
        .collect();
    Ok(SweepResult { axis, points })
}

/// Fitted Ω_R and 1/T₂ Rabi at each drive power (W).
pub fn simulate_power_sweep(powers: &[f64], setup: &RabiSetup, opts: &SweepOptions) -> Result<SweepResult> {
    setup.validate()?;
    if powers.is_empty() || powers.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
        return Err(Error::invalid("powers must be > 0 W"));
    }
    let specs = powers
        .iter()
        .map(|&p| PointSpec {
            axis: p,
            power: p,
            field_scale: 1.0,
            compensation_db: 0.0,
            setup: setup.clone(),
        })
        .collect();
    run_sweep(SweepAxis::Power, specs, opts)
}

/// Fitted Ω_R while the resonator centre is detuned by `detunings` (MHz)
/// from the fixed drive. The field scales with the resonator enhancement
/// relative to its resonant value; `background` is the off-resonant floor.
pub fn simulate_chevron(
    detunings: &[f64],
    resonator: &ResonatorState,
    background: f64,
    setup: &RabiSetup,
    power: f64,
    opts: &SweepOptions,
) -> Result<SweepResult> {
    setup.validate()?;
    resonator.validate()?;
    if detunings.is_empty() || detunings.iter().any(|d| !d.is_finite()) {
        return Err(Error::invalid("detunings must be finite"));
    }
    let peak = enhancement_factor(resonator, 0.0, background)?;
    let specs = detunings
        .iter()
        .map(|&d| {
            Ok(PointSpec {
                axis: d,
                power,
                field_scale: enhancement_factor(resonator, d, background)? / peak,
                compensation_db: 0.0,
                setup: setup.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    run_sweep(SweepAxis::Detuning, specs, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChevronSummary {
    pub q_loaded: f64,
    pub fwhm_mhz: f64,
    /// On/off resonance Ω_R ratio.
    pub enhancement: f64,
    pub fit: FitResult,
}

/// Lorentzian fit of Ω_R² against detuning: Q_L = f0/FWHM and the on/off
/// field ratio from peak over floor.
pub fn analyze_chevron(sweep: &SweepResult, f0: f64, settings: &FitSettings) -> Result<ChevronSummary> {
    let pts: Vec<&SweepPoint> = sweep.points.iter().filter(|p| p.omega_r.is_finite()).collect();
    let x: Vec<f64> = pts.iter().map(|p| p.axis).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.omega_r * p.omega_r).collect();
    let fit = fit_lorentzian(&x, &y, settings)?;
    let fwhm = fit.get("fwhm").unwrap();
    let offset = fit.get("offset").unwrap();
    let amp = fit.get("amplitude").unwrap();
    let enhancement = if offset > 0.0 {
        ((offset + amp) / offset).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(ChevronSummary {
        q_loaded: f0 * 1e3 / fwhm,
        fwhm_mhz: fwhm,
        enhancement,
        fit,
    })
}

/// Fitted Ω_R with the beam moved to each x position (mm). Each point's
/// drive is reduced by the reflection at that position and the fitted Ω_R
/// is scaled back up by the same factor.
pub fn simulate_position_sweep(
    positions: &[f64],
    s11_per_position: &[f64],
    setup: &RabiSetup,
    power: f64,
    opts: &SweepOptions,
) -> Result<SweepResult> {
    setup.validate()?;
    if positions.len() != s11_per_position.len() {
        return Err(Error::invalid("need one S11 value per position"));
    }
    let mut specs = Vec::with_capacity(positions.len());
    for (&x, &s11) in positions.iter().zip(s11_per_position) {
        let gain = compensated_gain(s11)?;
        if !gain.is_finite() {
            return Err(Error::invalid(format!("S11 of {s11} dB reflects all power at x = {x}")));
        }
        let mut s = setup.clone();
        s.beam.mu_x = x;
        if x < s.ensemble.volume_min.x || x > s.ensemble.volume_max.x {
            return Err(Error::OutOfRange {
                what: "position",
                value: x,
                min: s.ensemble.volume_min.x,
                max: s.ensemble.volume_max.x,
            });
        }
        specs.push(PointSpec {
            axis: x,
            power: power * 10f64.powf(gain / 10.0),
            field_scale: 1.0,
            compensation_db: gain,
            setup: s,
        });
    }
    run_sweep(SweepAxis::Position, specs, opts)
}

/// Incoherent saturation: contrast ∝ Ω²/(Ω² + s_sat²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaturationParams {
    /// MHz
    pub s_sat: f64,
    /// Ω_R with the resonator far detuned, MHz.
    pub omega_off: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdmrSetup {
    /// Unit direction of B₀.
    pub b0_direction: Vec3,
    pub resonator: ResonatorState,
    /// Off-resonant field floor relative to the resonant peak.
    pub background: f64,
    /// Gaussian linewidth (std. dev.) of each transition, MHz.
    pub linewidth: f64,
    pub saturation: SaturationParams,
    pub spin: SpinParams,
}

impl OdmrSetup {
    pub fn validate(&self) -> Result<()> {
        self.resonator.validate()?;
        self.spin.validate()?;
        if !((self.b0_direction.norm() - 1.0).abs() < 1e-9) {
            return Err(Error::invalid("b0_direction must be a unit vector"));
        }
        if !(self.background > 0.0 && self.background.is_finite()) {
            return Err(Error::invalid("background must be > 0"));
        }
        if !(self.linewidth > 0.0 && self.linewidth.is_finite()) {
            return Err(Error::invalid("linewidth must be > 0"));
        }
        if !(self.saturation.s_sat > 0.0) || !(self.saturation.omega_off > 0.0) {
            return Err(Error::invalid("s_sat and omega_off must be > 0"));
        }
        Ok(())
    }

    /// Ω_R (MHz) at microwave frequency `f` (GHz).
    pub fn rabi_at(&self, f: f64) -> Result<f64> {
        let delta = (f - self.resonator.f0) * 1e3;
        Ok(self.saturation.omega_off * enhancement_factor(&self.resonator, delta, self.background)? / self.background)
    }

    fn saturation(&self, omega: f64) -> f64 {
        let s2 = self.saturation.s_sat * self.saturation.s_sat;
        omega * omega / (omega * omega + s2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdmrMap {
    /// mT
    pub b0_values: Vec<f64>,
    /// GHz
    pub mw_freqs: Vec<f64>,
    /// `signal[i][j]` at `b0_values[i]`, `mw_freqs[j]`.
    pub signal: Vec<Vec<f64>>,
}

impl OdmrMap {
    /// Trapezoidal integral of each row over frequency.
    pub fn integrated(&self) -> Vec<f64> {
        self.signal.iter().map(|row| trapezoid(&self.mw_freqs, row)).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["b0_mt", "freq_ghz", "signal"])?;
        for (i, b) in self.b0_values.iter().enumerate() {
            for (j, f) in self.mw_freqs.iter().enumerate() {
                w.write_record([fmt_num(*b), fmt_num(*f), fmt_num(self.signal[i][j])])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(a, b)| 0.5 * (a[1] - a[0]) * (b[0] + b[1]))
        .sum()
}

fn odmr_row(b0: f64, mw_freqs: &[f64], setup: &OdmrSetup, enhanced: bool) -> Result<Vec<f64>> {
    let table = transition_table(&(setup.b0_direction * b0), &setup.spin)?;
    let lines: Vec<f64> = table.plus.iter().chain(&table.minus).map(|t| t.frequency).collect();
    let per_line = 2.0 / lines.len() as f64;
    let s2 = 2.0 * (setup.linewidth * 1e-3).powi(2);
    mw_freqs
        .iter()
        .map(|&f| {
            let omega = if enhanced {
                setup.rabi_at(f)?
            } else {
                setup.saturation.omega_off
            };
            let shape: f64 = lines.iter().map(|&ft| (-(f - ft).powi(2) / s2).exp()).sum();
            Ok(per_line * shape * setup.saturation(omega))
        })
        .collect()
}

/// Steady-state ODMR contrast over a (B₀ magnitude, MW frequency) grid.
pub fn simulate_odmr_map(b0_values: &[f64], mw_freqs: &[f64], setup: &OdmrSetup) -> Result<OdmrMap> {
    setup.validate()?;
    if b0_values.iter().chain(mw_freqs).any(|v| !v.is_finite()) {
        return Err(Error::invalid("map axes must be finite"));
    }
    let signal = b0_values
        .par_iter()
        .map(|&b| odmr_row(b, mw_freqs, setup, true))
        .collect::<Result<Vec<_>>>()?;
    Ok(OdmrMap {
        b0_values: b0_values.to_vec(),
        mw_freqs: mw_freqs.to_vec(),
        signal,
    })
}

/// B₀ magnitude (mT, along `setup.b0_direction`) that puts the mean
/// ms = +1, m_I = 0 line on the resonator.
pub fn resonant_b0(setup: &OdmrSetup) -> Result<f64> {
    let f_at = |b: f64| resonant_drive_frequency(&(setup.b0_direction * b), &setup.spin, &[0, 1, 2, 3]);
    let target = setup.resonator.f0;
    let (mut lo, mut hi) = (0.0, 99.0);
    if f_at(lo)? > target || f_at(hi)? < target {
        return Err(Error::invalid("resonator frequency not reachable by the +1 branch"));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f_at(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Integrated signal at `b0` with the resonator over integrated signal at
/// the same `b0` with the field held at its off-resonant floor.
pub fn incoherent_enhancement(b0: f64, mw_freqs: &[f64], setup: &OdmrSetup) -> Result<f64> {
    setup.validate()?;
    let on = trapezoid(mw_freqs, &odmr_row(b0, mw_freqs, setup, true)?);
    let off = trapezoid(mw_freqs, &odmr_row(b0, mw_freqs, setup, false)?);
    if !(off > 0.0) {
        return Err(Error::invalid("no ODMR lines inside the frequency window"));
    }
    Ok(on / off)
}

/// Ω_R ratio on versus off resonance for the same drive.
pub fn coherent_enhancement(setup: &OdmrSetup) -> Result<f64> {
    Ok(setup.rabi_at(setup.resonator.f0)? / setup.saturation.omega_off)
}

/// Bisects `s_sat` (MHz) so that [`incoherent_enhancement`] at `b0` equals
/// `target`. The ratio rises monotonically from one at s_sat → 0 towards
/// the squared field ratio at s_sat → ∞.
pub fn calibrate_saturation(target: f64, b0: f64, mw_freqs: &[f64], setup: &OdmrSetup) -> Result<f64> {
    let ratio = |s: f64| {
        let mut st = setup.clone();
        st.saturation.s_sat = s;
        incoherent_enhancement(b0, mw_freqs, &st)
    };
    let scale = setup.saturation.omega_off;
    let (mut lo, mut hi) = (1e-6 * scale, 1e6 * scale);
    let (rlo, rhi) = (ratio(lo)?, ratio(hi)?);
    if !(target > rlo && target < rhi) {
        return Err(Error::OutOfRange {
            what: "incoherent enhancement target",
            value: target,
            min: rlo,
            max: rhi,
        });
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if ratio(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-13 {
            break;
        }
    }
    Ok((lo * hi).sqrt())
}
