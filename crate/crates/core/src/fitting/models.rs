use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::optimize::{minimize, GlobalOptions, Problem};
use super::{covariance, t_quantile_95, FitResult};
use crate::error::{Error, Result};
use crate::resonator::{loaded_q, s11_response, ResonatorState};
use crate::spin::RabiTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitModel {
    Sinusoid,
    Hahn,
    Lorentzian,
    Sqrtp,
    S11,
}

impl FromStr for FitModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinusoid" => Ok(Self::Sinusoid),
            "hahn" => Ok(Self::Hahn),
            "lorentzian" => Ok(Self::Lorentzian),
            "sqrtp" => Ok(Self::Sqrtp),
            "s11" => Ok(Self::S11),
            other => Err(Error::invalid(format!(
                "unknown fit model '{other}' (expected sinusoid, hahn, lorentzian, sqrtp or s11)"
            ))),
        }
    }
}

impl fmt::Display for FitModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Sinusoid => "sinusoid",
            Self::Hahn => "hahn",
            Self::Lorentzian => "lorentzian",
            Self::Sqrtp => "sqrtp",
            Self::S11 => "s11",
        };
        f.write_str(s)
    }
}

/// Seed and evaluation budget shared by the nonlinear fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSettings {
    pub seed: u64,
    pub budget: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            budget: 12_000,
        }
    }
}

fn options(settings: &FitSettings, guesses: Vec<Vec<f64>>, random_starts: usize) -> GlobalOptions {
    GlobalOptions {
        budget: settings.budget,
        seed: settings.seed,
        random_starts,
        screening: 0,
        guesses,
        initial_step: 0.02,
        refine_top: 3,
        hop_radius: 0.0,
    }
}

/// `a·e^{−(t/τ)^n}·sin(2πΩt + p) + c`
pub fn decaying_sinusoid(t: f64, omega_r: f64, tau: f64, n: f64, phase: f64, offset: f64, amplitude: f64) -> f64 {
    amplitude * (-(t / tau).powf(n)).exp() * (2.0 * PI * omega_r * t + phase).sin() + offset
}

/// `e^{−(t/τ)^n}·(a₁ + a₂·sin²(ωt/2 + p)) + c`
#[allow(clippy::too_many_arguments)]
pub fn hahn_echo(t: f64, tau: f64, n: f64, a1: f64, a2: f64, omega: f64, phase: f64, offset: f64) -> f64 {
    let s = (0.5 * omega * t + phase).sin();
    (-(t / tau).powf(n)).exp() * (a1 + a2 * s * s) + offset
}

/// `offset + amplitude / (1 + (2(x − center)/fwhm)²)`
pub fn lorentzian(x: f64, center: f64, fwhm: f64, amplitude: f64, offset: f64) -> f64 {
    let u = 2.0 * (x - center) / fwhm;
    offset + amplitude / (1.0 + u * u)
}

/// Dominant frequency (cycles per unit of `times`) of a uniformly sampled
/// signal from a zero-padded periodogram with log-parabolic peak refinement.
pub(crate) fn dominant_frequency(times: &[f64], values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 4 {
        return None;
    }
    let dt = (times[n - 1] - times[0]) / (n - 1) as f64;
    let mean = values.iter().sum::<f64>() / n as f64;
    let len = (n.next_power_of_two() * 16).max(1024);
    let mut buf: Vec<rustfft::num_complex::Complex<f64>> = values
        .iter()
        .map(|v| rustfft::num_complex::Complex::new(v - mean, 0.0))
        .collect();
    buf.resize(len, rustfft::num_complex::Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    let power: Vec<f64> = buf[..len / 2].iter().map(|c| c.norm_sqr()).collect();
    let (k, _) = power.iter().enumerate().skip(1).max_by(|a, b| a.1.total_cmp(b.1))?;
    let mut kf = k as f64;
    if k + 1 < power.len() {
        let (a, b, c) = (
            power[k - 1].max(1e-300).ln(),
            power[k].ln(),
            power[k + 1].max(1e-300).ln(),
        );
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            kf += 0.5 * (a - c) / denom;
        }
    }
    Some(kf / (len as f64 * dt))
}

fn check_samples(times: &[f64], values: &[f64], min: usize) -> Result<()> {
    if times.len() != values.len() {
        return Err(Error::invalid("x and y lengths differ"));
    }
    if times.len() < min {
        return Err(Error::invalid(format!(
            "need at least {min} points, got {}",
            times.len()
        )));
    }
    if times.iter().chain(values).any(|v| !v.is_finite()) {
        return Err(Error::invalid("data contain non-finite values"));
    }
    Ok(())
}

fn wrap_pi(p: f64) -> f64 {
    let mut w = (p + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// Linear least squares `y ≈ X·β`; returns β.
fn linear_lsq(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    x.clone().svd(true, true).solve(y, 1e-12).ok()
}

/// Fits `a·e^{−(t/τ)^n}·sin(2πΩt + p) + c` to a trace (t in µs, Ω in MHz).
///
/// Parameters: `omega_r`, `tau`, `n` (bounded to [0.5, 3]), `phase`
/// (wrapped to (−π, π]), `offset`, `amplitude` (≥ 0).
pub fn fit_decaying_sinusoid(trace: &RabiTrace, settings: &FitSettings) -> Result<FitResult> {
    let t = &trace.times;
    let y = &trace.population;
    check_samples(t, y, 8)?;
    let m = t.len();
    let span = t[m - 1] - t[0];
    let dt = span / (m - 1) as f64;
    let ymin = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let ymax = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let yrange = (ymax - ymin).max(1e-12);

    let nyquist = 0.5 / dt;
    let omega_g = dominant_frequency(t, y)
        .unwrap_or(1.0 / span)
        .clamp(0.05 / span, 0.95 * nyquist);
    let tail = &y[m * 2 / 3..];
    let offset_g = tail.iter().sum::<f64>() / tail.len() as f64;

    // log-envelope regression over one-period windows
    let period = 1.0 / omega_g;
    let mut env_t = Vec::new();
    let mut env_v = Vec::new();
    let mut start = 0;
    while start < m {
        let end = t[start] + period;
        let stop = t.partition_point(|&x| x < end).max(start + 1);
        let (idx, peak) = (start..stop)
            .map(|i| (i, (y[i] - offset_g).abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if peak > 1e-6 * yrange {
            env_t.push(t[idx]);
            env_v.push(peak.ln());
        }
        start = stop;
    }
    let tau_max = 100.0 * span;
    let tau_g = if env_t.len() >= 2 {
        let k = env_t.len() as f64;
        let mt = env_t.iter().sum::<f64>() / k;
        let mv = env_v.iter().sum::<f64>() / k;
        let cov: f64 = env_t.iter().zip(&env_v).map(|(a, b)| (a - mt) * (b - mv)).sum();
        let var: f64 = env_t.iter().map(|a| (a - mt).powi(2)).sum();
        let slope = cov / var.max(1e-300);
        if slope < -1e-12 {
            (-1.0 / slope).clamp(2.0 * dt, tau_max)
        } else {
            10.0 * span
        }
    } else {
        span
    };

    // amplitude and phase by linear projection at the guessed frequency
    let mut basis = DMatrix::zeros(m, 2);
    for i in 0..m {
        let e = (-(t[i] / tau_g)).exp();
        basis[(i, 0)] = e * (2.0 * PI * omega_g * t[i]).sin();
        basis[(i, 1)] = e * (2.0 * PI * omega_g * t[i]).cos();
    }
    let rhs = DVector::from_iterator(m, y.iter().map(|v| v - offset_g));
    let (amp_g, phase_g) = match linear_lsq(&basis, &rhs) {
        Some(b) => (b[0].hypot(b[1]), b[1].atan2(b[0])),
        None => (0.5 * yrange, 0.0),
    };

    let lower = vec![
        1e-3 * omega_g.min(1.0 / span),
        0.5 * dt,
        0.5,
        -2.0 * PI,
        ymin - yrange,
        0.0,
    ];
    let upper = vec![nyquist, tau_max, 3.0, 2.0 * PI, ymax + yrange, 4.0 * yrange];
    let names = ["omega_r", "tau", "n", "phase", "offset", "amplitude"];
    let problem = Problem::new(&names, lower, upper, m, |p, out| {
        for i in 0..m {
            out[i] = decaying_sinusoid(t[i], p[0], p[1], p[2], p[3], p[4], p[5]) - y[i];
        }
    })?;
    let clampg = |v: Vec<f64>| -> Vec<f64> {
        v.iter()
            .enumerate()
            .map(|(i, x)| x.clamp(problem.lower[i], problem.upper[i]))
            .collect()
    };
    let guesses = vec![
        clampg(vec![omega_g, tau_g, 1.0, phase_g, offset_g, amp_g]),
        clampg(vec![omega_g, tau_g, 2.0, phase_g, offset_g, amp_g]),
    ];
    let fit = minimize(&problem, &options(settings, guesses, 2))?;
    let mut result = FitResult::from_local(&problem, &fit).with_model("sinusoid");
    let p = result.parameters.get_mut("phase").unwrap();
    *p = wrap_pi(*p);
    Ok(result)
}

/// Fits `e^{−(t/τ)^n}(a₁ + a₂ sin²(ωt/2 + p)) + c` (t in µs, ω in rad/µs).
///
/// `phase` is reported in [−π/2, π/2); when `a₂` is indistinguishable from
/// zero, `omega` and `phase` are flagged as unidentifiable.
pub fn fit_hahn_echo(trace: &RabiTrace, settings: &FitSettings) -> Result<FitResult> {
    let t = &trace.times;
    let y = &trace.population;
    check_samples(t, y, 10)?;
    let m = t.len();
    let span = t[m - 1] - t[0];
    let dt = span / (m - 1) as f64;
    let ymin = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let ymax = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let yrange = (ymax - ymin).max(1e-12);

    let tail = &y[m * 9 / 10..];
    let c_g = tail.iter().sum::<f64>() / tail.len() as f64;

    // envelope-only pre-fit
    let env = Problem::new(
        &["tau", "n", "a", "offset"],
        vec![0.5 * dt, 0.5, -4.0 * yrange, ymin - yrange],
        vec![100.0 * span, 4.0, 4.0 * yrange, ymax + yrange],
        m,
        |p, out| {
            for i in 0..m {
                out[i] = (-(t[i] / p[0]).powf(p[1])).exp() * p[2] + p[3] - y[i];
            }
        },
    )?;
    let env_fit = minimize(
        &env,
        &options(settings, vec![vec![span / 3.0, 1.5, y[0] - c_g, c_g]], 2),
    )?;
    let (tau_g, n_g, c_g) = (env_fit.x[0], env_fit.x[1], env_fit.x[3]);

    let resid: Vec<f64> = env_fit.residuals.iter().map(|r| -r).collect();
    let omega_g = dominant_frequency(t, &resid)
        .map(|f| 2.0 * PI * f)
        .unwrap_or(2.0 * PI / span)
        .clamp(1e-3 / span, PI / dt);

    let mut basis = DMatrix::zeros(m, 3);
    for i in 0..m {
        let e = (-(t[i] / tau_g).powf(n_g)).exp();
        basis[(i, 0)] = e;
        basis[(i, 1)] = e * (omega_g * t[i]).cos();
        basis[(i, 2)] = e * (omega_g * t[i]).sin();
    }
    let rhs = DVector::from_iterator(m, y.iter().map(|v| v - c_g));
    let (a1_g, a2_g, p_g) = match linear_lsq(&basis, &rhs) {
        Some(b) => {
            let a2 = 2.0 * b[1].hypot(b[2]);
            let p = 0.5 * b[2].atan2(-b[1]);
            (b[0] - a2 / 2.0, a2, p)
        }
        None => (y[0] - c_g, 0.0, 0.0),
    };

    let names = ["tau", "n", "a1", "a2", "omega", "phase", "offset"];
    let lower = vec![0.5 * dt, 0.5, -4.0 * yrange, 0.0, 0.0, -PI, ymin - yrange];
    let upper = vec![
        100.0 * span,
        4.0,
        4.0 * yrange,
        4.0 * yrange,
        PI / dt,
        PI,
        ymax + yrange,
    ];
    let problem = Problem::new(&names, lower, upper, m, |p, out| {
        for i in 0..m {
            out[i] = hahn_echo(t[i], p[0], p[1], p[2], p[3], p[4], p[5], p[6]) - y[i];
        }
    })?;
    let clampg = |v: Vec<f64>| -> Vec<f64> {
        v.iter()
            .enumerate()
            .map(|(i, x)| x.clamp(problem.lower[i], problem.upper[i]))
            .collect()
    };
    let guesses = vec![clampg(vec![tau_g, n_g, a1_g, a2_g, omega_g, p_g, c_g])];
    let fit = minimize(&problem, &options(settings, guesses, 2))?;
    let mut result = FitResult::from_local(&problem, &fit).with_model("hahn");

    let p = result.parameters.get_mut("phase").unwrap();
    *p = (*p + PI / 2.0).rem_euclid(PI) - PI / 2.0;
    let a2 = result.get("a2").unwrap();
    let a2_ci = result.ci("a2").unwrap();
    if a2 <= 1e-9 * yrange || a2 <= a2_ci {
        result.ci95.insert("omega".into(), f64::INFINITY);
        result.ci95.insert("phase".into(), f64::INFINITY);
        result
            .warnings
            .push("a2 consistent with zero: omega and phase are unidentifiable".into());
    }
    Ok(result)
}

/// Fits `offset + amplitude/(1 + (2(x − center)/fwhm)²)`; needs ≥ 5 points.
pub fn fit_lorentzian(x: &[f64], y: &[f64], settings: &FitSettings) -> Result<FitResult> {
    check_samples(x, y, 5)?;
    let m = x.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let xspan = (xs[m - 1] - xs[0]).max(1e-300);
    let ymin = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let ymax = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let yrange = (ymax - ymin).max(1e-12);

    let mut sorted = ys.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[m / 2];
    let peak_up = (ymax - median) >= (median - ymin);
    let (k, offset_g, amp_g) = if peak_up {
        let k = (0..m).max_by(|&a, &b| ys[a].total_cmp(&ys[b])).unwrap();
        (k, ymin, ymax - ymin)
    } else {
        let k = (0..m).min_by(|&a, &b| ys[a].total_cmp(&ys[b])).unwrap();
        (k, ymax, ymin - ymax)
    };
    let half = offset_g + amp_g / 2.0;
    let above = |v: f64| if peak_up { v >= half } else { v <= half };
    let mut lo = k;
    while lo > 0 && above(ys[lo - 1]) {
        lo -= 1;
    }
    let mut hi = k;
    while hi + 1 < m && above(ys[hi + 1]) {
        hi += 1;
    }
    let fwhm_g = (xs[hi] - xs[lo]).max(xspan / m as f64);

    let names = ["center", "fwhm", "amplitude", "offset"];
    let lower = vec![xs[0] - xspan, 1e-6 * xspan, -10.0 * yrange, ymin - 10.0 * yrange];
    let upper = vec![xs[m - 1] + xspan, 20.0 * xspan, 10.0 * yrange, ymax + 10.0 * yrange];
    let problem = Problem::new(&names, lower, upper, m, |p, out| {
        for i in 0..m {
            out[i] = lorentzian(xs[i], p[0], p[1], p[2], p[3]) - ys[i];
        }
    })?;
    let guesses = vec![
        vec![xs[k], fwhm_g, amp_g, offset_g],
        vec![xs[k], 2.0 * fwhm_g, 1.2 * amp_g, offset_g - 0.2 * amp_g],
    ];
    let fit = minimize(&problem, &options(settings, guesses, 2))?;
    Ok(FitResult::from_local(&problem, &fit).with_model("lorentzian"))
}

/// Linear fit of `Ω = slope·√P + intercept` (or through the origin).
/// Optional per-point standard deviations weight the fit.
pub fn fit_sqrt_power_line(
    powers: &[f64],
    omegas: &[f64],
    zero_intercept: bool,
    sigmas: Option<&[f64]>,
) -> Result<FitResult> {
    check_samples(powers, omegas, 3)?;
    if powers.iter().any(|&p| p <= 0.0) {
        return Err(Error::invalid("powers must be > 0"));
    }
    let m = powers.len();
    let w: Vec<f64> = match sigmas {
        Some(s) => {
            if s.len() != m || s.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::invalid("sigmas must be positive, one per point"));
            }
            s.iter().map(|v| 1.0 / v).collect()
        }
        None => vec![1.0; m],
    };
    let ncol = if zero_intercept { 1 } else { 2 };
    let mut a = DMatrix::zeros(m, ncol);
    let mut b = DVector::zeros(m);
    for i in 0..m {
        a[(i, 0)] = powers[i].sqrt() * w[i];
        if !zero_intercept {
            a[(i, 1)] = w[i];
        }
        b[i] = omegas[i] * w[i];
    }
    let beta = linear_lsq(&a, &b).ok_or_else(|| Error::invalid("degenerate power data"))?;
    let resid = &a * &beta - &b;
    let ssr = resid.norm_squared();
    let cov = covariance(&a, ssr, m);
    let tq = t_quantile_95(m - ncol);

    let mut result = FitResult {
        model: "sqrtp".into(),
        parameters: Default::default(),
        ci95: Default::default(),
        residual_norm: ssr.sqrt(),
        converged: true,
        iterations: 1,
        warnings: Vec::new(),
    };
    result.parameters.insert("slope".into(), beta[0]);
    result.ci95.insert("slope".into(), tq * cov[(0, 0)].sqrt());
    let (icpt, icpt_ci) = if zero_intercept {
        (0.0, 0.0)
    } else {
        (beta[1], tq * cov[(1, 1)].sqrt())
    };
    result.parameters.insert("intercept".into(), icpt);
    result.ci95.insert("intercept".into(), icpt_ci);
    Ok(result)
}

/// Algebraic (Kåsa) circle fit; returns centre and radius.
fn circle_fit(points: &[Complex64]) -> Option<(Complex64, f64)> {
    let m = points.len();
    let mut a = DMatrix::zeros(m, 3);
    let mut b = DVector::zeros(m);
    for (i, p) in points.iter().enumerate() {
        a[(i, 0)] = p.re;
        a[(i, 1)] = p.im;
        a[(i, 2)] = 1.0;
        b[i] = -(p.re * p.re + p.im * p.im);
    }
    let s = linear_lsq(&a, &b)?;
    let c = Complex64::new(-s[0] / 2.0, -s[1] / 2.0);
    let r2 = c.norm_sqr() - s[2];
    (r2 > 0.0).then(|| (c, r2.sqrt()))
}

/// Fits the one-port reflection model to complex S11 data (f in GHz).
///
/// Initial values come from a circle fit: the diameter gives 2Q_L/Q_E and
/// the angle around the centre linearizes as `tan(−φ/2) = 2Q_L(f − f0)/f0`.
/// The complex least-squares refinement runs over (f0, Q_I, Q_E) so the
/// reported `q_loaded` satisfies the harmonic relation exactly.
pub fn fit_s11_resonance(freqs: &[f64], gamma: &[Complex64], settings: &FitSettings) -> Result<FitResult> {
    if freqs.len() != gamma.len() {
        return Err(Error::invalid("frequency and S11 lengths differ"));
    }
    if freqs.len() < 8 {
        return Err(Error::invalid(format!("need at least 8 points, got {}", freqs.len())));
    }
    if freqs.iter().any(|f| !(f.is_finite() && *f > 0.0)) || gamma.iter().any(|g| !g.is_finite()) {
        return Err(Error::invalid("S11 data contain invalid values"));
    }
    let m = freqs.len();
    let fmin = freqs.iter().cloned().fold(f64::INFINITY, f64::min);
    let fmax = freqs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let kmin = (0..m)
        .min_by(|&a, &b| gamma[a].norm().total_cmp(&gamma[b].norm()))
        .unwrap();

    let (f0_g, ql_g, diameter) = match circle_fit(gamma) {
        Some((centre, radius)) => {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for (f, g) in freqs.iter().zip(gamma) {
                let phi = (g - centre).arg();
                if phi.abs() < 0.8 * PI {
                    xs.push(*f);
                    ys.push((-phi / 2.0).tan());
                }
            }
            let lin = if xs.len() >= 2 {
                let k = xs.len() as f64;
                let mx = xs.iter().sum::<f64>() / k;
                let my = ys.iter().sum::<f64>() / k;
                let sxy: f64 = xs.iter().zip(&ys).map(|(a, b)| (a - mx) * (b - my)).sum();
                let sxx: f64 = xs.iter().map(|a| (a - mx).powi(2)).sum();
                let slope = sxy / sxx.max(1e-300);
                let f0 = mx - my / slope;
                (slope > 0.0 && f0 > fmin - (fmax - fmin) && f0 < fmax + (fmax - fmin)).then(|| (f0, slope * f0 / 2.0))
            } else {
                None
            };
            let (f0, ql) = lin.unwrap_or((freqs[kmin], freqs[kmin] / (fmax - fmin)));
            (f0, ql, (2.0 * radius).clamp(1e-3, 1.999))
        }
        None => (freqs[kmin], freqs[kmin] / (fmax - fmin), 1.0),
    };
    // diameter = 2Q_L/Q_E
    let qe_g = 2.0 * ql_g / diameter;
    let qi_g = 1.0 / (1.0 / ql_g - 1.0 / qe_g).max(1e-12);

    let names = ["f0", "q_internal", "q_external"];
    let qmax = 1e3 * ql_g.max(1.0) + 1e3;
    let lower = vec![fmin - (fmax - fmin), 1e-3, 1e-3];
    let upper = vec![fmax + (fmax - fmin), qmax * 10.0, qmax * 10.0];
    let problem = Problem::new(&names, lower, upper, 2 * m, |p, out| {
        let state = ResonatorState {
            f0: p[0],
            q_internal: p[1],
            q_external: p[2],
            temperature: 0.0,
            material_epsilon_r: 0.0,
        };
        for i in 0..m {
            let d = s11_response(&state, freqs[i]) - gamma[i];
            out[2 * i] = d.re;
            out[2 * i + 1] = d.im;
        }
    })?;
    let guess: Vec<f64> = [f0_g, qi_g, qe_g]
        .iter()
        .enumerate()
        .map(|(i, v)| v.clamp(problem.lower[i], problem.upper[i]))
        .collect();
    let fit = minimize(&problem, &options(settings, vec![guess], 0))?;
    let mut result = FitResult::from_local(&problem, &fit).with_model("s11");

    let (f0, qi, qe) = (fit.x[0], fit.x[1], fit.x[2]);
    let ql = loaded_q(qi, qe);
    // delta method for Q_L = (1/Q_I + 1/Q_E)⁻¹
    let cov = covariance(&fit.jacobian, fit.cost, 2 * m);
    let gi = ql * ql / (qi * qi);
    let ge = ql * ql / (qe * qe);
    let var_ql = gi * gi * cov[(1, 1)] + ge * ge * cov[(2, 2)] + 2.0 * gi * ge * cov[(1, 2)];
    let tq = t_quantile_95(2 * m - 3);
    result.parameters.insert("q_loaded".into(), ql);
    result.ci95.insert(
        "q_loaded".into(),
        if var_ql.is_finite() && var_ql >= 0.0 {
            tq * var_ql.sqrt()
        } else {
            f64::INFINITY
        },
    );
    if fmax - fmin < 3.0 * f0 / ql {
        result
            .warnings
            .push("frequency span covers fewer than 3 linewidths".into());
    }
    Ok(result)
}
