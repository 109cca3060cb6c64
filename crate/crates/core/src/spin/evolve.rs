//! Lab-frame time evolution of the spin-1 Hamiltonian under a linearly
//! polarized drive `B₁·cos(2πft)`, without the rotating-wave approximation.
//!
//! The static part is diagonalized exactly and the state is propagated in its
//! interaction picture with fixed-step RK4. The counter-rotating terms stay in
//! the propagator, so the carrier must be resolved by the step size.

use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64 as C64;

use super::{labelled_eigenstates, NVOrientation, RabiTrace, SpinParams, TraceMetadata};
use crate::error::{Error, Result};
use crate::Vec3;

const MAX_OUTPUT_SAMPLES: usize = 4000;

type CMat = [[C64; 3]; 3];
type CVec = [C64; 3];

fn drive_operator(b1: &Vec3, e1: &Vec3, e2: &Vec3, n: &Vec3, gamma: f64) -> CMat {
    let bx = gamma * b1.dot(e1);
    let by = gamma * b1.dot(e2);
    let bz = gamma * b1.dot(n);
    let z = C64::new(0.0, 0.0);
    // γ(bx Sx + by Sy + bz Sz), basis |+1⟩,|0⟩,|−1⟩
    let up = C64::new(bx, -by) / SQRT_2;
    let dn = C64::new(bx, by) / SQRT_2;
    [[C64::new(bz, 0.0), up, z], [dn, z, up], [z, dn, C64::new(-bz, 0.0)]]
}

/// Lab-frame evolution from the ms = 0 eigenstate. `drive_freq` in GHz,
/// `t_max` in µs, `dt` in ns; requires `dt ≤ 1/(50·drive_freq)`. Returns the
/// population of the eigenstate adiabatically connected to ms = +1.
pub fn evolve_numerical(
    b0: &Vec3,
    b1_amplitude: &Vec3,
    drive_freq: f64,
    orientation: &NVOrientation,
    params: &SpinParams,
    t_max: f64,
    dt: f64,
) -> Result<RabiTrace> {
    params.validate()?;
    if !(drive_freq > 0.0) {
        return Err(Error::invalid("drive frequency must be positive"));
    }
    if !(dt > 0.0) || dt > 1.0 / (50.0 * drive_freq) {
        return Err(Error::invalid(format!(
            "time step {dt} ns does not resolve the {drive_freq} GHz carrier (need <= {} ns)",
            1.0 / (50.0 * drive_freq)
        )));
    }
    if !(t_max > 0.0) {
        return Err(Error::invalid("t_max must be positive"));
    }

    let n_axis = orientation.aligned_with(b0);
    let (e1, e2, n) = n_axis.frame(b0);
    let b_par = n.dot(b0);
    let b_perp = n_axis.perpendicular(b0).norm();
    let (energies, u) = labelled_eigenstates(b_par, b_perp, params);

    // drive in the static eigenbasis, angular units (rad/µs)
    let v = drive_operator(b1_amplitude, &e1, &e2, &n, params.gamma_e);
    let mut vp = [[C64::new(0.0, 0.0); 3]; 3];
    for (j, row) in vp.iter_mut().enumerate() {
        for (k, out) in row.iter_mut().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for a in 0..3 {
                for b in 0..3 {
                    acc += u[a][j] * v[a][b] * u[b][k];
                }
            }
            *out = acc * (2.0 * PI);
        }
    }
    let omega = energies.map(|e| 2.0 * PI * e);
    let carrier = 2.0 * PI * drive_freq * 1e3;

    let rhs = |t: f64, c: &CVec| -> CVec {
        let drive = (carrier * t).cos();
        let phase = omega.map(|w| C64::from_polar(1.0, w * t));
        let mut out = [C64::new(0.0, 0.0); 3];
        for j in 0..3 {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..3 {
                acc += vp[j][k] * phase[k].conj() * c[k];
            }
            // -i · e^{iω_j t} · Σ_k V'_jk e^{-iω_k t} c_k · cos(ωt)
            out[j] = C64::new(0.0, -1.0) * phase[j] * acc * drive;
        }
        out
    };

    let dt_us = dt * 1e-3;
    let steps = (t_max / dt_us).ceil() as usize;
    let stride = steps.div_ceil(MAX_OUTPUT_SAMPLES).max(1);

    let mut c: CVec = [C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
    let mut times = Vec::with_capacity(steps / stride + 2);
    let mut population = Vec::with_capacity(steps / stride + 2);
    times.push(0.0);
    population.push(c[0].norm_sqr());

    let axpy = |a: &CVec, s: f64, b: &CVec| -> CVec { [a[0] + b[0] * s, a[1] + b[1] * s, a[2] + b[2] * s] };
    for step in 0..steps {
        let t = step as f64 * dt_us;
        let k1 = rhs(t, &c);
        let k2 = rhs(t + 0.5 * dt_us, &axpy(&c, 0.5 * dt_us, &k1));
        let k3 = rhs(t + 0.5 * dt_us, &axpy(&c, 0.5 * dt_us, &k2));
        let k4 = rhs(t + dt_us, &axpy(&c, dt_us, &k3));
        for j in 0..3 {
            c[j] += (k1[j] + k2[j] * 2.0 + k3[j] * 2.0 + k4[j]) * (dt_us / 6.0);
        }
        if (step + 1) % stride == 0 {
            times.push((step + 1) as f64 * dt_us);
            population.push(c[0].norm_sqr());
        }
    }

    RabiTrace::new(times, population, TraceMetadata::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unresolved_carrier() {
        let o = NVOrientation::all()[0];
        let p = SpinParams::default();
        let err = evolve_numerical(&Vec3::zeros(), &Vec3::x(), 2.967, &o, &p, 0.1, 0.01);
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn no_drive_keeps_initial_population() {
        let o = NVOrientation::all()[0];
        let p = SpinParams::default();
        let tr = evolve_numerical(&(o.axis() * 3.0), &Vec3::zeros(), 2.967, &o, &p, 0.05, 0.005).unwrap();
        assert!(tr.population.iter().all(|&x| x == 0.0));
    }
}
