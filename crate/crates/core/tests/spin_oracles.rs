use nalgebra::Matrix3;
use num_complex::Complex64 as C;
use proptest::prelude::*;

use nvreso_core::spin::{
    effective_drive_frequency, hamiltonian_eigenfrequencies, rabi_population, transition_table, NVOrientation,
    SpinParams,
};
use nvreso_core::Vec3;

/// Dense spin-1 Hamiltonian (MHz) in the |+1⟩,|0⟩,|−1⟩ basis quantized
/// along `axis`, diagonalized by nalgebra.
fn dense_levels(b0: &Vec3, axis: &Vec3, p: &SpinParams) -> [f64; 3] {
    let n = axis.normalize();
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = n.cross(&helper).normalize();
    let e2 = n.cross(&e1);
    let (bx, by, bz) = (b0.dot(&e1), b0.dot(&e2), b0.dot(&n));
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let z = C::new(0.0, 0.0);
    let r = |v: f64| C::new(v, 0.0);
    let i = |v: f64| C::new(0.0, v);
    let sx = Matrix3::new(z, r(s), z, r(s), z, r(s), z, r(s), z);
    let sy = Matrix3::new(z, i(-s), z, i(s), z, i(-s), z, i(s), z);
    let sz = Matrix3::new(r(1.0), z, z, z, z, z, z, z, r(-1.0));
    let h = sz * sz * r(p.d_z * 1e3) + (sx * r(bx) + sy * r(by) + sz * r(bz)) * r(p.gamma_e);
    let mut e: Vec<f64> = h.symmetric_eigen().eigenvalues.iter().copied().collect();
    e.sort_by(f64::total_cmp);
    [e[0], e[1], e[2]]
}

/// Rotating-frame two-level Schrödinger equation by fixed-step RK4.
fn rk4_two_level(omega_1: f64, delta: f64, t: f64, steps: usize) -> f64 {
    let h = t / steps as f64;
    // i dc/dt = H c, H = [[−Δ/2, ω₁/2], [ω₁/2, Δ/2]]
    let f = |c: [C; 2]| -> [C; 2] {
        let mi = C::new(0.0, -1.0);
        [
            mi * (c[0] * (-delta / 2.0) + c[1] * (omega_1 / 2.0)),
            mi * (c[0] * (omega_1 / 2.0) + c[1] * (delta / 2.0)),
        ]
    };
    let add = |a: [C; 2], b: [C; 2], s: f64| [a[0] + b[0] * s, a[1] + b[1] * s];
    let mut c = [C::new(1.0, 0.0), C::new(0.0, 0.0)];
    for _ in 0..steps {
        let k1 = f(c);
        let k2 = f(add(c, k1, h / 2.0));
        let k3 = f(add(c, k2, h / 2.0));
        let k4 = f(add(c, k3, h));
        for j in 0..2 {
            c[j] += (k1[j] + k2[j] * 2.0 + k3[j] * 2.0 + k4[j]) * (h / 6.0);
        }
    }
    c[1].norm_sqr()
}

#[test]
fn rabi_population_matches_rk4() {
    let w1 = 2.0 * std::f64::consts::PI * 5.0;
    let dw = 2.0 * std::f64::consts::PI * 3.0;
    let exact = rabi_population(w1, dw, 0.1);
    let numeric = rk4_two_level(w1, dw, 0.1, 20_000);
    assert!((exact - numeric).abs() < 1e-6, "{exact} vs {numeric}");
}

#[test]
fn first_order_along_001_vs_dense() {
    let p = SpinParams::default();
    let b0 = Vec3::new(0.0, 0.0, 5.031);
    let o = NVOrientation::all()[0];
    let (_, f_plus) = hamiltonian_eigenfrequencies(&b0, &o, 0, &p).unwrap();
    let e = dense_levels(&b0, &o.axis(), &p);
    assert!((f_plus - (e[2] - e[0]) * 1e-3).abs() < 1e-12);
    let first_order = p.d_z + p.gamma_e * 5.031 * (1.0 / 3f64.sqrt()) * 1e-3;
    // B⊥ ≈ 4.1 mT adds a second-order shift of (3/2)(γB⊥)²/D ≈ 7 MHz
    let second = 1.5 * (p.gamma_e * 5.031 * (2.0f64 / 3.0).sqrt()).powi(2) / (p.d_z * 1e3) * 1e-3;
    assert!(
        (f_plus - first_order - second).abs() < 5e-4,
        "{f_plus} vs {first_order} + {second}"
    );
}

#[test]
fn drive_of_1mt_along_001() {
    let p = SpinParams::default();
    let o = NVOrientation::all()[0];
    let got = effective_drive_frequency(&Vec3::z(), &o, &p);
    assert!((got - 16.18).abs() < 0.01, "{got}");
}

fn field() -> impl Strategy<Value = Vec3> {
    (
        0.0f64..30.0,
        0.0f64..std::f64::consts::PI,
        0.0f64..std::f64::consts::TAU,
    )
        .prop_map(|(r, th, ph)| Vec3::new(r * th.sin() * ph.cos(), r * th.sin() * ph.sin(), r * th.cos()))
}

proptest! {
    #[test]
    fn eigenfrequencies_match_dense_eigensolve(b0 in field(), k in 0usize..4, m_i in -1i8..=1) {
        let p = SpinParams::default();
        let o = NVOrientation::all()[k];
        let (f_minus, f_plus) = hamiltonian_eigenfrequencies(&b0, &o, m_i, &p).unwrap();
        let e = dense_levels(&b0, &o.axis(), &p);
        let shift = p.hyperfine_a * m_i as f64;
        prop_assert!((f_minus - (e[1] - e[0] - shift) * 1e-3).abs() < 1e-9);
        prop_assert!((f_plus - (e[2] - e[0] + shift) * 1e-3).abs() < 1e-9);
    }

    #[test]
    fn spectrum_invariant_under_cubic_relabelling(b0 in field()) {
        let p = SpinParams::default();
        let freqs = |b: &Vec3| -> Vec<f64> {
            let t = transition_table(b, &p).unwrap();
            let mut f: Vec<f64> = t.plus.iter().chain(&t.minus).map(|x| x.frequency).collect();
            f.sort_by(f64::total_cmp);
            f
        };
        let a = freqs(&b0);
        for b in [Vec3::new(b0.y, b0.x, b0.z), Vec3::new(b0.z, b0.x, b0.y), -b0] {
            for (x, y) in a.iter().zip(freqs(&b)) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn population_is_bounded(w1 in 0.0f64..500.0, dw in -500.0f64..500.0, t in 0.0f64..10.0) {
        let v = rabi_population(w1, dw, t);
        prop_assert!((-1e-9..=1.0 + 1e-9).contains(&v));
        prop_assert!(v <= w1 * w1 / (w1 * w1 + dw * dw).max(1e-300) + 1e-12);
    }
}
