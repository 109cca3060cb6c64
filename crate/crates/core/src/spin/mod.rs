//! NV⁻ ground-state spin physics: Hamiltonian eigenfrequencies, the twelve
//! hyperfine/orientation transitions, drive projection and Rabi dynamics.
//!
//! Frequencies are carried in MHz internally; `SpinParams::d_z` is stored in
//! GHz to match how the zero-field splitting is usually quoted.

mod eigen;
mod evolve;

pub use eigen::symmetric_eigen3;
pub use evolve::evolve_numerical;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

/// Electron gyromagnetic ratio of the NV⁻ centre, MHz/mT.
pub const GAMMA_E_MHZ_PER_MT: f64 = 28.024;
/// Zero-field splitting, GHz.
pub const D_Z_GHZ: f64 = 2.878;
/// ¹⁴N hyperfine line spacing, MHz.
pub const HYPERFINE_MHZ: f64 = 2.15;

/// Angle between a ⟨111⟩ NV axis and the [001] direction, degrees.
pub fn tetrahedral_angle_deg() -> f64 {
    (1.0 / 3f64.sqrt()).acos().to_degrees()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpinParams {
    /// Zero-field splitting, GHz.
    pub d_z: f64,
    /// Hyperfine coupling, MHz.
    pub hyperfine_a: f64,
    /// Gyromagnetic ratio, MHz/mT.
    pub gamma_e: f64,
}

impl Default for SpinParams {
    fn default() -> Self {
        Self {
            d_z: D_Z_GHZ,
            hyperfine_a: HYPERFINE_MHZ,
            gamma_e: GAMMA_E_MHZ_PER_MT,
        }
    }
}

impl SpinParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_z > 0.0 && self.d_z.is_finite()) {
            return Err(Error::invalid(format!("d_z must be > 0, got {}", self.d_z)));
        }
        if !(self.hyperfine_a >= 0.0 && self.hyperfine_a.is_finite()) {
            return Err(Error::invalid(format!(
                "hyperfine_a must be >= 0, got {}",
                self.hyperfine_a
            )));
        }
        if !(self.gamma_e > 0.0 && self.gamma_e.is_finite()) {
            return Err(Error::invalid(format!("gamma_e must be > 0, got {}", self.gamma_e)));
        }
        Ok(())
    }

    fn d_z_mhz(&self) -> f64 {
        self.d_z * 1e3
    }
}

/// Quantization axis of one NV⁻ centre class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NVOrientation {
    axis: Vec3,
}

impl NVOrientation {
    /// Accepts any axis whose norm is 1 within 1e-12.
    pub fn new(axis: Vec3) -> Result<Self> {
        if !axis.iter().all(|c| c.is_finite()) || (axis.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "NV axis must be a unit vector, |axis| = {}",
                axis.norm()
            )));
        }
        Ok(Self { axis })
    }

    /// The four tetrahedral ⟨111⟩ axes; pairwise angle arccos(−1/3).
    pub fn all() -> [NVOrientation; 4] {
        let s = 1.0 / 3f64.sqrt();
        [
            Vec3::new(1.0, 1.0, 1.0),
            Vec3::new(1.0, -1.0, -1.0),
            Vec3::new(-1.0, 1.0, -1.0),
            Vec3::new(-1.0, -1.0, 1.0),
        ]
        .map(|v| NVOrientation { axis: v * s })
    }

    pub fn axis(&self) -> Vec3 {
        self.axis
    }

    /// Component of `v` perpendicular to the axis.
    pub fn perpendicular(&self, v: &Vec3) -> Vec3 {
        v - self.axis * self.axis.dot(v)
    }

    /// Right-handed orthonormal frame `(e1, e2, axis)` with `e1` along the
    /// perpendicular part of `hint` when it has one.
    pub(crate) fn frame(&self, hint: &Vec3) -> (Vec3, Vec3, Vec3) {
        let n = self.axis;
        let mut e1 = self.perpendicular(hint);
        if e1.norm() < 1e-12 * hint.norm().max(1.0) {
            let trial = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
            e1 = trial - n * n.dot(&trial);
        }
        let e1 = e1.normalize();
        let e2 = n.cross(&e1);
        (e1, e2, n)
    }

    /// Axis with its sign chosen so that `b0` projects non-negatively; the
    /// ms = +1 branch is labelled relative to this direction.
    pub(crate) fn aligned_with(&self, b0: &Vec3) -> NVOrientation {
        if self.axis.dot(b0) < 0.0 {
            NVOrientation { axis: -self.axis }
        } else {
            *self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// ms = 0 → +1
    Plus,
    /// ms = 0 → −1
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub orientation_index: usize,
    pub m_i: i8,
    /// GHz
    pub frequency: f64,
    pub branch: Branch,
}

/// Both transition branches, each sorted by frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionTable {
    pub plus: Vec<Transition>,
    pub minus: Vec<Transition>,
}

impl TransitionTable {
    pub fn branch(&self, branch: Branch) -> &[Transition] {
        match branch {
            Branch::Plus => &self.plus,
            Branch::Minus => &self.minus,
        }
    }
}

/// Spin-1 Hamiltonian `D·Sz² + γ(B∥ Sz + B⊥ Sx)` in the NV frame (basis
/// |+1⟩, |0⟩, |−1⟩), MHz. Rotating about the axis makes it real.
fn static_hamiltonian(b_par: f64, b_perp: f64, params: &SpinParams) -> [[f64; 3]; 3] {
    let d = params.d_z_mhz();
    let g = params.gamma_e;
    let x = g * b_perp / 2f64.sqrt();
    [[d + g * b_par, x, 0.0], [x, 0.0, x], [0.0, x, d - g * b_par]]
}

/// Eigen-decomposition of the static Hamiltonian, states labelled by
/// adiabatic continuity from B = 0: returns `(energies, vectors)` ordered
/// `[+1, 0, −1]`, energies in MHz, vectors as columns in the |+1⟩,|0⟩,|−1⟩
/// basis.
///
/// With `b_par ≥ 0` and |B| below the ~100 mT level anticrossing the three
/// levels never cross, so ascending energy is always (0, −1, +1). Overlap
/// with the bare states is ambiguous once B⊥ mixes ±1 evenly.
pub(crate) fn labelled_eigenstates(b_par: f64, b_perp: f64, params: &SpinParams) -> ([f64; 3], [[f64; 3]; 3]) {
    let (vals, vecs) = symmetric_eigen3(static_hamiltonian(b_par, b_perp, params));
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
    let (zero, minus, plus) = (idx[0], idx[1], idx[2]);

    let order = [plus, zero, minus];
    let energies = order.map(|c| vals[c]);
    let mut vectors = [[0.0; 3]; 3];
    for (col, &src) in order.iter().enumerate() {
        for row in 0..3 {
            vectors[row][col] = vecs[row][src];
        }
    }
    (energies, vectors)
}

fn check_weak_field(b0: &Vec3) -> Result<()> {
    let b = b0.norm();
    if !b.is_finite() || b >= 100.0 {
        return Err(Error::OutOfRange {
            what: "|b0| (mT)",
            value: b,
            min: 0.0,
            max: 100.0,
        });
    }
    Ok(())
}

/// Both ms = 0 → ±1 transition frequencies (GHz) for one orientation and
/// nuclear projection `m_i`, from an exact eigensolve of the static
/// Hamiltonian plus a `±A·m_i` hyperfine line shift.
pub fn hamiltonian_eigenfrequencies(
    b0: &Vec3,
    orientation: &NVOrientation,
    m_i: i8,
    params: &SpinParams,
) -> Result<(f64, f64)> {
    params.validate()?;
    check_weak_field(b0)?;
    if !(-1..=1).contains(&m_i) {
        return Err(Error::invalid(format!("m_i must be -1, 0 or +1, got {m_i}")));
    }
    // re-check in case the orientation was deserialized
    NVOrientation::new(orientation.axis)?;

    let n = orientation.aligned_with(b0);
    let b_par = n.axis.dot(b0);
    let b_perp = n.perpendicular(b0).norm();
    let (e, _) = labelled_eigenstates(b_par, b_perp, params);
    let shift = params.hyperfine_a * m_i as f64;
    let f_plus = (e[0] - e[1] + shift) * 1e-3;
    let f_minus = (e[2] - e[1] - shift) * 1e-3;
    Ok((f_minus, f_plus))
}

/// All 4 × 3 transitions on each branch, sorted by frequency.
pub fn transition_table(b0: &Vec3, params: &SpinParams) -> Result<TransitionTable> {
    let mut plus = Vec::with_capacity(12);
    let mut minus = Vec::with_capacity(12);
    for (idx, orientation) in NVOrientation::all().iter().enumerate() {
        for m_i in [-1i8, 0, 1] {
            let (f_minus, f_plus) = hamiltonian_eigenfrequencies(b0, orientation, m_i, params)?;
            plus.push(Transition {
                orientation_index: idx,
                m_i,
                frequency: f_plus,
                branch: Branch::Plus,
            });
            minus.push(Transition {
                orientation_index: idx,
                m_i,
                frequency: f_minus,
                branch: Branch::Minus,
            });
        }
    }
    let by_freq = |a: &Transition, b: &Transition| {
        a.frequency
            .total_cmp(&b.frequency)
            .then(a.orientation_index.cmp(&b.orientation_index))
            .then(a.m_i.cmp(&b.m_i))
    };
    plus.sort_by(by_freq);
    minus.sort_by(by_freq);
    Ok(TransitionTable { plus, minus })
}

/// Rabi frequency (cyclic MHz) driven by a linearly polarized field `b1`
/// (mT): `γₑ·|B₁⊥|/√2`.
pub fn effective_drive_frequency(b1: &Vec3, orientation: &NVOrientation, params: &SpinParams) -> f64 {
    params.gamma_e * orientation.perpendicular(b1).norm() / 2f64.sqrt()
}

/// Rotating-frame two-level transfer probability. `omega_1` and
/// `delta_omega` are angular frequencies (rad/µs), `t` in µs.
pub fn rabi_population(omega_1: f64, delta_omega: f64, t: f64) -> f64 {
    let w2 = omega_1 * omega_1 + delta_omega * delta_omega;
    if w2 == 0.0 {
        return 0.0;
    }
    let s = (w2.sqrt() * t / 2.0).sin();
    omega_1 * omega_1 / w2 * s * s
}

/// Uniformly sampled population trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RabiTrace {
    /// µs
    pub times: Vec<f64>,
    pub population: Vec<f64>,
    pub metadata: TraceMetadata,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    /// W
    pub power: Option<f64>,
    /// MHz
    pub detuning: Option<f64>,
    /// mm
    pub position: Option<f64>,
}

impl RabiTrace {
    pub fn new(times: Vec<f64>, population: Vec<f64>, metadata: TraceMetadata) -> Result<Self> {
        if times.len() != population.len() {
            return Err(Error::invalid(format!(
                "trace has {} times but {} samples",
                times.len(),
                population.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("trace times must be strictly increasing"));
        }
        if population.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("trace contains non-finite samples"));
        }
        Ok(Self {
            times,
            population,
            metadata,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// `n` uniformly spaced times from 0 to `t_max` inclusive (µs).
pub fn uniform_times(t_max: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|i| t_max * i as f64 / (n - 1) as f64).collect()
}
