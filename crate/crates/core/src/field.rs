//! Optical excitation volume and resonator B₁ field models.
//!
//! Positions are in mm, beam radii are reported in µm, fields in mT. B₁
//! sources are normalized to 1 W of input power and scale with √P.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamModel {
    /// Collimated beam diameter, mm.
    pub d_collimated: f64,
    /// Wavelength, nm.
    pub wavelength: f64,
    /// Lens focal length, mm.
    pub focal_length: f64,
    /// Beam quality / ellipticity factor M (enters squared).
    pub ellipticity_m: f64,
    /// Beam displacement, mm.
    #[serde(default)]
    pub mu_x: f64,
    #[serde(default)]
    pub mu_y: f64,
}

impl Default for BeamModel {
    /// 520 nm excitation focused by a 15.29 mm lens from a 2.2 mm beam.
    fn default() -> Self {
        Self {
            d_collimated: 2.2,
            wavelength: 520.0,
            focal_length: 15.29,
            ellipticity_m: 1.0,
            mu_x: 0.0,
            mu_y: 0.0,
        }
    }
}

impl BeamModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_collimated", self.d_collimated),
            ("wavelength", self.wavelength),
            ("focal_length", self.focal_length),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("beam {name} must be > 0, got {v}")));
            }
        }
        if !(self.ellipticity_m >= 1.0 && self.ellipticity_m.is_finite()) {
            return Err(Error::invalid(format!(
                "beam ellipticity_m must be >= 1, got {}",
                self.ellipticity_m
            )));
        }
        if !self.mu_x.is_finite() || !self.mu_y.is_finite() {
            return Err(Error::invalid("beam displacement must be finite"));
        }
        Ok(())
    }

    fn wavelength_mm(&self) -> f64 {
        self.wavelength * 1e-6
    }

    fn waist_mm(&self) -> f64 {
        let m2 = self.ellipticity_m * self.ellipticity_m;
        4.0 * m2 * self.wavelength_mm() * self.focal_length / (2.0 * PI * self.d_collimated)
    }

    /// Rayleigh range π·w0²/λ, mm.
    pub fn rayleigh_range(&self) -> f64 {
        let w0 = self.waist_mm();
        PI * w0 * w0 / self.wavelength_mm()
    }

    pub(crate) fn spot_radius_mm(&self, z: f64) -> f64 {
        let w0 = self.waist_mm();
        let r = z * self.wavelength_mm() / (PI * w0 * w0);
        w0 * (1.0 + r * r).sqrt()
    }
}

/// Focused waist radius w0 = 4M²λf/(2πD), µm.
pub fn beam_waist(beam: &BeamModel) -> f64 {
    beam.waist_mm() * 1e3
}

/// Spot radius at axial offset `z` (mm) from the focus, µm.
pub fn spot_radius(beam: &BeamModel, z: f64) -> f64 {
    beam.spot_radius_mm(z) * 1e3
}

/// Relative excitation intensity at `(x, y, z)` mm; 1 at the focus.
pub fn laser_intensity(beam: &BeamModel, x: f64, y: f64, z: f64) -> f64 {
    let w0 = beam.waist_mm();
    let wz = beam.spot_radius_mm(z);
    let u = (x - beam.mu_x) / wz;
    let v = (y - beam.mu_y) / wz;
    (w0 / wz).powi(2) * (-2.0 * u * u).exp() * (-2.0 * v * v).exp()
}

/// B₁ per √W sampled on a regular grid, nodes stored with z fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    origin: Vec3,
    spacing: Vec3,
    dims: [usize; 3],
    vectors: Vec<Vec3>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridHeader {
    origin: [f64; 3],
    spacing: [f64; 3],
    dims: [usize; 3],
    /// CSV with `bx,by,bz` rows, relative to the header file.
    data: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeRow {
    bx: f64,
    by: f64,
    bz: f64,
}

impl FieldGrid {
    pub fn new(origin: Vec3, spacing: Vec3, dims: [usize; 3], vectors: Vec<Vec3>) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::invalid(format!("grid dims must be >= 2 per axis, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("grid spacing must be positive"));
        }
        if !origin.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("grid origin must be finite"));
        }
        let n = dims[0] * dims[1] * dims[2];
        if vectors.len() != n {
            return Err(Error::invalid(format!(
                "grid expects {n} node vectors, got {}",
                vectors.len()
            )));
        }
        if vectors.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("grid contains non-finite vectors"));
        }
        Ok(Self {
            origin,
            spacing,
            dims,
            vectors,
        })
    }

    /// Samples a parametric profile on the given lattice.
    pub fn sample(source: &ParametricB1, origin: Vec3, spacing: Vec3, dims: [usize; 3]) -> Result<Self> {
        let mut vectors = Vec::with_capacity(dims.iter().product());
        for ix in 0..dims[0] {
            for iy in 0..dims[1] {
                for iz in 0..dims[2] {
                    let p = origin + Vec3::new(ix as f64 * spacing.x, iy as f64 * spacing.y, iz as f64 * spacing.z);
                    vectors.push(source.field(&p));
                }
            }
        }
        Self::new(origin, spacing, dims, vectors)
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn spacing(&self) -> Vec3 {
        self.spacing
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Far corner of the grid.
    pub fn upper(&self) -> Vec3 {
        self.origin
            + Vec3::new(
                (self.dims[0] - 1) as f64 * self.spacing.x,
                (self.dims[1] - 1) as f64 * self.spacing.y,
                (self.dims[2] - 1) as f64 * self.spacing.z,
            )
    }

    fn node(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        self.vectors[(ix * self.dims[1] + iy) * self.dims[2] + iz]
    }

    /// Trilinear interpolation at `p` (mm), per √W.
    pub fn interpolate(&self, p: &Vec3) -> Result<Vec3> {
        let upper = self.upper();
        let names = ["x (mm)", "y (mm)", "z (mm)"];
        let mut idx = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let lo = self.origin[a];
            let hi = upper[a];
            // tolerate rounding on the upper face
            let slack = 1e-12 * self.spacing[a];
            if !(p[a] >= lo - slack && p[a] <= hi + slack) {
                return Err(Error::OutOfRange {
                    what: names[a],
                    value: p[a],
                    min: lo,
                    max: hi,
                });
            }
            let s = ((p[a] - lo) / self.spacing[a]).max(0.0);
            let i = (s.floor() as usize).min(self.dims[a] - 2);
            idx[a] = i;
            frac[a] = (s - i as f64).clamp(0.0, 1.0);
        }
        let [i, j, k] = idx;
        let [fx, fy, fz] = frac;
        let lerp = |a: Vec3, b: Vec3, t: f64| a * (1.0 - t) + b * t;
        let c00 = lerp(self.node(i, j, k), self.node(i + 1, j, k), fx);
        let c10 = lerp(self.node(i, j + 1, k), self.node(i + 1, j + 1, k), fx);
        let c01 = lerp(self.node(i, j, k + 1), self.node(i + 1, j, k + 1), fx);
        let c11 = lerp(self.node(i, j + 1, k + 1), self.node(i + 1, j + 1, k + 1), fx);
        let c0 = lerp(c00, c10, fy);
        let c1 = lerp(c01, c11, fy);
        Ok(lerp(c0, c1, fz))
    }

    /// Reads a JSON header plus the CSV of node vectors it references.
    pub fn load(header_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(header_path).map_err(|e| Error::Io(format!("{}: {e}", header_path.display())))?;
        let header: GridHeader =
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", header_path.display())))?;
        let data_path = header_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&header.data);
        let mut reader =
            csv::Reader::from_path(&data_path).map_err(|e| Error::Io(format!("{}: {e}", data_path.display())))?;
        let mut vectors = Vec::new();
        for (line, row) in reader.deserialize::<NodeRow>().enumerate() {
            let row = row.map_err(|e| Error::Parse(format!("{} row {}: {e}", data_path.display(), line + 2)))?;
            vectors.push(Vec3::new(row.bx, row.by, row.bz));
        }
        Self::new(
            Vec3::from(header.origin),
            Vec3::from(header.spacing),
            header.dims,
            vectors,
        )
    }

    /// Writes `<stem>.json` and `<stem>.csv` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str, note: Option<&str>) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let csv_name = format!("{stem}.csv");
        let header = GridHeader {
            origin: self.origin.into(),
            spacing: self.spacing.into(),
            dims: self.dims,
            data: PathBuf::from(&csv_name),
            note: note.map(str::to_owned),
        };
        let mut w = csv::Writer::from_path(dir.join(&csv_name))?;
        for v in &self.vectors {
            w.serialize(NodeRow {
                bx: v.x,
                by: v.y,
                bz: v.z,
            })?;
        }
        w.flush()?;
        let header_path = dir.join(format!("{stem}.json"));
        fs::write(&header_path, serde_json::to_string_pretty(&header)? + "\n")?;
        Ok(header_path)
    }
}

/// Closed-form B₁ profile: a raised-cosine radial falloff in the sample plane
/// along a fixed direction tilted from [001].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParametricB1 {
    /// |B₁| at the origin for 1 W, mT/√W.
    pub b1_center: f64,
    /// Radius at which the raised cosine reaches zero, mm.
    pub falloff_scale: f64,
    /// Polar tilt of the field direction from [001], degrees.
    pub tilt_deg: f64,
    /// Azimuth of the tilt, degrees from [100].
    #[serde(default)]
    pub azimuth_deg: f64,
}

/// Relative field remaining 0.5 mm off-centre in the calibrated profile.
pub const EDGE_RATIO_AT_HALF_MM: f64 = 0.625;
/// B₁ tilt from [001] of the calibrated profile, degrees.
pub const B1_TILT_DEG: f64 = 3.723;

impl ParametricB1 {
    /// Profile calibrated to 211.6 MHz/√W of measured Rabi slope at the
    /// centre, 5/8 of the centre field 0.5 mm out and a 3.723° tilt.
    pub fn calibrated() -> Self {
        let conv = crate::budget::conversion_pipeline(
            211.6,
            crate::spin::tetrahedral_angle_deg(),
            crate::spin::GAMMA_E_MHZ_PER_MT,
        )
        .expect("static calibration inputs are valid");
        Self {
            b1_center: conv.b1_total_mt_per_sqrtw,
            falloff_scale: Self::falloff_for(0.5, EDGE_RATIO_AT_HALF_MM),
            tilt_deg: B1_TILT_DEG,
            azimuth_deg: 0.0,
        }
    }

    /// Falloff scale that leaves `ratio` of the centre field at radius `r`.
    pub fn falloff_for(r: f64, ratio: f64) -> f64 {
        PI * r / (2.0 * ratio - 1.0).acos()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b1_center > 0.0 && self.b1_center.is_finite()) {
            return Err(Error::invalid("b1_center must be > 0"));
        }
        if !(self.falloff_scale > 0.0 && self.falloff_scale.is_finite()) {
            return Err(Error::invalid("falloff_scale must be > 0"));
        }
        if !(0.0..90.0).contains(&self.tilt_deg) {
            return Err(Error::invalid(format!(
                "tilt_deg must be in [0, 90), got {}",
                self.tilt_deg
            )));
        }
        if !self.azimuth_deg.is_finite() {
            return Err(Error::invalid("azimuth_deg must be finite"));
        }
        Ok(())
    }

    pub fn direction(&self) -> Vec3 {
        let th = self.tilt_deg.to_radians();
        let ph = self.azimuth_deg.to_radians();
        Vec3::new(th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos())
    }

    /// Radial profile g(r), 1 at the centre.
    pub fn profile(&self, r: f64) -> f64 {
        if r >= self.falloff_scale {
            0.0
        } else {
            0.5 * (1.0 + (PI * r / self.falloff_scale).cos())
        }
    }

    /// Field per √W at `p` (mm).
    pub fn field(&self, p: &Vec3) -> Vec3 {
        let r = p.x.hypot(p.y);
        self.direction() * (self.b1_center * self.profile(r))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum B1Source {
    Grid(FieldGrid),
    Parametric(ParametricB1),
    /// Same field per √W everywhere.
    Uniform(Vec3),
}

impl B1Source {
    /// Axis-aligned region where the source is defined, if bounded.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        match self {
            B1Source::Grid(g) => Some((g.origin(), g.upper())),
            B1Source::Parametric(_) | B1Source::Uniform(_) => None,
        }
    }
}

/// B₁ at `position` (mm) for `power` W of input.
pub fn b1_at(source: &B1Source, position: &Vec3, power: f64) -> Result<Vec3> {
    if !(power >= 0.0 && power.is_finite()) {
        return Err(Error::invalid(format!("power must be >= 0 W, got {power}")));
    }
    let per_root_watt = match source {
        B1Source::Grid(g) => g.interpolate(position)?,
        B1Source::Parametric(p) => p.field(position),
        B1Source::Uniform(v) => *v,
    };
    Ok(per_root_watt * power.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tiny_grid() -> FieldGrid {
        let dims = [2, 3, 2];
        let mut v = Vec::new();
        for ix in 0..2 {
            for iy in 0..3 {
                for iz in 0..2 {
                    v.push(Vec3::new(ix as f64, 10.0 * iy as f64, 100.0 * iz as f64 + 1.0));
                }
            }
        }
        FieldGrid::new(Vec3::new(-1.0, -1.0, 0.0), Vec3::new(2.0, 1.0, 0.5), dims, v).unwrap()
    }

    #[test]
    fn waist_matches_spot_size() {
        let w0 = beam_waist(&BeamModel::default());
        assert!((w0 - 2.30).abs() < 0.01, "w0 = {w0}");
        let wide = BeamModel {
            d_collimated: 4.4,
            ..Default::default()
        };
        assert_relative_eq!(beam_waist(&wide), w0 / 2.0, max_relative = 1e-14);
        let m2 = BeamModel {
            ellipticity_m: 2.0,
            ..Default::default()
        };
        assert_relative_eq!(beam_waist(&m2), 4.0 * w0, max_relative = 1e-14);
    }

    #[test]
    fn spot_radius_at_rayleigh_range() {
        let b = BeamModel::default();
        let w0 = beam_waist(&b);
        assert_relative_eq!(spot_radius(&b, 0.0), w0, max_relative = 1e-15);
        let zr = b.rayleigh_range();
        assert_relative_eq!(spot_radius(&b, zr), w0 * 2f64.sqrt(), max_relative = 1e-14);
        assert_eq!(spot_radius(&b, 0.125), spot_radius(&b, -0.125));
    }

    #[test]
    fn spot_radius_at_half_thickness() {
        let b = BeamModel::default();
        // independent recomputation in SI units
        let w0 = 4.0 * 520e-9 * 15.29e-3 / (2.0 * PI * 2.2e-3);
        let z = 125e-6;
        let wz = w0 * (1.0 + (z * 520e-9 / (PI * w0 * w0)).powi(2)).sqrt();
        assert_relative_eq!(spot_radius(&b, 0.125), wz * 1e6, max_relative = 1e-12);
    }

    #[test]
    fn intensity_shape() {
        let b = BeamModel {
            mu_x: 0.01,
            mu_y: -0.02,
            ..Default::default()
        };
        assert_eq!(laser_intensity(&b, 0.01, -0.02, 0.0), 1.0);
        let z = 0.05;
        let wz = spot_radius(&b, z) * 1e-3;
        let on = laser_intensity(&b, 0.01, -0.02, z);
        let off = laser_intensity(&b, 0.01 + wz, -0.02, z);
        assert_relative_eq!(off, on * (-2f64).exp(), max_relative = 1e-12);
        let a = laser_intensity(&b, 0.013, -0.018, z);
        let r = laser_intensity(&b, 2.0 * 0.01 - 0.013, 2.0 * -0.02 + 0.018, z);
        assert_relative_eq!(a, r, max_relative = 1e-12);
    }

    #[test]
    fn grid_interpolation_identity_and_midpoint() {
        let g = tiny_grid();
        let node = Vec3::new(1.0, 0.0, 0.5);
        assert_eq!(g.interpolate(&node).unwrap(), Vec3::new(1.0, 10.0, 101.0));
        let mid = g.interpolate(&Vec3::new(0.0, 0.0, 0.5)).unwrap();
        assert_relative_eq!(mid, Vec3::new(0.5, 10.0, 101.0), epsilon = 1e-12);
        let src = B1Source::Grid(g.clone());
        let four = b1_at(&src, &Vec3::new(0.3, 0.2, 0.1), 4.0).unwrap();
        let one = b1_at(&src, &Vec3::new(0.3, 0.2, 0.1), 1.0).unwrap();
        assert_relative_eq!(four, one * 2.0, epsilon = 1e-12);
    }

    #[test]
    fn grid_out_of_bounds_is_error() {
        let g = tiny_grid();
        let err = g.interpolate(&Vec3::new(1.5, 0.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::OutOfRange { what: "x (mm)", .. }));
        assert!(g.interpolate(&Vec3::new(0.0, 0.0, -0.01)).is_err());
    }

    #[test]
    fn grid_rejects_bad_shapes() {
        assert!(FieldGrid::new(Vec3::zeros(), Vec3::repeat(1.0), [1, 2, 2], vec![Vec3::zeros(); 4]).is_err());
        assert!(FieldGrid::new(Vec3::zeros(), Vec3::repeat(1.0), [2, 2, 2], vec![Vec3::zeros(); 7]).is_err());
        assert!(FieldGrid::new(
            Vec3::zeros(),
            Vec3::new(1.0, 0.0, 1.0),
            [2, 2, 2],
            vec![Vec3::zeros(); 8]
        )
        .is_err());
    }

    #[test]
    fn grid_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = tiny_grid();
        let header = g.save(dir.path(), "grid", Some("test")).unwrap();
        let back = FieldGrid::load(&header).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn parametric_profile_calibration() {
        let p = ParametricB1::calibrated();
        p.validate().unwrap();
        let c = p.field(&Vec3::zeros()).norm();
        assert_relative_eq!(c, p.b1_center, max_relative = 1e-15);
        for x in [-0.2, 0.2] {
            let r = p.field(&Vec3::new(x, 0.0, 0.0)).norm() / c;
            assert!(r >= 0.93, "g(0.2) = {r}");
        }
        let edge = p.field(&Vec3::new(0.5, 0.0, 0.0)).norm() / c;
        assert_relative_eq!(edge, 0.625, max_relative = 1e-12);
        assert!((p.b1_center - 13.1).abs() < 0.05);
    }
}
