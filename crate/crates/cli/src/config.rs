//! Experiment configuration: one JSON file per run.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use nvreso_core::budget::LossChain;
use nvreso_core::ensemble::{EnsembleParams, SweepOptions};
use nvreso_core::field::{BeamModel, FieldGrid, ParametricB1};
use nvreso_core::fitting::FitModel;
use nvreso_core::resonator::ResonatorState;
use nvreso_core::spin::{tetrahedral_angle_deg, SpinParams, GAMMA_E_MHZ_PER_MT};
use nvreso_core::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Rabi,
    PowerSweep,
    Chevron,
    PositionSweep,
    OdmrMap,
    TuneLoop,
    Fit,
    Budget,
}

impl ExperimentKind {
    /// JSON key of the parameter block this kind reads.
    pub fn block(&self) -> &'static str {
        match self {
            Self::Rabi => "rabi",
            Self::PowerSweep => "power_sweep",
            Self::Chevron => "chevron",
            Self::PositionSweep => "position_sweep",
            Self::OdmrMap => "odmr_map",
            Self::TuneLoop => "tune_loop",
            Self::Fit => "fit",
            Self::Budget => "budget",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.block().replace('_', "-"))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Free-form annotation lines; echoed into metadata, otherwise ignored.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default)]
    pub sweep: SweepOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rabi: Option<RabiBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_sweep: Option<PowerSweepBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chevron: Option<ChevronBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position_sweep: Option<PositionSweepBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub odmr_map: Option<OdmrBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tune_loop: Option<TuneLoopBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<BudgetBlock>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    pub b0_mt: Vec3,
    pub b1: B1Config,
    pub beam: BeamModel,
    pub ensemble: EnsembleParams,
    pub spin: SpinParams,
    /// Defaults to the central +1 line.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drive_freq_ghz: Option<f64>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            b0_mt: Vec3::new(0.0, 0.0, 5.031),
            b1: B1Config::Parametric(ParametricB1::calibrated()),
            beam: BeamModel::default(),
            ensemble: EnsembleParams::default(),
            spin: SpinParams::default(),
            drive_freq_ghz: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum B1Config {
    Parametric(ParametricB1),
    /// Header JSON written by `FieldGrid::save`.
    Grid {
        header: PathBuf,
    },
    /// mT per √W
    Uniform {
        vector: Vec3,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RabiBlock {
    pub power_w: f64,
    pub t_max_us: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSweepBlock {
    pub powers_w: Vec<f64>,
    /// Force Ω_R = slope·√P through the origin.
    #[serde(default)]
    pub zero_intercept: bool,
}

fn chevron_resonator() -> ResonatorState {
    ResonatorState::chevron_calibrated()
}

fn default_ratio() -> f64 {
    7.1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChevronBlock {
    pub detunings_mhz: Vec<f64>,
    pub power_w: f64,
    #[serde(default = "chevron_resonator")]
    pub resonator: ResonatorState,
    /// On/off resonance field ratio that sets the background floor.
    #[serde(default = "default_ratio")]
    pub enhancement_ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PositionSweepBlock {
    pub positions_mm: Vec<f64>,
    /// One reading per position.
    pub s11_db: Vec<f64>,
    pub power_w: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinSpace {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl LinSpace {
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.start];
        }
        (0..self.points)
            .map(|i| self.start + (self.stop - self.start) * i as f64 / (self.points - 1) as f64)
            .collect()
    }
}

fn z_axis() -> Vec3 {
    Vec3::z()
}

fn default_linewidth() -> f64 {
    1.868
}

fn default_target() -> f64 {
    1.7
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdmrBlock {
    pub b0_mt: LinSpace,
    pub mw_freq_ghz: LinSpace,
    #[serde(default = "z_axis")]
    pub b0_direction: Vec3,
    #[serde(default = "chevron_resonator")]
    pub resonator: ResonatorState,
    #[serde(default = "default_ratio")]
    pub enhancement_ratio: f64,
    #[serde(default = "default_linewidth")]
    pub linewidth_mhz: f64,
    /// Ω_R far from the resonance at the ODMR drive power.
    pub omega_off_mhz: f64,
    /// Calibrated against `target_enhancement` when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_sat_mhz: Option<f64>,
    #[serde(default = "default_target")]
    pub target_enhancement: f64,
}

fn default_tau() -> f64 {
    5.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    #[serde(default = "default_tau")]
    pub tau_thermal_s: f64,
    /// CSV `temperature_k,frequency_ghz`; shipped fixture when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freq_vs_temp_csv: Option<PathBuf>,
    /// CSV `laser_mw,frequency_ghz`; shipped fixture when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freq_vs_laser_power_csv: Option<PathBuf>,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            tau_thermal_s: default_tau(),
            freq_vs_temp_csv: None,
            freq_vs_laser_power_csv: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gains {
    /// mW/GHz
    pub k_p: f64,
    /// mW·s/GHz
    pub k_d: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepDisturbance {
    pub step_mhz: f64,
    pub at_s: f64,
}

fn default_setpoint() -> f64 {
    2.967
}

fn default_dt() -> f64 {
    0.05
}

fn default_duration() -> f64 {
    60.0
}

fn default_tolerance() -> f64 {
    0.5
}

fn default_disturbance() -> StepDisturbance {
    StepDisturbance {
        step_mhz: 10.0,
        at_s: 5.0,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneLoopBlock {
    #[serde(default)]
    pub plant: PlantConfig,
    #[serde(default = "default_setpoint")]
    pub setpoint_ghz: f64,
    /// Built-in gains when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<Gains>,
    #[serde(default = "default_dt")]
    pub dt_s: f64,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_disturbance")]
    pub disturbance: StepDisturbance,
    #[serde(default = "default_tolerance")]
    pub tolerance_mhz: f64,
}

impl Default for TuneLoopBlock {
    fn default() -> Self {
        Self {
            plant: PlantConfig::default(),
            setpoint_ghz: default_setpoint(),
            gains: None,
            dt_s: default_dt(),
            duration_s: default_duration(),
            disturbance: default_disturbance(),
            tolerance_mhz: default_tolerance(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitBlock {
    pub data: PathBuf,
    pub model: FitModel,
    #[serde(default)]
    pub zero_intercept: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
}

fn measured_chain() -> LossChain {
    LossChain::measured(true)
}

fn default_source() -> f64 {
    1e-3
}

fn default_slope() -> f64 {
    211.6
}

fn default_alpha() -> f64 {
    tetrahedral_angle_deg()
}

fn default_gamma() -> f64 {
    GAMMA_E_MHZ_PER_MT
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetBlock {
    #[serde(default = "measured_chain")]
    pub chain: LossChain,
    #[serde(default = "default_source")]
    pub source_power_w: f64,
    #[serde(default = "default_slope")]
    pub slope_mhz_per_sqrtw: f64,
    #[serde(default = "default_alpha")]
    pub alpha_deg: f64,
    #[serde(default = "default_gamma")]
    pub gamma_e: f64,
}

impl Default for BudgetBlock {
    fn default() -> Self {
        Self {
            chain: measured_chain(),
            source_power_w: default_source(),
            slope_mhz_per_sqrtw: default_slope(),
            alpha_deg: default_alpha(),
            gamma_e: default_gamma(),
        }
    }
}

/// A configuration problem, optionally anchored to a position in the file.
#[derive(Debug)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.path.display())?;
        if let Some(l) = self.line {
            write!(f, ":{l}")?;
            if let Some(c) = self.column {
                write!(f, ":{c}")?;
            }
        }
        write!(f, ": {}", self.message)
    }
}

/// Loaded configuration plus the text it came from, for diagnostics.
pub struct Loaded {
    pub config: ExperimentConfig,
    pub path: PathBuf,
    text: String,
}

impl Loaded {
    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: path.to_owned(),
            line: None,
            column: None,
            message: format!("cannot read config: {e}"),
        })?;
        let config: ExperimentConfig = serde_json::from_str(&text).map_err(|e| ConfigError {
            path: path.to_owned(),
            line: Some(e.line()),
            column: Some(e.column()),
            message: e.to_string(),
        })?;
        Ok(Self {
            config,
            path: path.to_owned(),
            text,
        })
    }

    /// Error anchored at the first occurrence of `"key"` in the file.
    pub fn error_at(&self, key: &str, message: impl Into<String>) -> ConfigError {
        let needle = format!("\"{key}\"");
        let (line, column) = match self.text.find(&needle) {
            Some(at) => {
                let before = &self.text[..at];
                let line = before.matches('\n').count() + 1;
                let col = at - before.rfind('\n').map_or(0, |p| p + 1) + 1;
                (Some(line), Some(col))
            }
            None => (None, None),
        };
        ConfigError {
            path: self.path.clone(),
            line,
            column,
            message: message.into(),
        }
    }

    /// Resolves a path from the config relative to the config's directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_owned()
        } else {
            self.path.parent().unwrap_or(Path::new(".")).join(p)
        }
    }

    pub fn load_grid(&self, header: &Path) -> Result<FieldGrid, ConfigError> {
        FieldGrid::load(&self.resolve(header)).map_err(|e| self.error_at("header", format!("field grid: {e}")))
    }
}
