//! Experiment runners. Each one validates its inputs first, computes
//! everything in memory, and only then hands files back for writing, so a
//! rejected configuration never leaves partial output behind.

use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use nvreso_core::budget::{chain_gain, conversion_pipeline, power_at_antenna};
use nvreso_core::ensemble::{
    analyze_chevron, calibrate_saturation, coherent_enhancement, fmt_num, incoherent_enhancement, resonant_b0,
    resonant_drive_frequency, simulate_chevron, simulate_odmr_map, simulate_position_sweep, simulate_power_sweep,
    total_rabi_signal, write_trace_csv, OdmrSetup, RabiSetup, SaturationParams, SweepResult,
};
use nvreso_core::field::B1Source;
use nvreso_core::fitting::{fit_decaying_sinusoid, fit_sqrt_power_line, FitSettings};
use nvreso_core::resonator::{
    background_for_enhancement, simulate_tuning_loop, CalibrationTable, ControllerState, ThermalPlant,
};
use nvreso_core::spin::uniform_times;

use crate::config::{BudgetBlock, ExperimentKind, FitBlock, Loaded, TuneLoopBlock};
use crate::fitdata;

/// Why a run stopped.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration or input data; nothing was written. Exit 2.
    Input(String),
    /// Numerical failure after validation. Exit 1.
    Runtime(String),
}

impl From<crate::config::ConfigError> for Failure {
    fn from(e: crate::config::ConfigError) -> Self {
        Failure::Input(e.to_string())
    }
}

/// Files produced by a run, still in memory.
pub struct Product {
    pub files: Vec<(String, Vec<u8>)>,
    pub converged: bool,
    /// Indices of sweep points whose fit did not converge.
    pub nonconverged: Vec<usize>,
    /// Printed on stdout for the single-shot subcommands.
    pub summary: Value,
}

impl Product {
    fn new(summary: Value) -> Self {
        Self {
            files: Vec::new(),
            converged: true,
            nonconverged: Vec::new(),
            summary,
        }
    }

    fn json(&mut self, name: &str, v: &impl Serialize) {
        let mut bytes = serde_json::to_vec_pretty(v).expect("serializable");
        bytes.push(b'\n');
        self.files.push((name.to_owned(), bytes));
    }

    fn csv(&mut self, name: &str, write: impl FnOnce(&mut Vec<u8>) -> nvreso_core::Result<()>) -> Result<(), Failure> {
        let mut buf = Vec::new();
        write(&mut buf).map_err(|e| Failure::Runtime(e.to_string()))?;
        self.files.push((name.to_owned(), buf));
        Ok(())
    }

    fn sweep(&mut self, sweep: &SweepResult) -> Result<(), Failure> {
        self.nonconverged = sweep
            .points
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.converged)
            .map(|(i, _)| i)
            .collect();
        self.converged &= self.nonconverged.is_empty();
        self.csv("sweep.csv", |b| sweep.write_csv(b))
    }
}

fn runtime(e: nvreso_core::Error) -> Failure {
    Failure::Runtime(e.to_string())
}

fn block<'a, T>(loaded: &Loaded, b: &'a Option<T>) -> Result<&'a T, Failure> {
    let kind = loaded.config.experiment;
    b.as_ref().ok_or_else(|| {
        loaded
            .error_at(
                "experiment",
                format!("experiment '{kind}' needs a \"{}\" block", kind.block()),
            )
            .into()
    })
}

fn settings(loaded: &Loaded) -> FitSettings {
    FitSettings {
        seed: loaded.config.seed,
        ..loaded.config.sweep.fit
    }
}

fn rabi_setup(loaded: &Loaded) -> Result<RabiSetup, Failure> {
    let sys = &loaded.config.system;
    let b1 = match &sys.b1 {
        crate::config::B1Config::Parametric(p) => {
            p.validate().map_err(|e| loaded.error_at("b1", e.to_string()))?;
            B1Source::Parametric(*p)
        }
        crate::config::B1Config::Grid { header } => B1Source::Grid(loaded.load_grid(header)?),
        crate::config::B1Config::Uniform { vector } => B1Source::Uniform(*vector),
    };
    let mut ensemble = sys.ensemble.clone();
    ensemble.rng_seed = loaded.config.seed;
    let drive_freq = match sys.drive_freq_ghz {
        Some(f) => f,
        None => resonant_drive_frequency(&sys.b0_mt, &sys.spin, &ensemble.orientations)
            .map_err(|e| loaded.error_at("b0_mt", e.to_string()))?,
    };
    let setup = RabiSetup {
        b0: sys.b0_mt,
        b1,
        beam: sys.beam,
        ensemble,
        spin: sys.spin,
        drive_freq,
    };
    setup.validate().map_err(|e| loaded.error_at("system", e.to_string()))?;
    let sw = &loaded.config.sweep;
    if sw.samples < 16 || !(sw.periods > 0.0) || sw.fit.budget == 0 {
        return Err(loaded
            .error_at("sweep", "sweep needs samples >= 16, periods > 0 and budget > 0")
            .into());
    }
    Ok(setup)
}

fn positive(loaded: &Loaded, key: &str, v: f64) -> Result<(), Failure> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(loaded.error_at(key, format!("{key} must be > 0, got {v}")).into())
    }
}

pub fn execute(loaded: &Loaded) -> Result<Product, Failure> {
    match loaded.config.experiment {
        ExperimentKind::Rabi => rabi(loaded),
        ExperimentKind::PowerSweep => power_sweep(loaded),
        ExperimentKind::Chevron => chevron(loaded),
        ExperimentKind::PositionSweep => position_sweep(loaded),
        ExperimentKind::OdmrMap => odmr_map(loaded),
        ExperimentKind::TuneLoop => {
            let b = block(loaded, &loaded.config.tune_loop)?;
            tune_loop(b, Some(loaded))
        }
        ExperimentKind::Fit => {
            let b = block(loaded, &loaded.config.fit)?;
            fit(b, loaded)
        }
        ExperimentKind::Budget => {
            let b = block(loaded, &loaded.config.budget)?;
            budget(b, Some(loaded))
        }
    }
}

fn rabi(loaded: &Loaded) -> Result<Product, Failure> {
    let b = block(loaded, &loaded.config.rabi)?;
    let setup = rabi_setup(loaded)?;
    positive(loaded, "t_max_us", b.t_max_us)?;
    if !(b.power_w >= 0.0 && b.power_w.is_finite()) {
        return Err(loaded.error_at("power_w", "power_w must be >= 0").into());
    }
    if b.samples < 8 {
        return Err(loaded.error_at("samples", "samples must be >= 8").into());
    }
    let trace = total_rabi_signal(&uniform_times(b.t_max_us, b.samples), &setup, b.power_w).map_err(runtime)?;
    let fit = fit_decaying_sinusoid(&trace, &settings(loaded)).map_err(runtime)?;
    let mut p = Product::new(json!({ "drive_freq_ghz": setup.drive_freq, "fit": fit }));
    p.converged = fit.converged;
    p.csv("trace.csv", |buf| write_trace_csv(&trace, buf))?;
    p.json("fit.json", &fit);
    Ok(p)
}

fn power_sweep(loaded: &Loaded) -> Result<Product, Failure> {
    let b = block(loaded, &loaded.config.power_sweep)?;
    let setup = rabi_setup(loaded)?;
    if b.powers_w.len() < 3 || b.powers_w.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
        return Err(loaded
            .error_at("powers_w", "powers_w needs at least 3 values, all > 0")
            .into());
    }
    let opts = nvreso_core::ensemble::SweepOptions {
        fit: settings(loaded),
        ..loaded.config.sweep
    };
    let sweep = simulate_power_sweep(&b.powers_w, &setup, &opts).map_err(runtime)?;
    let ok: Vec<_> = sweep.points.iter().filter(|p| p.omega_r.is_finite()).collect();
    let powers: Vec<f64> = ok.iter().map(|p| p.axis).collect();
    let omegas: Vec<f64> = ok.iter().map(|p| p.omega_r).collect();
    let line = fit_sqrt_power_line(&powers, &omegas, b.zero_intercept, None).ok();
    let conversion = line.as_ref().and_then(|l| {
        conversion_pipeline(
            l.get("slope").unwrap(),
            nvreso_core::spin::tetrahedral_angle_deg(),
            setup.spin.gamma_e,
        )
        .ok()
    });
    let summary = json!({ "drive_freq_ghz": setup.drive_freq, "sqrt_power_fit": line, "conversion": conversion });
    let mut p = Product::new(summary.clone());
    p.sweep(&sweep)?;
    p.converged &= line.is_some();
    p.json("summary.json", &summary);
    Ok(p)
}

fn chevron(loaded: &Loaded) -> Result<Product, Failure> {
    let b = block(loaded, &loaded.config.chevron)?;
    let setup = rabi_setup(loaded)?;
    b.resonator
        .validate()
        .map_err(|e| loaded.error_at("resonator", e.to_string()))?;
    let bg = background_for_enhancement(b.enhancement_ratio)
        .map_err(|e| loaded.error_at("enhancement_ratio", e.to_string()))?;
    positive(loaded, "power_w", b.power_w)?;
    if b.detunings_mhz.len() < 5 || b.detunings_mhz.iter().any(|d| !d.is_finite()) {
        return Err(loaded
            .error_at("detunings_mhz", "detunings_mhz needs at least 5 finite values")
            .into());
    }
    let opts = nvreso_core::ensemble::SweepOptions {
        fit: settings(loaded),
        ..loaded.config.sweep
    };
    let sweep = simulate_chevron(&b.detunings_mhz, &b.resonator, bg, &setup, b.power_w, &opts).map_err(runtime)?;
    let analysis = analyze_chevron(&sweep, b.resonator.f0, &settings(loaded)).ok();
    let summary = json!({ "background": bg, "analysis": analysis });
    let mut p = Product::new(summary.clone());
    p.sweep(&sweep)?;
    p.converged &= analysis.as_ref().is_some_and(|a| a.fit.converged);
    p.json("chevron.json", &summary);
    Ok(p)
}

fn position_sweep(loaded: &Loaded) -> Result<Product, Failure> {
    let b = block(loaded, &loaded.config.position_sweep)?;
    let setup = rabi_setup(loaded)?;
    positive(loaded, "power_w", b.power_w)?;
    if b.positions_mm.is_empty() || b.positions_mm.len() != b.s11_db.len() {
        return Err(loaded
            .error_at("s11_db", "s11_db needs exactly one value per position")
            .into());
    }
    if let Some(v) = b.s11_db.iter().find(|v| !(**v < 0.0)) {
        return Err(loaded.error_at("s11_db", format!("S11 must be < 0 dB, got {v}")).into());
    }
    let (lo, hi) = (setup.ensemble.volume_min.x, setup.ensemble.volume_max.x);
    if let Some(x) = b.positions_mm.iter().find(|x| !(**x >= lo && **x <= hi)) {
        return Err(loaded
            .error_at(
                "positions_mm",
                format!("position {x} mm outside the sample [{lo}, {hi}]"),
            )
            .into());
    }
    let opts = nvreso_core::ensemble::SweepOptions {
        fit: settings(loaded),
        ..loaded.config.sweep
    };
    let sweep = simulate_position_sweep(&b.positions_mm, &b.s11_db, &setup, b.power_w, &opts).map_err(runtime)?;
    let centre = sweep
        .points
        .iter()
        .min_by(|a, b| a.axis.abs().total_cmp(&b.axis.abs()))
        .map(|p| p.omega_r)
        .unwrap_or(f64::NAN);
    let relative: Vec<Value> = sweep
        .points
        .iter()
        .map(|p| json!({ "position_mm": p.axis, "relative_omega_r": p.omega_r / centre }))
        .collect();
    let summary = json!({ "relative_to_centre": relative });
    let mut p = Product::new(summary.clone());
    p.sweep(&sweep)?;
    p.json("summary.json", &summary);
    Ok(p)
}

fn odmr_map(loaded: &Loaded) -> Result<Product, Failure> {
    let b = block(loaded, &loaded.config.odmr_map)?;
    let bg = background_for_enhancement(b.enhancement_ratio)
        .map_err(|e| loaded.error_at("enhancement_ratio", e.to_string()))?;
    positive(loaded, "omega_off_mhz", b.omega_off_mhz)?;
    for (key, ls) in [("b0_mt", b.b0_mt), ("mw_freq_ghz", b.mw_freq_ghz)] {
        if ls.points < 2 || !(ls.stop > ls.start) {
            return Err(loaded
                .error_at(key, format!("{key} needs stop > start and points >= 2"))
                .into());
        }
    }
    let norm = b.b0_direction.norm();
    if !(norm > 0.0) {
        return Err(loaded.error_at("b0_direction", "b0_direction must be non-zero").into());
    }
    let mut setup = OdmrSetup {
        b0_direction: b.b0_direction / norm,
        resonator: b.resonator,
        background: bg,
        linewidth: b.linewidth_mhz,
        saturation: SaturationParams {
            s_sat: b.s_sat_mhz.unwrap_or(1.0),
            omega_off: b.omega_off_mhz,
        },
        spin: loaded.config.system.spin,
    };
    setup
        .validate()
        .map_err(|e| loaded.error_at("odmr_map", e.to_string()))?;
    let freqs = b.mw_freq_ghz.values();
    let b0_on = resonant_b0(&setup).map_err(|e| loaded.error_at("resonator", e.to_string()))?;
    let s_sat = match b.s_sat_mhz {
        Some(s) => s,
        None => calibrate_saturation(b.target_enhancement, b0_on, &freqs, &setup)
            .map_err(|e| loaded.error_at("target_enhancement", e.to_string()))?,
    };
    setup.saturation.s_sat = s_sat;
    let map = simulate_odmr_map(&b.b0_mt.values(), &freqs, &setup).map_err(runtime)?;
    let summary = json!({
        "s_sat_mhz": s_sat,
        "resonant_b0_mt": b0_on,
        "incoherent_enhancement": incoherent_enhancement(b0_on, &freqs, &setup).map_err(runtime)?,
        "coherent_enhancement": coherent_enhancement(&setup).map_err(runtime)?,
    });
    let mut p = Product::new(summary.clone());
    p.csv("map.csv", |buf| map.write_csv(buf))?;
    let integrated = map.integrated();
    p.csv("integrated.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["b0_mt", "integrated_signal"])?;
        for (b0, s) in map.b0_values.iter().zip(&integrated) {
            w.write_record([fmt_num(*b0), fmt_num(*s)])?;
        }
        w.flush()?;
        Ok(())
    })?;
    p.json("odmr.json", &summary);
    Ok(p)
}

fn table(
    loaded: Option<&Loaded>,
    path: &Option<std::path::PathBuf>,
    key: &str,
) -> Result<Option<CalibrationTable>, Failure> {
    let Some(path) = path else { return Ok(None) };
    let full = match loaded {
        Some(l) => l.resolve(path),
        None => path.clone(),
    };
    CalibrationTable::from_csv(&full).map(Some).map_err(|e| match loaded {
        Some(l) => l.error_at(key, format!("{}: {e}", full.display())).into(),
        None => Failure::Input(format!("{}: {e}", full.display())),
    })
}

pub fn tune_loop(b: &TuneLoopBlock, loaded: Option<&Loaded>) -> Result<Product, Failure> {
    let input = |key: &str, msg: String| -> Failure {
        match loaded {
            Some(l) => l.error_at(key, msg).into(),
            None => Failure::Input(msg),
        }
    };
    let mut plant = ThermalPlant::fixture();
    plant.tau_thermal = b.plant.tau_thermal_s;
    if let Some(t) = table(loaded, &b.plant.freq_vs_temp_csv, "freq_vs_temp_csv")? {
        plant.freq_vs_temp = t;
    }
    if let Some(t) = table(loaded, &b.plant.freq_vs_laser_power_csv, "freq_vs_laser_power_csv")? {
        plant.freq_vs_laser_power = t;
    }
    plant.validate().map_err(|e| input("tau_thermal_s", e.to_string()))?;
    let mut ctrl =
        ControllerState::default_for(&plant, b.setpoint_ghz).map_err(|e| input("setpoint_ghz", e.to_string()))?;
    if let Some(g) = b.gains {
        ctrl.k_p = g.k_p;
        ctrl.k_d = g.k_d;
        ctrl.validate().map_err(|e| input("gains", e.to_string()))?;
    }
    if !(b.dt_s > 0.0 && b.duration_s > b.dt_s && b.tolerance_mhz > 0.0) {
        return Err(input(
            "dt_s",
            "need dt_s > 0, duration_s > dt_s and tolerance_mhz > 0".into(),
        ));
    }
    let steps = (b.duration_s / b.dt_s).round() as usize;
    let step = b.disturbance;
    let samples = simulate_tuning_loop(&plant, &ctrl, b.setpoint_ghz, b.dt_s, steps, |t| {
        if t >= step.at_s {
            step.step_mhz * 1e-3
        } else {
            0.0
        }
    })
    .map_err(runtime)?;

    let tol = b.tolerance_mhz * 1e-3;
    let last_out = samples.iter().rposition(|s| s.error.abs() > tol);
    let settle_time = match last_out {
        None => Some(0.0),
        Some(i) if i + 1 < samples.len() => Some((samples[i + 1].t - step.at_s).max(0.0)),
        Some(_) => None,
    };
    let final_error = samples.last().map(|s| s.error * 1e3).unwrap_or(f64::NAN);
    let summary = json!({
        "settled": settle_time.is_some(),
        "settle_time_s": settle_time,
        "settle_time_constants": settle_time.map(|t| t / plant.tau_thermal),
        "final_error_mhz": final_error,
        "peak_error_mhz": samples.iter().map(|s| s.error.abs()).fold(0.0, f64::max) * 1e3,
    });
    let mut p = Product::new(summary.clone());
    p.converged = settle_time.is_some();
    p.csv("loop.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["t_s", "f0_ghz", "error_mhz", "laser_mw"])?;
        for s in &samples {
            w.write_record([fmt_num(s.t), fmt_num(s.f0), fmt_num(s.error * 1e3), fmt_num(s.output)])?;
        }
        w.flush()?;
        Ok(())
    })?;
    p.json("tune_loop.json", &summary);
    Ok(p)
}

fn fit(b: &FitBlock, loaded: &Loaded) -> Result<Product, Failure> {
    let mut s = settings(loaded);
    if let Some(budget) = b.budget {
        s.budget = budget;
    }
    let path = loaded.resolve(&b.data);
    let result = fitdata::fit_file(&path, b.model, b.zero_intercept, &s)?;
    let mut p = Product::new(serde_json::to_value(&result).expect("serializable"));
    p.converged = result.converged;
    p.json("fit.json", &result);
    Ok(p)
}

pub fn budget(b: &BudgetBlock, loaded: Option<&Loaded>) -> Result<Product, Failure> {
    let input = |key: &str, msg: String| -> Failure {
        match loaded {
            Some(l) => l.error_at(key, msg).into(),
            None => Failure::Input(msg),
        }
    };
    b.chain.validate().map_err(|e| input("chain", e.to_string()))?;
    let antenna = power_at_antenna(b.source_power_w, &b.chain).map_err(|e| input("source_power_w", e.to_string()))?;
    let conversion = conversion_pipeline(b.slope_mhz_per_sqrtw, b.alpha_deg, b.gamma_e)
        .map_err(|e| input("slope_mhz_per_sqrtw", e.to_string()))?;
    let summary = json!({
        "chain_gain_db": chain_gain(&b.chain),
        "source_power_w": b.source_power_w,
        "power_at_antenna_w": antenna,
        "conversion": conversion,
    });
    let mut p = Product::new(summary.clone());
    p.json("budget.json", &summary);
    Ok(p)
}

/// Writes the product and its metadata sidecar into `dir`.
pub fn write_outputs(
    dir: &Path,
    product: &Product,
    kind: ExperimentKind,
    seed: u64,
    config: &impl Serialize,
) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut names = Vec::new();
    for (name, bytes) in &product.files {
        std::fs::write(dir.join(name), bytes)?;
        names.push(name.clone());
    }
    let meta = json!({
        "tool": "nvreso",
        "version": env!("CARGO_PKG_VERSION"),
        "experiment": kind,
        "seed": seed,
        "converged": product.converged,
        "partial": !product.converged,
        "nonconverged_points": product.nonconverged,
        "outputs": names,
        "config": config,
    });
    let mut bytes = serde_json::to_vec_pretty(&meta).expect("serializable");
    bytes.push(b'\n');
    std::fs::write(dir.join("metadata.json"), bytes)
}
