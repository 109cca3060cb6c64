//! CSV input for the `fit` subcommand.
//!
//! Columns are positional; a leading non-numeric row is taken as a header.
//!   sinusoid, hahn   t_us, signal
//!   lorentzian       x, y
//!   sqrtp            power_w, omega_mhz [, sigma_mhz]
//!   s11              f_ghz, re, im

use std::path::Path;

use num_complex::Complex64;

use nvreso_core::fitting::{
    fit_decaying_sinusoid, fit_hahn_echo, fit_lorentzian, fit_s11_resonance, fit_sqrt_power_line, FitModel, FitResult,
    FitSettings,
};
use nvreso_core::spin::{RabiTrace, TraceMetadata};

use crate::run::Failure;

/// Numeric columns of a CSV file, at least `min_cols` wide.
pub fn read_columns(path: &Path, min_cols: usize) -> Result<Vec<Vec<f64>>, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| format!("{}: {e}", path.display()))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = rec.iter().map(|f| f.parse::<f64>()).collect();
        let row = match parsed {
            Ok(r) => r,
            Err(_) if i == 0 => continue,
            Err(_) => return Err(format!("{}: line {}: non-numeric value", path.display(), i + 1)),
        };
        if row.len() < min_cols {
            return Err(format!(
                "{}: line {}: expected at least {min_cols} columns, found {}",
                path.display(),
                i + 1,
                row.len()
            ));
        }
        if cols.is_empty() {
            cols = vec![Vec::new(); row.len()];
        }
        for (k, v) in row.into_iter().enumerate().take(cols.len()) {
            cols[k].push(v);
        }
    }
    if cols.is_empty() || cols[0].is_empty() {
        return Err(format!("{}: no rows", path.display()));
    }
    Ok(cols)
}

pub fn fit_file(
    path: &Path,
    model: FitModel,
    zero_intercept: bool,
    settings: &FitSettings,
) -> Result<FitResult, Failure> {
    let min_cols = match model {
        FitModel::S11 => 3,
        _ => 2,
    };
    let cols = read_columns(path, min_cols).map_err(Failure::Input)?;
    let input = |e: nvreso_core::Error| Failure::Input(format!("{}: {e}", path.display()));
    let trace = || RabiTrace::new(cols[0].clone(), cols[1].clone(), TraceMetadata::default()).map_err(input);
    let res = match model {
        FitModel::Sinusoid => fit_decaying_sinusoid(&trace()?, settings),
        FitModel::Hahn => fit_hahn_echo(&trace()?, settings),
        FitModel::Lorentzian => fit_lorentzian(&cols[0], &cols[1], settings),
        FitModel::Sqrtp => fit_sqrt_power_line(&cols[0], &cols[1], zero_intercept, cols.get(2).map(|c| c.as_slice())),
        FitModel::S11 => {
            let g: Vec<Complex64> = cols[1]
                .iter()
                .zip(&cols[2])
                .map(|(r, i)| Complex64::new(*r, *i))
                .collect();
            fit_s11_resonance(&cols[0], &g, settings)
        }
    };
    res.map_err(input)
}
