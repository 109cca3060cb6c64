//! Curve fits: decaying sinusoid, stretched Hahn echo, Lorentzian, √P line
//! and complex S11 resonance, built on a seeded global-then-local driver.
//!
//! Every fit reports linearized 95% confidence half-widths,
//! `t₀.₉₇₅,ν · sqrt(diag((JᵀJ)⁻¹)·s²)` with `s² = SSR/ν`.

mod models;
mod optimize;

pub use models::{
    decaying_sinusoid, fit_decaying_sinusoid, fit_hahn_echo, fit_lorentzian, fit_s11_resonance, fit_sqrt_power_line,
    hahn_echo, lorentzian, FitModel, FitSettings,
};
pub use optimize::{global_then_local, GlobalOptions, Problem};

use indexmap::IndexMap;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use optimize::LocalFit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    pub parameters: IndexMap<String, f64>,
    /// 95% confidence half-widths; infinite (null in JSON) when a parameter
    /// is not identifiable from the data.
    pub ci95: IndexMap<String, f64>,
    /// sqrt of the residual sum of squares.
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.parameters.get(name).copied()
    }

    pub fn ci(&self, name: &str) -> Option<f64> {
        self.ci95.get(name).copied()
    }

    /// Whether `truth` lies inside the 95% interval of `name`.
    pub fn covers(&self, name: &str, truth: f64) -> bool {
        match (self.get(name), self.ci(name)) {
            (Some(v), Some(c)) => (v - truth).abs() <= c,
            _ => false,
        }
    }

    pub(crate) fn from_local(problem: &Problem, fit: &LocalFit) -> Self {
        let ci = confidence_half_widths(&fit.jacobian, fit.cost, problem.n_residuals);
        let mut parameters = IndexMap::new();
        let mut ci95 = IndexMap::new();
        for (k, name) in problem.names.iter().enumerate() {
            parameters.insert(name.clone(), fit.x[k]);
            ci95.insert(name.clone(), ci[k]);
        }
        FitResult {
            model: String::new(),
            parameters,
            ci95,
            residual_norm: fit.cost.sqrt(),
            converged: fit.converged,
            iterations: fit.iterations,
            warnings: Vec::new(),
        }
    }

    pub(crate) fn with_model(mut self, model: &str) -> Self {
        self.model = model.to_owned();
        self
    }
}

/// Two-sided 95% Student-t quantile.
pub fn t_quantile_95(dof: usize) -> f64 {
    if dof == 0 {
        return f64::INFINITY;
    }
    StudentsT::new(0.0, 1.0, dof as f64)
        .map(|t| t.inverse_cdf(0.975))
        .unwrap_or(f64::INFINITY)
}

/// Parameter covariance `(JᵀJ)⁻¹·s²` by SVD; directions with vanishing
/// singular values get infinite variance.
pub(crate) fn covariance(jac: &DMatrix<f64>, ssr: f64, n_residuals: usize) -> DMatrix<f64> {
    let n = jac.ncols();
    let dof = n_residuals.saturating_sub(n);
    let s2 = if dof > 0 { ssr / dof as f64 } else { f64::INFINITY };
    let svd = jac.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10 * (n_residuals.max(n) as f64);
    let mut cov = DMatrix::zeros(n, n);
    let mut null = vec![false; n];
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s <= tol || s == 0.0 {
            for j in 0..n {
                if v_t[(k, j)].abs() > 1e-6 {
                    null[j] = true;
                }
            }
            continue;
        }
        for a in 0..n {
            for b in 0..n {
                cov[(a, b)] += v_t[(k, a)] * v_t[(k, b)] / (s * s);
            }
        }
    }
    cov *= s2;
    for j in 0..n {
        if null[j] {
            cov[(j, j)] = f64::INFINITY;
        }
    }
    cov
}

fn confidence_half_widths(jac: &DMatrix<f64>, ssr: f64, n_residuals: usize) -> Vec<f64> {
    let n = jac.ncols();
    let cov = covariance(jac, ssr, n_residuals);
    let t = t_quantile_95(n_residuals.saturating_sub(n));
    (0..n)
        .map(|j| {
            let v = cov[(j, j)];
            if v.is_finite() && v >= 0.0 {
                t * v.sqrt()
            } else {
                f64::INFINITY
            }
        })
        .collect()
}
