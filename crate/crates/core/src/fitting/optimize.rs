//! Two-stage bounded least squares: seeded multi-start coordinate pattern
//! search to find the basin, then projected Levenberg–Marquardt to polish.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::FitResult;
use crate::error::{Error, Result};

/// Box-constrained nonlinear least-squares problem.
type Residuals<'a> = Box<dyn Fn(&[f64], &mut [f64]) + 'a>;

pub struct Problem<'a> {
    pub names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub n_residuals: usize,
    residuals: Residuals<'a>,
}

impl<'a> Problem<'a> {
    pub fn new(
        names: &[&str],
        lower: Vec<f64>,
        upper: Vec<f64>,
        n_residuals: usize,
        residuals: impl Fn(&[f64], &mut [f64]) + 'a,
    ) -> Result<Self> {
        let n = names.len();
        if lower.len() != n || upper.len() != n {
            return Err(Error::invalid("bounds do not match the parameter count"));
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(l, u)| !(l.is_finite() && u.is_finite() && l < u))
        {
            return Err(Error::invalid("bounds must be finite with lower < upper"));
        }
        if n_residuals == 0 {
            return Err(Error::invalid("problem has no residuals"));
        }
        Ok(Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            lower,
            upper,
            n_residuals,
            residuals: Box::new(residuals),
        })
    }

    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        (self.residuals)(x, out)
    }

    fn clamp(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }
}

#[derive(Debug, Clone)]
pub struct GlobalOptions {
    /// Total residual evaluations across both stages.
    pub budget: usize,
    pub seed: u64,
    /// Random starts in addition to `guesses`.
    pub random_starts: usize,
    /// Size of the seeded uniform screening sample the random starts are
    /// picked from (lowest cost first); at most `random_starts` means the
    /// starts are plain uniform draws.
    pub screening: usize,
    pub guesses: Vec<Vec<f64>>,
    /// Initial mesh size as a fraction of each bound range.
    pub initial_step: f64,
    /// Number of pattern-search results refined by the local stage.
    pub refine_top: usize,
    /// Perturbation half-width, as a fraction of each bound range, for the
    /// basin-hopping rounds that spend half of the global budget; 0 disables
    /// hopping.
    pub hop_radius: f64,
}

impl Default for GlobalOptions {
    fn default() -> Self {
        Self {
            budget: 20_000,
            seed: 0,
            random_starts: 12,
            screening: 1000,
            guesses: Vec::new(),
            initial_step: 0.25,
            refine_top: 3,
            hop_radius: 0.1,
        }
    }
}

/// Evaluation counter that refuses work past the budget.
struct Meter<'p, 'a> {
    problem: &'p Problem<'a>,
    budget: usize,
    used: usize,
    buf: Vec<f64>,
}

impl<'p, 'a> Meter<'p, 'a> {
    fn new(problem: &'p Problem<'a>, budget: usize) -> Self {
        Self {
            problem,
            budget,
            used: 0,
            buf: vec![0.0; problem.n_residuals],
        }
    }

    fn exhausted(&self) -> bool {
        self.used >= self.budget
    }

    fn cost(&mut self, x: &[f64]) -> f64 {
        self.used += 1;
        self.problem.eval(x, &mut self.buf);
        sum_sq(&self.buf)
    }

    fn residuals(&mut self, x: &[f64], out: &mut [f64]) {
        self.used += 1;
        self.problem.eval(x, out);
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    let s: f64 = r.iter().map(|v| v * v).sum();
    if s.is_finite() {
        s
    } else {
        f64::INFINITY
    }
}

/// Coordinate pattern search in the unit cube mapped onto the bounds.
/// Opportunistic polling; mesh doubles after a success and halves after a
/// failed poll.
fn pattern_search(meter: &mut Meter, start: &[f64], initial_step: f64, min_step: f64) -> (Vec<f64>, f64) {
    let p = meter.problem;
    let n = p.n_params();
    let to_x = |u: &[f64]| -> Vec<f64> { (0..n).map(|i| p.lower[i] + u[i] * (p.upper[i] - p.lower[i])).collect() };
    let mut u: Vec<f64> = (0..n)
        .map(|i| ((start[i] - p.lower[i]) / (p.upper[i] - p.lower[i])).clamp(0.0, 1.0))
        .collect();
    let mut best = meter.cost(&to_x(&u));
    let mut step = initial_step;
    while step > min_step && !meter.exhausted() {
        let mut improved = false;
        'poll: for i in 0..n {
            for dir in [1.0, -1.0] {
                if meter.exhausted() {
                    break 'poll;
                }
                let mut trial = u.clone();
                trial[i] = (trial[i] + dir * step).clamp(0.0, 1.0);
                if trial[i] == u[i] {
                    continue;
                }
                let c = meter.cost(&to_x(&trial));
                if c < best {
                    best = c;
                    u = trial;
                    improved = true;
                    break 'poll;
                }
            }
        }
        if improved {
            step = (step * 2.0).min(0.5);
        } else {
            step *= 0.5;
        }
    }
    (to_x(&u), best)
}

/// Outcome of the local stage.
pub(crate) struct LocalFit {
    pub x: Vec<f64>,
    pub residuals: Vec<f64>,
    pub jacobian: DMatrix<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn jacobian(meter: &mut Meter, x: &[f64], r0: &[f64]) -> DMatrix<f64> {
    let p = meter.problem;
    let m = p.n_residuals;
    let n = p.n_params();
    let mut jac = DMatrix::zeros(m, n);
    let mut rp = vec![0.0; m];
    let mut rm = vec![0.0; m];
    for j in 0..n {
        let range = p.upper[j] - p.lower[j];
        let h = 6e-6 * x[j].abs().max(1e-3 * range);
        let up_room = p.upper[j] - x[j];
        let dn_room = x[j] - p.lower[j];
        let mut xp = x.to_vec();
        if up_room >= h && dn_room >= h {
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            meter.residuals(&xp, &mut rp);
            meter.residuals(&xm, &mut rm);
            for i in 0..m {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        } else {
            // one-sided at a bound
            let hs = if up_room >= dn_room { h } else { -h };
            xp[j] += hs;
            meter.residuals(&xp, &mut rp);
            for i in 0..m {
                jac[(i, j)] = (rp[i] - r0[i]) / hs;
            }
        }
    }
    jac
}

fn levenberg_marquardt(meter: &mut Meter, start: &[f64], max_iter: usize) -> LocalFit {
    let p = meter.problem;
    let n = p.n_params();
    let m = p.n_residuals;
    let mut x = start.to_vec();
    p.clamp(&mut x);
    let mut r = vec![0.0; m];
    meter.residuals(&x, &mut r);
    let mut cost = sum_sq(&r);
    let mut jac = jacobian(meter, &x, &r);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let mut trial_r = vec![0.0; m];

    while iterations < max_iter && !meter.exhausted() {
        iterations += 1;
        let rv = DVector::from_column_slice(&r);
        let mut jtj = jac.transpose() * &jac;
        let mut g = jac.transpose() * &rv;
        // pin parameters sitting on a bound that the gradient pushes against
        for k in 0..n {
            let at_lo = x[k] <= p.lower[k] && g[k] > 0.0;
            let at_hi = x[k] >= p.upper[k] && g[k] < 0.0;
            if at_lo || at_hi {
                for j in 0..n {
                    jtj[(k, j)] = 0.0;
                    jtj[(j, k)] = 0.0;
                }
                jtj[(k, k)] = 1.0;
                g[k] = 0.0;
            }
        }
        if g.amax() <= 1e-300 || cost == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = false;
        while !meter.exhausted() {
            let mut a = jtj.clone();
            for k in 0..n {
                let d = jtj[(k, k)].max(1e-30);
                a[(k, k)] += lambda * d;
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&g))) else {
                lambda *= 10.0;
                if lambda > 1e30 {
                    break;
                }
                continue;
            };
            let mut xt: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            p.clamp(&mut xt);
            meter.residuals(&xt, &mut trial_r);
            let ct = sum_sq(&trial_r);
            if ct < cost {
                let rel_drop = (cost - ct) / cost.max(f64::MIN_POSITIVE);
                let rel_step = xt
                    .iter()
                    .zip(&x)
                    .enumerate()
                    .map(|(k, (a, b))| (a - b).abs() / (b.abs().max(1e-9 * (p.upper[k] - p.lower[k]))))
                    .fold(0.0, f64::max);
                x = xt;
                std::mem::swap(&mut r, &mut trial_r);
                cost = ct;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if rel_drop < 1e-14 || rel_step < 1e-13 {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
            if lambda > 1e16 {
                break;
            }
        }
        if !accepted {
            // no descent direction left: at a (possibly constrained) minimum
            converged = lambda > 1e16;
            break;
        }
        jac = jacobian(meter, &x, &r);
        if converged {
            break;
        }
    }
    LocalFit {
        x,
        residuals: r,
        jacobian: jac,
        cost,
        iterations,
        converged,
    }
}

/// Runs the global pattern-search stage over `guesses` plus seeded random
/// starts, then refines the best candidates with Levenberg–Marquardt.
/// Deterministic for a given problem, options and seed.
pub(crate) fn minimize(problem: &Problem, opts: &GlobalOptions) -> Result<LocalFit> {
    if opts.budget == 0 {
        return Err(Error::invalid("evaluation budget must be > 0"));
    }
    let n = problem.n_params();
    for g in &opts.guesses {
        if g.len() != n {
            return Err(Error::invalid("initial guess has the wrong length"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut meter = Meter::new(problem, opts.budget);
    let mut starts: Vec<Vec<f64>> = opts.guesses.clone();
    let draws = opts.screening.max(opts.random_starts);
    let mut pool: Vec<(Vec<f64>, f64)> = Vec::with_capacity(draws);
    for _ in 0..draws {
        let x: Vec<f64> = (0..n)
            .map(|i| rng.random_range(problem.lower[i]..problem.upper[i]))
            .collect();
        let c = if draws > opts.random_starts {
            meter.cost(&x)
        } else {
            0.0
        };
        pool.push((x, c));
    }
    // stable sort keeps draw order when not screening
    pool.sort_by(|a, b| a.1.total_cmp(&b.1));
    starts.extend(pool.into_iter().take(opts.random_starts).map(|(x, _)| x));
    if starts.is_empty() {
        starts.push((0..n).map(|i| 0.5 * (problem.lower[i] + problem.upper[i])).collect());
    }

    // 60% of the budget to screening plus pattern search, split evenly
    // across starts
    let global_end = opts.budget * 3 / 5;
    let mut global = global_end.saturating_sub(meter.used);
    if opts.hop_radius > 0.0 {
        global /= 2;
    }
    let per_start = (global / starts.len()).max(4 * n + 1);
    let mut candidates = Vec::with_capacity(starts.len());
    for s in &starts {
        if meter.exhausted() {
            break;
        }
        let cap = (meter.used + per_start).min(opts.budget);
        let saved = meter.budget;
        meter.budget = cap;
        let (x, c) = pattern_search(&mut meter, s, opts.initial_step, 1e-7);
        meter.budget = saved;
        candidates.push((x, c));
    }
    candidates.sort_by(|a, b| a.1.total_cmp(&b.1));

    // monotonic basin hopping from the incumbent
    if opts.hop_radius > 0.0 && !candidates.is_empty() {
        let (mut cur, mut cur_cost) = candidates[0].clone();
        let per_hop = (20 * n).max(60);
        while meter.used + per_hop <= global_end.min(opts.budget) {
            let trial: Vec<f64> = (0..n)
                .map(|i| {
                    let r = opts.hop_radius * (problem.upper[i] - problem.lower[i]);
                    (cur[i] + rng.random_range(-r..r)).clamp(problem.lower[i], problem.upper[i])
                })
                .collect();
            let saved = meter.budget;
            meter.budget = meter.used + per_hop;
            let (x, c) = pattern_search(&mut meter, &trial, opts.hop_radius / 16.0, 1e-5);
            meter.budget = saved;
            if c < cur_cost {
                cur = x;
                cur_cost = c;
            }
        }
        candidates.insert(0, (cur, cur_cost));
    }
    candidates.dedup_by(|a, b| a.0 == b.0);

    let mut best: Option<LocalFit> = None;
    for (x, _) in candidates.iter().take(opts.refine_top.max(1)) {
        if meter.exhausted() {
            break;
        }
        let fit = levenberg_marquardt(&mut meter, x, 500);
        if best.as_ref().is_none_or(|b| fit.cost < b.cost) {
            best = Some(fit);
        }
    }
    let mut best = best.ok_or_else(|| Error::invalid("budget exhausted before the local stage"))?;
    if meter.exhausted() {
        best.converged = false;
    }
    Ok(best)
}

/// Generic driver: minimizes the sum of squared residuals within `bounds`
/// and reports linearized 95% confidence intervals.
pub fn global_then_local(problem: &Problem, opts: &GlobalOptions) -> Result<FitResult> {
    let fit = minimize(problem, opts)?;
    Ok(FitResult::from_local(problem, &fit))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rastrigin<'a>() -> Problem<'a> {
        Problem::new(&["x", "y", "z"], vec![-5.12; 3], vec![5.12; 3], 6, |x, out| {
            for i in 0..3 {
                out[2 * i] = x[i];
                out[2 * i + 1] = 20f64.sqrt() * (std::f64::consts::PI * x[i]).sin();
            }
        })
        .unwrap()
    }

    #[test]
    fn convex_quadratic() {
        let p = Problem::new(&["a", "b"], vec![-10.0, -10.0], vec![10.0, 10.0], 2, |x, out| {
            out[0] = x[0] - 1.5;
            out[1] = 3.0 * (x[1] + 2.25);
        })
        .unwrap();
        let r = global_then_local(&p, &GlobalOptions::default()).unwrap();
        assert!((r.get("a").unwrap() - 1.5).abs() < 1e-9);
        assert!((r.get("b").unwrap() + 2.25).abs() < 1e-9);
        assert!(r.converged);
    }

    #[test]
    fn deterministic_for_seed() {
        let p = rastrigin();
        let opts = GlobalOptions {
            seed: 42,
            ..Default::default()
        };
        let a = minimize(&p, &opts).unwrap();
        let b = minimize(&p, &opts).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.cost.to_bits(), b.cost.to_bits());
    }

    #[test]
    fn budget_exhaustion_reported() {
        let p = rastrigin();
        let opts = GlobalOptions {
            budget: 30,
            ..Default::default()
        };
        let r = global_then_local(&p, &opts);
        if let Ok(r) = r {
            assert!(!r.converged);
        }
    }

    #[test]
    fn rejects_bad_bounds() {
        assert!(Problem::new(&["a"], vec![1.0], vec![1.0], 1, |_, _| {}).is_err());
        assert!(Problem::new(&["a"], vec![f64::NEG_INFINITY], vec![1.0], 1, |_, _| {}).is_err());
    }
}
