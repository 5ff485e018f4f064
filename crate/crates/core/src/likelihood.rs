//! Conditional quasi log-likelihood, QML fitting and Hessian standard errors.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::inversion::{invertibility_matrix, Inverter, NewtonOptions};
use crate::linalg::log_abs_det;
use crate::networks::WeightMatrix;
use crate::optim::{bfgs, nelder_mead, BfgsOptions, NelderMeadOptions};
use crate::panel::Panel;
use crate::params::{InitialConditions, ModelParams};
use crate::process::Dynamics;
use crate::rng::{stream, stream_rng};

/// Leading time points dropped from the likelihood by default.
pub const DEFAULT_BURN: usize = 5;
const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Smallest `|det J_t|` accepted before the Jacobian is declared degenerate.
const MIN_LOG_DET: f64 = -690.775_527_898_213_7; // ln 1e-300

/// `ln |det J_t|` with `J_t = dY_t / d eps_t = diag(sqrt h_t) M_t`.
pub fn log_abs_det_jacobian(d: &Dynamics, eps_t: &DVector<f64>, log_h_t: &DVector<f64>) -> f64 {
    let signs = eps_t.map(f64::signum);
    let (log_det_m, _) = log_abs_det(invertibility_matrix(d, eps_t, &signs));
    0.5 * log_h_t.sum() + log_det_m
}

/// Closed-form `dY_t / d eps_t`:
/// `delta_ij sqrt(h_i) + 1/2 sqrt(h_i) eps_i b_ij (Theta + xi sgn(eps_j))`.
pub fn observation_jacobian(d: &Dynamics, eps_t: &DVector<f64>, log_h_t: &DVector<f64>) -> DMatrix<f64> {
    let signs = eps_t.map(f64::signum);
    let mut m = invertibility_matrix(d, eps_t, &signs);
    for i in 0..d.n() {
        m.row_mut(i).scale_mut((0.5 * log_h_t[i]).exp());
    }
    m
}

/// Log-likelihood with a prebuilt inverter.
pub fn log_likelihood_with(inv: &Inverter, y: &Panel, init: &InitialConditions, burn: usize) -> Result<f64> {
    if burn >= y.t_len() {
        return Err(Error::Invalid(format!("burn {burn} leaves no observations out of {}", y.t_len())));
    }
    let out = inv.invert_panel(y, init)?;
    let d = inv.dynamics();
    let n = d.n() as f64;
    let mut total = 0.0;
    for t in burn..y.t_len() {
        let eps = out.eps.values().column(t).into_owned();
        let log_h = out.log_h.column(t).into_owned();
        let log_det = log_abs_det_jacobian(d, &eps, &log_h);
        if !(log_det > MIN_LOG_DET) {
            return Err(Error::Numerical(format!("degenerate Jacobian at t = {}", t + 1)));
        }
        total += -0.5 * n * LN_2PI - 0.5 * eps.norm_squared() - log_det;
    }
    Ok(total)
}

/// `sum_{t > burn} [ln f(eps_t) - ln |det J_t|]` with innovations recovered at `p`.
pub fn log_likelihood(
    p: &ModelParams,
    y: &Panel,
    w1: &WeightMatrix,
    w2: &WeightMatrix,
    init: &InitialConditions,
    burn: usize,
) -> Result<f64> {
    let inv = Inverter::new(p, w1, w2, NewtonOptions::default())?;
    log_likelihood_with(&inv, y, init, burn)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Random feasible starting points evaluated.
    pub n_starts: usize,
    /// Best starting points refined by the optimizer.
    pub n_refine: usize,
    pub seed: u64,
    /// Separate leverage parameters for the spatial and temporal terms.
    pub two_theta: bool,
    pub burn: usize,
    /// Margin `delta` in `|lambda1| + |lambda0| ||W2||_inf < 1 - delta`.
    pub delta: f64,
    pub std_errors: bool,
    pub execution: Execution,
    pub newton: NewtonOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            n_starts: 20,
            n_refine: 3,
            seed: 1,
            two_theta: false,
            burn: DEFAULT_BURN,
            delta: 1e-3,
            std_errors: true,
            execution: Execution::default(),
            newton: NewtonOptions::default(),
        }
    }
}

/// One refined start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartTrace {
    pub start: usize,
    pub initial_loglik: f64,
    pub final_loglik: f64,
    pub simplex_iterations: usize,
    pub quasi_newton_iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub params: ModelParams,
    pub param_names: Vec<String>,
    /// Absent when the Hessian is not positive definite.
    pub std_errors: Option<Vec<f64>>,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub converged: bool,
    pub n_inversions: usize,
    pub burn_dropped: usize,
    pub n_obs: usize,
    pub on_boundary: bool,
    /// Ridge added to the Hessian before inversion, if any.
    pub ridge: Option<f64>,
    #[serde(skip)]
    pub trace: Vec<StartTrace>,
}

/// `(aic, bic)` for `k` free parameters and `n_obs` observations.
pub fn information_criteria(loglik: f64, k: usize, n_obs: usize) -> (f64, f64) {
    let k = k as f64;
    (-2.0 * loglik + 2.0 * k, -2.0 * loglik + k * (n_obs as f64).ln())
}

/// Maps unconstrained coordinates to admissible parameters.
///
/// Layout `(alpha, rho0, rho1, u_l0, u_l1, u_theta[, u_theta_lag])`. With
/// `a = tanh u_l0`, `b = tanh u_l1` the square `(-1, 1)^2` is sent onto the
/// diamond `kappa |lambda0| + |lambda1| < 1 - delta` by
/// `lambda0 = c (a + b) / (2 kappa)`, `lambda1 = c (a - b) / 2`, `c = 1 - delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reparam {
    pub two_theta: bool,
    pub c: f64,
    /// `||W2||_inf`
    pub kappa: f64,
}

impl Reparam {
    pub fn new(two_theta: bool, delta: f64, w2: &WeightMatrix) -> Result<Self> {
        let kappa = w2.inf_norm();
        if !(delta > 0.0 && delta < 1.0) || kappa == 0.0 {
            return Err(Error::Invalid("delta must lie in (0, 1) and W2 must be non-zero".into()));
        }
        Ok(Reparam { two_theta, c: 1.0 - delta, kappa })
    }

    pub fn dim(&self) -> usize {
        if self.two_theta {
            7
        } else {
            6
        }
    }

    pub fn to_params(&self, u: &DVector<f64>) -> ModelParams {
        let a = u[3].tanh();
        let b = u[4].tanh();
        let mut p = ModelParams::new(u[0], u[1], u[2], self.c * (a + b) / (2.0 * self.kappa), self.c * (a - b) / 2.0, u[5].tanh());
        if self.two_theta {
            p = p.with_theta_lag(u[6].tanh());
        }
        p
    }

    /// Inverse map; parameters outside the admissible set are an error.
    pub fn from_params(&self, p: &ModelParams) -> Result<DVector<f64>> {
        let x = self.kappa * p.lambda0;
        let a = (x + p.lambda1) / self.c;
        let b = (x - p.lambda1) / self.c;
        let thetas = [p.theta, p.theta_temporal()];
        if a.abs() >= 1.0 || b.abs() >= 1.0 || thetas.iter().any(|t| t.abs() >= 1.0) {
            return Err(Error::Invalid("parameters outside the estimation constraints".into()));
        }
        let mut u = vec![p.alpha, p.rho0, p.rho1, a.atanh(), b.atanh(), p.theta.atanh()];
        if self.two_theta {
            u.push(p.theta_temporal().atanh());
        }
        Ok(DVector::from_vec(u))
    }

    /// Within `tol` of a constraint surface (in the bounded coordinates).
    pub fn on_boundary(&self, u: &DVector<f64>, tol: f64) -> bool {
        u.iter().skip(3).any(|v| v.tanh().abs() > 1.0 - tol)
    }
}

struct Objective<'a> {
    y: &'a Panel,
    w1: &'a WeightMatrix,
    w2: &'a WeightMatrix,
    init: &'a InitialConditions,
    reparam: Reparam,
    burn: usize,
    newton: NewtonOptions,
    scale: f64,
    calls: AtomicUsize,
}

impl Objective<'_> {
    fn loglik(&self, p: &ModelParams) -> Result<f64> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let inv = Inverter::new(p, self.w1, self.w2, self.newton)?;
        log_likelihood_with(&inv, self.y, self.init, self.burn)
    }

    /// Scaled negative log-likelihood; `inf` where it cannot be evaluated.
    fn value(&self, u: &DVector<f64>) -> f64 {
        match self.loglik(&self.reparam.to_params(u)) {
            Ok(l) if l.is_finite() => -l / self.scale,
            _ => f64::INFINITY,
        }
    }
}

/// Draws a random admissible starting point in unconstrained coordinates.
fn random_start<R: Rng>(rng: &mut R, reparam: &Reparam) -> DVector<f64> {
    let mut u = vec![
        rng.random_range(0.0..1.0),
        rng.random_range(-0.2..0.8),
        rng.random_range(-0.2..0.8),
        rng.random_range(-0.9f64..0.9).atanh(),
        rng.random_range(-0.9f64..0.9).atanh(),
        rng.random_range(-0.8f64..0.8).atanh(),
    ];
    if reparam.two_theta {
        u.push(rng.random_range(-0.8f64..0.8).atanh());
    }
    DVector::from_vec(u)
}

/// Quasi-maximum-likelihood fit with `xi = 1` fixed.
pub fn fit_qmle(
    y: &Panel,
    w1: &WeightMatrix,
    w2: &WeightMatrix,
    init: &InitialConditions,
    opts: &FitOptions,
) -> Result<EstimationResult> {
    if opts.n_starts == 0 || opts.n_refine == 0 {
        return Err(Error::Invalid("n_starts and n_refine must be positive".into()));
    }
    if y.n() != w1.n() || w1.n() != w2.n() || init.n() != y.n() {
        return Err(Error::Dimension("panel, weights and initial conditions disagree on n".into()));
    }
    if opts.burn >= y.t_len() {
        return Err(Error::Invalid(format!("burn {} leaves no observations out of {}", opts.burn, y.t_len())));
    }
    let reparam = Reparam::new(opts.two_theta, opts.delta, w2)?;
    let n_obs = y.n() * (y.t_len() - opts.burn);
    let obj = Objective {
        y,
        w1,
        w2,
        init,
        reparam,
        burn: opts.burn,
        newton: opts.newton,
        scale: n_obs as f64,
        calls: AtomicUsize::new(0),
    };
    let exec = opts.execution;

    let mut rng = stream_rng(opts.seed, stream::STARTS);
    let starts: Vec<DVector<f64>> = (0..opts.n_starts).map(|_| random_start(&mut rng, &reparam)).collect();
    let start_values = exec.map(starts.len(), |k| obj.value(&starts[k]));
    let mut order: Vec<usize> = (0..starts.len()).filter(|&k| start_values[k].is_finite()).collect();
    if order.is_empty() {
        return Err(Error::Numerical("likelihood could not be evaluated at any starting point".into()));
    }
    order.sort_by(|&a, &b| start_values[a].total_cmp(&start_values[b]).then(a.cmp(&b)));
    order.truncate(opts.n_refine);

    let f = |u: &DVector<f64>| obj.value(u);
    let refined = exec.map(order.len(), |r| {
        let k = order[r];
        let nm = nelder_mead(&f, &starts[k], NelderMeadOptions::default());
        let qn = bfgs(&f, &nm.x, BfgsOptions::default(), Execution::Serial);
        let best = if qn.f <= nm.f { qn.clone() } else { nm.clone() };
        let trace = StartTrace {
            start: k,
            initial_loglik: -start_values[k] * obj.scale,
            final_loglik: -best.f * obj.scale,
            simplex_iterations: nm.iterations,
            quasi_newton_iterations: qn.iterations,
            converged: qn.converged,
        };
        (best.x, best.f, trace)
    });
    let best = refined
        .iter()
        .enumerate()
        .filter(|(_, r)| r.1.is_finite())
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Numerical("all optimizer runs failed".into()))?;
    let (u_hat, _, best_trace) = refined[best].clone();
    let params = reparam.to_params(&u_hat);
    let loglik = obj.loglik(&params)?;
    let k = reparam.dim();
    let (aic, bic) = information_criteria(loglik, k, n_obs);

    let (std_errors, ridge) = if opts.std_errors {
        let neg = |x: &[f64]| obj.loglik(&ModelParams::from_free_vector(x)).map(|l| -l);
        match hessian_std_errors_with(neg, &params.free_vector(), exec) {
            Ok(r) => (r.std_errors, r.ridge),
            Err(_) => (None, None),
        }
    } else {
        (None, None)
    };

    Ok(EstimationResult {
        params,
        param_names: ModelParams::free_names(opts.two_theta).into_iter().map(String::from).collect(),
        std_errors,
        loglik,
        aic,
        bic,
        converged: best_trace.converged,
        n_inversions: obj.calls.load(Ordering::Relaxed),
        burn_dropped: opts.burn,
        n_obs,
        on_boundary: reparam.on_boundary(&u_hat, 1e-4),
        ridge,
        trace: refined.into_iter().map(|r| r.2).collect(),
    })
}

/// Standard errors from a finite-difference Hessian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianReport {
    pub hessian: DMatrix<f64>,
    pub condition: f64,
    pub ridge: Option<f64>,
    /// `sqrt(diag(H^{-1}))`, absent when `H` is not positive definite.
    pub std_errors: Option<Vec<f64>>,
}

/// Condition number above which a ridge is added.
pub const MAX_CONDITION: f64 = 1e12;

/// Central-difference Hessian of `neg_loglik` at `x` and the implied standard errors.
pub fn hessian_std_errors_with(
    neg_loglik: impl Fn(&[f64]) -> Result<f64> + Sync,
    x: &[f64],
    exec: Execution,
) -> Result<HessianReport> {
    let k = x.len();
    let h: Vec<f64> = x.iter().map(|v| 1e-3 * v.abs().max(1.0)).collect();
    // Offsets: centre, +-e_i, and the four (+-e_i, +-e_j) corners for i < j.
    let mut offsets: Vec<Vec<(usize, f64)>> = vec![vec![]];
    for i in 0..k {
        offsets.push(vec![(i, 1.0)]);
        offsets.push(vec![(i, -1.0)]);
    }
    for i in 0..k {
        for j in i + 1..k {
            for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                offsets.push(vec![(i, si), (j, sj)]);
            }
        }
    }
    let values = exec.map(offsets.len(), |m| {
        let mut p = x.to_vec();
        for &(i, s) in &offsets[m] {
            p[i] += s * h[i];
        }
        neg_loglik(&p)
    });
    let values: Vec<f64> = values.into_iter().collect::<Result<_>>()?;
    let f0 = values[0];
    let mut hess = DMatrix::zeros(k, k);
    for i in 0..k {
        hess[(i, i)] = (values[1 + 2 * i] - 2.0 * f0 + values[2 + 2 * i]) / (h[i] * h[i]);
    }
    let mut m = 1 + 2 * k;
    for i in 0..k {
        for j in i + 1..k {
            let v = (values[m] - values[m + 1] - values[m + 2] + values[m + 3]) / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
            m += 4;
        }
    }
    if hess.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite Hessian".into()));
    }
    let eig = hess.clone().symmetric_eigenvalues();
    let max_abs = eig.amax();
    let min_abs = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    let condition = if min_abs > 0.0 { max_abs / min_abs } else { f64::INFINITY };
    let mut ridge = None;
    let mut reg = hess.clone();
    if condition > MAX_CONDITION {
        let eps = max_abs / MAX_CONDITION - eig.min().min(0.0);
        for i in 0..k {
            reg[(i, i)] += eps;
        }
        ridge = Some(eps);
    }
    let std_errors = reg.cholesky().map(|c| {
        let inv = c.inverse();
        (0..k).map(|i| inv[(i, i)].sqrt()).collect()
    });
    Ok(HessianReport { hessian: hess, condition, ridge, std_errors })
}

/// Hessian standard errors of the free parameters at `p_hat`.
pub fn hessian_std_errors(
    p_hat: &ModelParams,
    y: &Panel,
    w1: &WeightMatrix,
    w2: &WeightMatrix,
    init: &InitialConditions,
    burn: usize,
) -> Result<HessianReport> {
    let neg = |x: &[f64]| log_likelihood(&ModelParams::from_free_vector(x), y, w1, w2, init, burn).map(|l| -l);
    hessian_std_errors_with(neg, &p_hat.free_vector(), Execution::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{standardized_grid, Contiguity};
    use crate::process::simulate;

    #[test]
    fn quadratic_standard_errors() {
        let sigma = [0.5, 2.0, 0.1];
        let neg = |x: &[f64]| Ok(0.5 * x.iter().zip(&sigma).map(|(v, s)| (v / s).powi(2)).sum::<f64>());
        let r = hessian_std_errors_with(neg, &[0.3, -1.0, 0.05], Execution::Serial).unwrap();
        let se = r.std_errors.unwrap();
        for (a, b) in se.iter().zip(&sigma) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(r.ridge.is_none());
    }

    #[test]
    fn near_singular_hessian_gets_ridge() {
        let neg = |x: &[f64]| Ok(0.5 * (x[0] + x[1]).powi(2));
        let r = hessian_std_errors_with(neg, &[0.0, 0.0], Execution::Serial).unwrap();
        assert!(r.ridge.is_some());
        assert!(r.std_errors.is_some());
    }

    #[test]
    fn indefinite_hessian_has_no_errors() {
        let neg = |x: &[f64]| Ok(x[0] * x[0] - x[1] * x[1]);
        let r = hessian_std_errors_with(neg, &[0.0, 0.0], Execution::Serial).unwrap();
        assert!(r.std_errors.is_none());
    }

    #[test]
    fn information_criteria_definition() {
        let (aic, bic) = information_criteria(-100.0, 6, 400);
        assert_eq!(aic, 212.0);
        assert!((bic - (200.0 + 6.0 * 400f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn reparam_round_trip_and_feasibility() {
        let w2 = standardized_grid(3, 3, Contiguity::Rook).unwrap();
        let r = Reparam::new(true, 1e-3, &w2).unwrap();
        let p = ModelParams::model_b().with_theta_lag(-0.2);
        let u = r.from_params(&p).unwrap();
        let q = r.to_params(&u);
        for (a, b) in p.free_vector().iter().zip(q.free_vector()) {
            assert!((a - b).abs() < 1e-12);
        }
        for z in [-30.0, -2.0, 0.0, 1.5, 40.0] {
            let u = DVector::from_vec(vec![0.0, 0.0, 0.0, z, -z * 0.7, z, z]);
            let p = r.to_params(&u);
            assert!(p.lambda0.abs() + p.lambda1.abs() < 1.0 - 1e-3 + 1e-15);
            assert!(p.theta.abs() <= 1.0);
        }
    }

    #[test]
    fn static_model_is_gaussian() {
        let w = standardized_grid(2, 2, Contiguity::Rook).unwrap();
        let sim = simulate(&ModelParams::model_a(), &w, &w, 12, 10, &InitialConditions::default_for(4), 2).unwrap();
        let ll = log_likelihood(&ModelParams::static_volatility(0.0), &sim.y, &w, &w, &InitialConditions::default_for(4), 0).unwrap();
        let expected: f64 = sim.y.values().iter().map(|v| -0.5 * LN_2PI - 0.5 * v * v).sum();
        assert!((ll - expected).abs() < 1e-10 * expected.abs());
    }

    #[test]
    fn fit_is_reproducible_and_admissible() {
        let w1 = standardized_grid(2, 2, Contiguity::Queen).unwrap();
        let w2 = standardized_grid(2, 2, Contiguity::Rook).unwrap();
        let sim = simulate(&ModelParams::model_a(), &w1, &w2, 60, 50, &InitialConditions::default_for(4), 9).unwrap();
        let opts = FitOptions { n_starts: 6, n_refine: 2, seed: 4, ..Default::default() };
        let a = fit_qmle(&sim.y, &w1, &w2, &InitialConditions::default_for(4), &opts).unwrap();
        let b = fit_qmle(&sim.y, &w1, &w2, &InitialConditions::default_for(4), &FitOptions { execution: Execution::Serial, ..opts }).unwrap();
        assert_eq!(a, b);
        assert!(a.params.lambda0.abs() + a.params.lambda1.abs() < 1.0 - 1e-3);
        assert!(a.params.theta.abs() < 1.0);
        assert_eq!(a.n_obs, 4 * 55);
        let (aic, bic) = information_criteria(a.loglik, 6, a.n_obs);
        assert_eq!((a.aic, a.bic), (aic, bic));
        assert!(a.trace.iter().all(|t| t.final_loglik >= t.initial_loglik));
    }
}
