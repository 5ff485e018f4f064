//! Recovering innovations from observations.
//!
//! At each time step the unknowns are `x_i = ln eps_t(s_i)^2`; signs are copied
//! from `y_t`. With `l_t = ln y_t^2` the system is
//!
//! `(I - lambda0 W2) x + rho0 W1 g(eps(x)) = (I - lambda0 W2) l_t - alpha 1 - rho1 g(eps_{t-1}) - lambda1 ln h_{t-1}`
//!
//! which is smooth in `x` once the signs are fixed, so Newton's method runs
//! with an analytic Jacobian.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::identity;
use crate::networks::WeightMatrix;
use crate::panel::{Panel, PanelKind};
use crate::params::{InitialConditions, ModelParams};
use crate::process::Dynamics;

/// Leading time points flagged as burn-in in inversion diagnostics.
pub const DEFAULT_INVERSION_BURN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    /// Convergence threshold on the residual max-norm.
    pub tol: f64,
    pub max_iter: usize,
    /// Maximum number of step halvings per iteration.
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { tol: 1e-10, max_iter: 100, max_halvings: 40 }
    }
}

/// Result of one Newton solve.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSolution {
    pub eps: DVector<f64>,
    /// `ln h_t` implied by the solution.
    pub log_h: DVector<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Per-time-step record of a panel inversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub t: usize,
    pub iterations: usize,
    pub residual: f64,
    /// Invertibility determinant at the recovered innovations.
    pub determinant: f64,
    pub burn_in: bool,
}

#[derive(Debug, Clone)]
pub struct Inversion {
    pub eps: Panel,
    pub log_h: DMatrix<f64>,
    pub diagnostics: Vec<StepDiagnostics>,
}

/// Precomputed state for repeated solves at one parameter point.
#[derive(Debug, Clone)]
pub struct Inverter {
    dynamics: Dynamics,
    opts: NewtonOptions,
}

fn check_nonzero(v: &DVector<f64>, what: &str) -> Result<()> {
    match v.iter().position(|&x| x == 0.0 || !x.is_finite()) {
        Some(i) => Err(Error::Invalid(format!("{what} has a zero or non-finite entry at node {}", i + 1))),
        None => Ok(()),
    }
}

impl Inverter {
    pub fn new(p: &ModelParams, w1: &WeightMatrix, w2: &WeightMatrix, opts: NewtonOptions) -> Result<Self> {
        let bad = crate::params::validate_params(p);
        if let Some(v) = bad.first() {
            return Err(Error::Invalid(v.to_string()));
        }
        Ok(Inverter { dynamics: Dynamics::new(p, w1, w2)?, opts })
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    /// Right-hand side of the step equation and the predicted `ln h_t` that
    /// ignores the contemporaneous term (used as the Newton start).
    fn rhs(&self, log_y2: &DVector<f64>, eps_prev: &DVector<f64>, log_h_prev: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let p = &self.dynamics.params;
        let mut lagged = self.dynamics.g_temporal(eps_prev) * p.rho1;
        lagged += log_h_prev * p.lambda1;
        lagged.add_scalar_mut(p.alpha);
        let c = &self.dynamics.a * log_y2 - &lagged;
        let predicted = &self.dynamics.s * lagged;
        (c, predicted)
    }

    fn residual(&self, x: &DVector<f64>, signs: &DVector<f64>, c: &DVector<f64>) -> DVector<f64> {
        let d = &self.dynamics;
        let g = self.g_of_x(x, signs);
        &d.a * x + &d.rho0_w1 * g - c
    }

    fn g_of_x(&self, x: &DVector<f64>, signs: &DVector<f64>) -> DVector<f64> {
        let d = &self.dynamics;
        let theta = d.params.theta_spatial();
        let xi = d.params.xi;
        DVector::from_fn(x.len(), |i, _| {
            let m = (0.5 * x[i]).exp();
            theta * signs[i] * m + xi * (m - d.abs_mean)
        })
    }

    fn jacobian(&self, x: &DVector<f64>, signs: &DVector<f64>) -> DMatrix<f64> {
        let d = &self.dynamics;
        let theta = d.params.theta_spatial();
        let xi = d.params.xi;
        let mut j = d.rho0_w1.clone();
        for col in 0..x.len() {
            let dg = 0.5 * (0.5 * x[col]).exp() * (theta * signs[col] + xi);
            j.column_mut(col).scale_mut(dg);
        }
        j + &d.a
    }

    /// Solves one time step given `ln h_{t-1}`.
    pub fn step(&self, y_t: &DVector<f64>, eps_prev: &DVector<f64>, log_h_prev: &DVector<f64>) -> Result<StepSolution> {
        let log_y2 = y_t.map(|v| (v * v).ln());
        let (c, predicted) = self.rhs(&log_y2, eps_prev, log_h_prev);
        self.solve(y_t, &log_y2, &c, &log_y2 - predicted)
    }

    /// Like [`Inverter::step`] but from a caller-chosen starting point `x0`
    /// (in log-squared units).
    pub fn step_from(
        &self,
        y_t: &DVector<f64>,
        eps_prev: &DVector<f64>,
        log_h_prev: &DVector<f64>,
        x0: DVector<f64>,
    ) -> Result<StepSolution> {
        let log_y2 = y_t.map(|v| (v * v).ln());
        let (c, _) = self.rhs(&log_y2, eps_prev, log_h_prev);
        self.solve(y_t, &log_y2, &c, x0)
    }

    fn solve(&self, y_t: &DVector<f64>, log_y2: &DVector<f64>, c: &DVector<f64>, mut x: DVector<f64>) -> Result<StepSolution> {
        let signs = y_t.map(f64::signum);
        let mut r = self.residual(&x, &signs, c);
        let mut norm = r.amax();
        let mut iterations = 0;
        while !(norm <= self.opts.tol) {
            if iterations == self.opts.max_iter {
                return Err(Error::Inversion {
                    t: 0,
                    reason: format!("Newton did not converge in {} iterations (residual {norm:e})", self.opts.max_iter),
                });
            }
            iterations += 1;
            let j = self.jacobian(&x, &signs);
            let step = j
                .lu()
                .solve(&r)
                .filter(|s| s.iter().all(|v| v.is_finite()))
                .ok_or_else(|| Error::Inversion { t: 0, reason: "singular Newton Jacobian".into() })?;
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..=self.opts.max_halvings {
                let trial = &x - &step * scale;
                let tr = self.residual(&trial, &signs, c);
                let tn = tr.amax();
                if tn.is_finite() && (tn < norm || tn <= self.opts.tol) {
                    x = trial;
                    r = tr;
                    norm = tn;
                    accepted = true;
                    break;
                }
                scale *= 0.5;
            }
            if !accepted {
                return Err(Error::Inversion { t: 0, reason: format!("Newton line search stalled at residual {norm:e}") });
            }
        }
        let eps = DVector::from_fn(x.len(), |i, _| signs[i] * (0.5 * x[i]).exp());
        let log_h = log_y2 - &x;
        Ok(StepSolution { eps, log_h, iterations, residual: norm })
    }

    /// Invertibility determinant `det(I + 1/2 B o (Theta eps 1' + xi eps sgn'))`
    /// with `B = rho0 S W1`.
    pub fn determinant(&self, eps_t: &DVector<f64>, signs: &DVector<f64>) -> f64 {
        invertibility_matrix(&self.dynamics, eps_t, signs).determinant()
    }

    pub fn invert_panel(&self, y: &Panel, init: &InitialConditions) -> Result<Inversion> {
        let n = self.dynamics.n();
        if y.n() != n || init.n() != n {
            return Err(Error::Dimension(format!(
                "panel has {} nodes, initial conditions {}, weights {n}",
                y.n(),
                init.n()
            )));
        }
        let t_len = y.t_len();
        let mut eps = DMatrix::zeros(n, t_len);
        let mut log_h = DMatrix::zeros(n, t_len);
        let mut diagnostics = Vec::with_capacity(t_len);
        let mut eps_prev = init.eps0.clone();
        let mut log_h_prev = init.log_h0();
        for t in 0..t_len {
            let y_t = y.at(t);
            check_nonzero(&y_t, &format!("observation at t = {}", t + 1))?;
            let sol = self.step(&y_t, &eps_prev, &log_h_prev).map_err(|e| match e {
                Error::Inversion { reason, .. } => Error::Inversion { t: t + 1, reason },
                other => other,
            })?;
            let signs = sol.eps.map(f64::signum);
            diagnostics.push(StepDiagnostics {
                t: t + 1,
                iterations: sol.iterations,
                residual: sol.residual,
                determinant: self.determinant(&sol.eps, &signs),
                burn_in: t < DEFAULT_INVERSION_BURN,
            });
            eps.set_column(t, &sol.eps);
            log_h.set_column(t, &sol.log_h);
            eps_prev = sol.eps;
            log_h_prev = sol.log_h;
        }
        Ok(Inversion { eps: Panel::new(eps, PanelKind::Innovations)?, log_h, diagnostics })
    }
}

pub(crate) fn invertibility_matrix(d: &Dynamics, eps_t: &DVector<f64>, signs: &DVector<f64>) -> DMatrix<f64> {
    let n = d.n();
    let theta = d.params.theta_spatial();
    let xi = d.params.xi;
    let mut m = identity(n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] += 0.5 * d.b[(i, j)] * eps_t[i] * (theta + xi * signs[j]);
        }
    }
    m
}

/// Solves one time step of the inversion.
pub fn invert_step(
    y_t: &DVector<f64>,
    y_prev: &DVector<f64>,
    eps_prev: &DVector<f64>,
    p: &ModelParams,
    w1: &WeightMatrix,
    w2: &WeightMatrix,
    opts: NewtonOptions,
) -> Result<DVector<f64>> {
    check_nonzero(y_t, "y_t")?;
    check_nonzero(y_prev, "y_prev")?;
    check_nonzero(eps_prev, "eps_prev")?;
    let inv = Inverter::new(p, w1, w2, opts)?;
    let log_h_prev = DVector::from_fn(y_prev.len(), |i, _| (y_prev[i] * y_prev[i]).ln() - (eps_prev[i] * eps_prev[i]).ln());
    Ok(inv.step(y_t, eps_prev, &log_h_prev)?.eps)
}

pub fn invert_panel(
    y: &Panel,
    p: &ModelParams,
    w1: &WeightMatrix,
    w2: &WeightMatrix,
    init: &InitialConditions,
    opts: NewtonOptions,
) -> Result<Inversion> {
    Inverter::new(p, w1, w2, opts)?.invert_panel(y, init)
}

/// Invertibility determinant at innovations `eps_t`. `signs` supplies the sign
/// vector entering the `xi` term; [`invert_panel`] passes `sgn(eps_t)`.
pub fn invertibility_det(
    eps_t: &DVector<f64>,
    signs: &DVector<f64>,
    p: &ModelParams,
    w1: &WeightMatrix,
    w2: &WeightMatrix,
) -> Result<f64> {
    let d = Dynamics::new(p, w1, w2)?;
    if eps_t.len() != d.n() || signs.len() != d.n() {
        return Err(Error::Dimension("innovation and sign vectors must match the weights".into()));
    }
    Ok(invertibility_matrix(&d, eps_t, signs).determinant())
}
