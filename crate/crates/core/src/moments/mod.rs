//! Analytic moments of the process.
//!
//! * `var_g`, [`delta_moments`]: moments of the VAR(1) noise of `ln h_t`.
//! * [`nu_moments`]: mean, variance and lag-one covariance of the noise of the
//!   log-squared representation `ln Y_t^2 = lambda1 S ln Y_{t-1}^2 + nu_t`.
//! * [`closed_moments_theta_only`]: exact moments of `Y_t` when `xi = 0`.
//! * [`general_moments_quadrature`]: moments of `Y_t` for any `xi`, one
//!   Gaussian integral per node and lag, evaluated by half-range Gauss–Hermite.
//!
//! Infinite products over lags are truncated adaptively at the first lag whose
//! log-factor falls below `trunc_tol`, capped at [`MAX_LAGS`].

mod quadrature;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{identity, inverse, ones};
use crate::networks::WeightMatrix;
use crate::params::ModelParams;
use crate::process::{check_stationarity, g_scalar, Dynamics, NORMAL_ABS_MEAN};

pub use quadrature::HalfRangeHermite;

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
/// `E ln eps^2 = -ln 2 - gamma` for standard normal `eps`.
pub const LOG_CHI2_MEAN: f64 = -std::f64::consts::LN_2 - EULER_GAMMA;
/// `Var ln eps^2 = psi'(1/2) = pi^2 / 2` (trigamma at one half).
pub const LOG_CHI2_VAR: f64 = std::f64::consts::PI * std::f64::consts::PI / 2.0;
pub const MAX_LAGS: usize = 500;
pub const DEFAULT_QUAD_NODES: usize = 64;

/// `Var g(eps) = theta^2 + xi^2 (1 - 2/pi)`.
pub fn var_g(theta: f64, xi: f64) -> f64 {
    theta * theta + xi * xi * (1.0 - 2.0 / std::f64::consts::PI)
}

/// `Cov(ln eps^2, g(eps)) = 2 xi ln 2 sqrt(2/pi)`.
pub fn cov_log_sq_g(xi: f64) -> f64 {
    2.0 * xi * std::f64::consts::LN_2 * NORMAL_ABS_MEAN
}

fn single_theta(p: &ModelParams) -> Result<()> {
    if p.is_two_theta() {
        return Err(Error::Invalid("analytic moments assume one leverage parameter".into()));
    }
    Ok(())
}

/// Mean and covariance of `Delta_t = S (alpha 1 + rho0 W1 g(eps_t) + rho1 g(eps_{t-1}))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaNoise {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

pub fn delta_moments(p: &ModelParams, w1: &WeightMatrix, w2: &WeightMatrix) -> Result<DeltaNoise> {
    single_theta(p)?;
    let d = Dynamics::new(p, w1, w2)?;
    let n = d.n();
    let vg = var_g(p.theta, p.xi);
    let mean = &d.s * ones(n) * p.alpha;
    let inner = (w1.entries() * w1.entries().transpose()) * (p.rho0 * p.rho0 * vg) + identity(n) * (p.rho1 * p.rho1 * vg);
    let cov = &d.s * inner * d.s.transpose();
    Ok(DeltaNoise { mean, cov })
}

/// Moments of `nu_t = ln Y_t^2 - lambda1 S ln Y_{t-1}^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuMoments {
    pub mean: DVector<f64>,
    /// `Cov(nu_t)`
    pub cov0: DMatrix<f64>,
    /// `Cov(nu_t, nu_{t-1})`
    pub cov1: DMatrix<f64>,
}

pub fn nu_moments(p: &ModelParams, w1: &WeightMatrix, w2: &WeightMatrix) -> Result<NuMoments> {
    single_theta(p)?;
    let d = Dynamics::new(p, w1, w2)?;
    let n = d.n();
    let s = &d.s;
    let st = s.transpose();
    let w = w1.entries();
    let vg = var_g(p.theta, p.xi);
    let c = cov_log_sq_g(p.xi);
    let (rho0, rho1, l1) = (p.rho0, p.rho1, p.lambda1);

    let mean = s * ones(n) * p.alpha + (identity(n) - s * l1) * ones(n) * LOG_CHI2_MEAN;

    let sw = s * w;
    let cov0 = (&sw * sw.transpose()) * (rho0 * rho0 * vg)
        + identity(n) * LOG_CHI2_VAR
        + (&sw + sw.transpose()) * (rho0 * c)
        + (s * &st) * (rho1 * rho1 * vg + l1 * l1 * LOG_CHI2_VAR - 2.0 * rho1 * l1 * c);

    let cov1 = (s * w.transpose() * &st) * (rho0 * rho1 * vg - l1 * rho0 * c) + s * (rho1 * c - l1 * LOG_CHI2_VAR);
    Ok(NuMoments { mean, cov0, cov1 })
}

/// How an infinite lag product was truncated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    /// Number of lag factors multiplied in.
    pub lags_used: usize,
    /// Log of the last factor included.
    pub last_log_factor: f64,
}

/// Exact `xi = 0` moments of `Y_t` at nodes `i` and `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedMoments {
    /// `E Y_t(s_i)`
    pub mean_i: f64,
    /// `E Y_t(s_i)^2`
    pub second_i: f64,
    /// `E Y_t(s_i) Y_t(s_j)`; equals `second_i` when `i == j`.
    pub cross_ij: f64,
    pub truncation: Truncation,
}

/// Shared pieces of the explicit stationary solution.
struct Solution {
    s: DMatrix<f64>,
    /// `rho0 S W1`
    b: DMatrix<f64>,
    /// `rho0 lambda1 S W1 + rho1 I`
    m: DMatrix<f64>,
    /// `((1 - lambda1) I - lambda0 W2)^{-1} alpha 1`
    level: DVector<f64>,
    lambda1: f64,
}

impl Solution {
    fn new(p: &ModelParams, w1: &WeightMatrix, w2: &WeightMatrix) -> Result<Self> {
        single_theta(p)?;
        let report = check_stationarity(p, w2)?;
        if !report.strict_ok {
            return Err(Error::NonStationary(format!(
                "spectral radii {:.6}, {:.6}",
                report.rho_spec_a, report.rho_spec_b
            )));
        }
        let d = Dynamics::new(p, w1, w2)?;
        let n = d.n();
        let m = &d.b * p.lambda1 + identity(n) * p.rho1;
        let level = d.stationary_log_h_mean()?;
        let _ = inverse(&d.a, "I - lambda0 W2")?;
        Ok(Solution { s: d.s.clone(), b: d.b.clone(), m, level, lambda1: p.lambda1 })
    }

    /// Runs `log_factor(v, c_v)` for `v = 1, 2, ...` where
    /// `c_v = lambda1^{v-1} r S^v M` and sums the log-factors until one drops
    /// below `tol` in magnitude.
    fn lag_product(
        &self,
        r: &RowDVector<f64>,
        tol: f64,
        mut log_factor: impl FnMut(&RowDVector<f64>) -> f64,
    ) -> Result<(f64, Truncation)> {
        let mut row = r.clone();
        let mut total = 0.0;
        for v in 1..=MAX_LAGS {
            row = &row * &self.s;
            let c = (&row * &self.m) * self.lambda1.powi(v as i32 - 1);
            let lf = log_factor(&c);
            total += lf;
            if lf.abs() < tol {
                return Ok((total, Truncation { lags_used: v, last_log_factor: lf }));
            }
        }
        Err(Error::Numerical(format!("lag product did not reach tolerance {tol} within {MAX_LAGS} lags")))
    }
}

pub fn closed_moments_theta_only(
    p: &ModelParams,
    w1: &WeightMatrix,
    w2: &WeightMatrix,
    i: usize,
    j: usize,
    trunc_tol: f64,
) -> Result<ClosedMoments> {
    if p.xi != 0.0 {
        return Err(Error::Invalid("closed-form moments require xi = 0".into()));
    }
    let sol = Solution::new(p, w1, w2)?;
    let n = sol.s.nrows();
    if i >= n || j >= n {
        return Err(Error::Invalid(format!("node index out of range for n = {n}")));
    }
    let th2 = p.theta * p.theta;
    let e = |k: usize| RowDVector::from_fn(n, |_, c| if c == k { 1.0 } else { 0.0 });
    let ei = e(i);
    let ej = e(j);
    let eij = &ei + &ej;

    // With xi = 0, g(eps) = theta eps is Gaussian and E exp(c' eps) = exp(|c|^2 / 2).
    let bi = &ei * &sol.b;
    let b_ii = sol.b[(i, i)];
    let bb_ii = bi.norm_squared();

    let (lp_half, trunc) = sol.lag_product(&ei, trunc_tol, |c| th2 * c.norm_squared() / 8.0)?;
    let (lp_full, _) = sol.lag_product(&ei, trunc_tol, |c| th2 * c.norm_squared() / 2.0)?;

    let level_i = sol.level[i];
    let mean_i = (0.5 * level_i).exp() * 0.5 * p.theta * b_ii * (th2 * bb_ii / 8.0).exp() * lp_half.exp();
    let second_i = level_i.exp() * (1.0 + th2 * b_ii * b_ii) * (th2 * bb_ii / 2.0).exp() * lp_full.exp();

    let cross_ij = if i == j {
        second_i
    } else {
        let bij = &eij * &sol.b;
        let (lp_cross, _) = sol.lag_product(&eij, trunc_tol, |c| th2 * c.norm_squared() / 8.0)?;
        (0.5 * (sol.level[i] + sol.level[j])).exp()
            * 0.25
            * th2
            * bij[i]
            * bij[j]
            * (th2 * bij.norm_squared() / 8.0).exp()
            * lp_cross.exp()
    };
    Ok(ClosedMoments { mean_i, second_i, cross_ij, truncation: trunc })
}

/// Which moment of `Y_t(s_i)` to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentOrder {
    /// `E Y_t(s_i)`
    First,
    /// `E Y_t(s_i)^2`
    Second,
    /// `E Y_t(s_i) Y_t(s_j)`
    Cross(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureMoment {
    pub value: f64,
    pub truncation: Truncation,
}

pub fn general_moments_quadrature(
    p: &ModelParams,
    w1: &WeightMatrix,
    w2: &WeightMatrix,
    i: usize,
    order: MomentOrder,
    trunc_tol: f64,
    quad_nodes: usize,
) -> Result<QuadratureMoment> {
    if quad_nodes < 20 {
        return Err(Error::Invalid("quadrature needs at least 20 nodes".into()));
    }
    let sol = Solution::new(p, w1, w2)?;
    let n = sol.s.nrows();
    let rule = HalfRangeHermite::new(quad_nodes);
    let (theta, xi) = (p.theta, p.xi);
    let g = |x: f64| g_scalar(x, theta, xi, NORMAL_ABS_MEAN);
    // E X^k exp(a g(X)), X ~ N(0, 1)
    let integral = |k: i32, a: f64| rule.normal_expectation(|x| x.powi(k) * (a * g(x)).exp());
    let log_mgf_sum = |c: &RowDVector<f64>| c.iter().map(|&a| if a == 0.0 { 0.0 } else { integral(0, a).ln() }).sum::<f64>();

    let e = |k: usize| RowDVector::from_fn(n, |_, c| if c == k { 1.0 } else { 0.0 });
    if i >= n {
        return Err(Error::Invalid(format!("node index {i} out of range")));
    }
    let (row, scale, powers): (RowDVector<f64>, f64, Vec<(usize, i32)>) = match order {
        MomentOrder::First => (e(i), 0.5, vec![(i, 1)]),
        MomentOrder::Second => (e(i), 1.0, vec![(i, 2)]),
        MomentOrder::Cross(j) if j >= n => return Err(Error::Invalid(format!("node index {j} out of range"))),
        MomentOrder::Cross(j) if j == i => (e(i), 1.0, vec![(i, 2)]),
        MomentOrder::Cross(j) => (e(i) + e(j), 0.5, vec![(i, 1), (j, 1)]),
    };

    let level = (&row * &sol.level)[0] * scale;
    let c0 = (&row * &sol.b) * scale;
    let mut contemporaneous = 1.0;
    for k in 0..n {
        let power = powers.iter().find(|(node, _)| *node == k).map_or(0, |(_, pw)| *pw);
        if power == 0 && c0[k] == 0.0 {
            continue;
        }
        contemporaneous *= integral(power, c0[k]);
    }
    let (lag_log, truncation) = sol.lag_product(&row, trunc_tol, |c| log_mgf_sum(&(c * scale)))?;
    Ok(QuadratureMoment { value: level.exp() * contemporaneous * lag_log.exp(), truncation })
}
