//! Process simulation and stationarity checks.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{identity, inverse, ones, spectral_radius};
use crate::networks::WeightMatrix;
use crate::panel::{Panel, PanelKind};
use crate::params::{InitialConditions, ModelParams};
use crate::rng::{standard_normal, stream, stream_rng};

/// `E|eps|` for a standard normal innovation, `sqrt(2/pi)`.
pub const NORMAL_ABS_MEAN: f64 = 0.797_884_560_802_865_4;

/// Default number of discarded leading simulation steps.
pub const DEFAULT_BURN_IN: usize = 50;

/// News-impact function `theta*e + xi*(|e| - abs_mean)`, elementwise.
pub fn g_transform(eps: &DVector<f64>, theta: f64, xi: f64, abs_mean: f64) -> DVector<f64> {
    eps.map(|e| g_scalar(e, theta, xi, abs_mean))
}

#[inline]
pub fn g_scalar(e: f64, theta: f64, xi: f64, abs_mean: f64) -> f64 {
    theta * e + xi * (e.abs() - abs_mean)
}

/// Matrices derived from one parameter set and a pair of weight matrices.
///
/// `S = (I - lambda0 W2)^{-1}` is formed once; everything that runs per time
/// step only multiplies by these.
#[derive(Debug, Clone)]
pub struct Dynamics {
    pub params: ModelParams,
    /// `I - lambda0 W2`
    pub a: DMatrix<f64>,
    /// `(I - lambda0 W2)^{-1}`
    pub s: DMatrix<f64>,
    /// `rho0 W1`
    pub rho0_w1: DMatrix<f64>,
    /// `rho0 (I - lambda0 W2)^{-1} W1`, the contemporaneous response matrix `(b_ij)`.
    pub b: DMatrix<f64>,
    /// Scaled raw weights `W1`.
    pub w1: DMatrix<f64>,
    pub abs_mean: f64,
}

impl Dynamics {
    pub fn new(p: &ModelParams, w1: &WeightMatrix, w2: &WeightMatrix) -> Result<Self> {
        if w1.n() != w2.n() {
            return Err(Error::Dimension(format!("W1 is {0}x{0} but W2 is {1}x{1}", w1.n(), w2.n())));
        }
        let n = w1.n();
        let a = identity(n) - w2.entries() * p.lambda0;
        let s = inverse(&a, "I - lambda0 W2")?;
        let rho0_w1 = w1.entries() * p.rho0;
        let b = &s * &rho0_w1;
        Ok(Dynamics { params: *p, a, s, rho0_w1, b, w1: w1.entries().clone(), abs_mean: NORMAL_ABS_MEAN })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    #[inline]
    pub fn g_spatial(&self, eps: &DVector<f64>) -> DVector<f64> {
        g_transform(eps, self.params.theta_spatial(), self.params.xi, self.abs_mean)
    }

    #[inline]
    pub fn g_temporal(&self, eps: &DVector<f64>) -> DVector<f64> {
        g_transform(eps, self.params.theta_temporal(), self.params.xi, self.abs_mean)
    }

    /// One step of the solved recursion:
    /// `ln h_t = S (alpha 1 + rho0 W1 g(eps_t) + rho1 g(eps_{t-1}) + lambda1 ln h_{t-1})`.
    pub fn log_h_step(&self, eps_t: &DVector<f64>, eps_prev: &DVector<f64>, log_h_prev: &DVector<f64>) -> DVector<f64> {
        let p = &self.params;
        let mut rhs = &self.rho0_w1 * self.g_spatial(eps_t);
        rhs += self.g_temporal(eps_prev) * p.rho1;
        rhs += log_h_prev * p.lambda1;
        rhs.add_scalar_mut(p.alpha);
        &self.s * rhs
    }

    /// Long-run mean of `ln h_t`: `((1 - lambda1) I - lambda0 W2)^{-1} alpha 1`.
    pub fn stationary_log_h_mean(&self) -> Result<DVector<f64>> {
        let n = self.n();
        let m = &self.a - identity(n) * self.params.lambda1;
        let inv = inverse(&m, "(1 - lambda1) I - lambda0 W2")?;
        Ok(inv * ones(n) * self.params.alpha)
    }
}

/// Spectral diagnostics of the stationarity conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    /// Spectral radius of `lambda1 (I - lambda0 W2)^{-1}`.
    pub rho_spec_a: f64,
    /// Spectral radius of `lambda0 W2`.
    pub rho_spec_b: f64,
    /// Norm-based sufficient condition `|lambda1| + |lambda0| ||W2||_inf < 1`
    /// (reduces to `|lambda0| + |lambda1| < 1` for row-standardized `W2`).
    pub sufficient_ok: bool,
    /// Both spectral radii below one.
    pub strict_ok: bool,
}

pub fn check_stationarity(p: &ModelParams, w2: &WeightMatrix) -> Result<StationarityReport> {
    let n = w2.n();
    let lw2 = w2.entries() * p.lambda0;
    let a = identity(n) - &lw2;
    let s = inverse(&a, "I - lambda0 W2 (stationarity condition on lambda0 W2 fails)")?;
    let rho_spec_a = spectral_radius(&(s * p.lambda1));
    let rho_spec_b = spectral_radius(&lw2);
    let sufficient_ok = p.lambda1.abs() + p.lambda0.abs() * w2.inf_norm() < 1.0;
    Ok(StationarityReport { rho_spec_a, rho_spec_b, sufficient_ok, strict_ok: rho_spec_a < 1.0 && rho_spec_b < 1.0 })
}

/// Simulated panels; `presample` holds `(Y, eps)` at the last discarded step,
/// i.e. the exact pre-sample values for the returned window.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub y: Panel,
    pub eps: Panel,
    pub h: Panel,
    pub presample: InitialConditions,
}

/// Simulates `burn_in + t_len` steps from `init` and keeps the last `t_len`.
pub fn simulate(
    p: &ModelParams,
    w1: &WeightMatrix,
    w2: &WeightMatrix,
    t_len: usize,
    burn_in: usize,
    init: &InitialConditions,
    seed: u64,
) -> Result<Simulation> {
    let mut rng = stream_rng(seed, stream::INNOVATIONS);
    simulate_with(p, w1, w2, t_len, burn_in, init, |_, _| standard_normal(&mut rng))
}

/// Like [`simulate`] but with innovations supplied by `draw(t, i)` (t counts from
/// the first burn-in step).
pub fn simulate_with(
    p: &ModelParams,
    w1: &WeightMatrix,
    w2: &WeightMatrix,
    t_len: usize,
    burn_in: usize,
    init: &InitialConditions,
    mut draw: impl FnMut(usize, usize) -> f64,
) -> Result<Simulation> {
    if t_len == 0 {
        return Err(Error::Invalid("t_len must be positive".into()));
    }
    if init.n() != w1.n() {
        return Err(Error::Dimension(format!("initial conditions have {} nodes, weights {}", init.n(), w1.n())));
    }
    let report = check_stationarity(p, w2)?;
    if !report.strict_ok {
        return Err(Error::NonStationary(format!(
            "spectral radii {:.6} and {:.6} must both be below 1",
            report.rho_spec_a, report.rho_spec_b
        )));
    }
    let dynamics = Dynamics::new(p, w1, w2)?;
    let n = w1.n();
    let mut y = DMatrix::zeros(n, t_len);
    let mut eps = DMatrix::zeros(n, t_len);
    let mut h = DMatrix::zeros(n, t_len);
    let mut eps_prev = init.eps0.clone();
    let mut log_h = init.log_h0();
    let mut presample = init.clone();
    for step in 0..burn_in + t_len {
        let eps_t = DVector::from_fn(n, |i, _| draw(step, i));
        log_h = dynamics.log_h_step(&eps_t, &eps_prev, &log_h);
        let y_t = DVector::from_fn(n, |i, _| (0.5 * log_h[i]).exp() * eps_t[i]);
        if step + 1 == burn_in {
            presample = InitialConditions { y0: y_t.clone(), eps0: eps_t.clone() };
        }
        if step >= burn_in {
            let t = step - burn_in;
            y.set_column(t, &y_t);
            eps.set_column(t, &eps_t);
            h.set_column(t, &log_h.map(f64::exp));
        }
        eps_prev = eps_t;
    }
    Ok(Simulation {
        y: Panel::new(y, PanelKind::Returns)?,
        eps: Panel::new(eps, PanelKind::Innovations)?,
        h: Panel::new(h, PanelKind::Volatility)?,
        presample,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{standardized_grid, Contiguity};

    fn grids(r: usize, c: usize) -> (WeightMatrix, WeightMatrix) {
        (standardized_grid(r, c, Contiguity::Queen).unwrap(), standardized_grid(r, c, Contiguity::Rook).unwrap())
    }

    #[test]
    fn g_at_zero() {
        let g = g_transform(&DVector::from_element(3, 0.0), 0.7, 1.0, NORMAL_ABS_MEAN);
        assert!(g.iter().all(|&v| (v + 0.797885).abs() < 1e-6));
    }

    #[test]
    fn g_at_one() {
        let g = g_scalar(1.0, 0.4, 1.0, NORMAL_ABS_MEAN);
        assert!((g - 0.602115).abs() < 1e-6);
    }

    #[test]
    fn g_asymmetry_is_two_theta() {
        let d = g_scalar(1.0, 0.4, 1.0, NORMAL_ABS_MEAN) - g_scalar(-1.0, 0.4, 1.0, NORMAL_ABS_MEAN);
        assert!((d - 0.8).abs() < 1e-15);
    }

    #[test]
    fn stationarity_reference_set() {
        let (_, w2) = grids(5, 5);
        let r = check_stationarity(&ModelParams::new(0.5, 0.25, 0.3, 0.35, 0.4, 0.4), &w2).unwrap();
        assert!(r.sufficient_ok && r.strict_ok);
    }

    #[test]
    fn stationarity_without_spatial_garch() {
        let (_, w2) = grids(3, 3);
        let r = check_stationarity(&ModelParams::new(0.0, 0.0, 0.0, 0.0, 0.999, 0.0), &w2).unwrap();
        assert!((r.rho_spec_a - 0.999).abs() < 1e-12);
        assert!(r.strict_ok);
        let r = check_stationarity(&ModelParams::new(0.0, 0.0, 0.0, 0.0, 1.0, 0.0), &w2).unwrap();
        assert!(!r.strict_ok);
    }

    #[test]
    fn sufficient_implies_strict_on_standardized_grids() {
        let (_, w2) = grids(4, 4);
        for &l0 in &[-0.6, -0.2, 0.0, 0.3, 0.5] {
            for &l1 in &[-0.3, 0.1, 0.4] {
                let r = check_stationarity(&ModelParams::new(0.0, 0.0, 0.0, l0, l1, 0.0), &w2).unwrap();
                if r.sufficient_ok {
                    assert!(r.strict_ok, "l0={l0} l1={l1}");
                }
            }
        }
    }

    #[test]
    fn non_stationary_simulation_rejected() {
        let (w1, w2) = grids(2, 2);
        let p = ModelParams::new(0.0, 0.0, 0.0, 0.5, 0.6, 0.0);
        let r = simulate(&p, &w1, &w2, 10, 0, &InitialConditions::constant(4, 1.0), 1);
        assert!(matches!(r, Err(Error::NonStationary(_))));
    }

    #[test]
    fn dynamics_off_gives_unit_volatility() {
        let (w1, w2) = grids(3, 3);
        let sim = simulate(&ModelParams::static_volatility(0.0), &w1, &w2, 20, 5, &InitialConditions::default_for(9), 4).unwrap();
        assert!(sim.h.values().iter().all(|&v| v == 1.0));
        assert_eq!(sim.y.values(), sim.eps.values());
    }

    #[test]
    fn constant_log_volatility() {
        let (w1, w2) = grids(3, 3);
        let sim = simulate(&ModelParams::static_volatility(0.7), &w1, &w2, 10, 0, &InitialConditions::default_for(9), 4).unwrap();
        assert!(sim.h.values().iter().all(|&v| (v - 0.7f64.exp()).abs() < 1e-14));
    }

    #[test]
    fn sign_flip_invariance_without_leverage() {
        let (w1, w2) = grids(3, 3);
        let p = ModelParams::new(0.3, 0.4, 0.3, 0.2, 0.4, 0.0);
        let init = InitialConditions::constant(9, 0.5);
        let eps = crate::rng::seeded_normal_panel(9, 30, 8).unwrap();
        let a = simulate_with(&p, &w1, &w2, 30, 0, &init, |t, i| eps.values()[(i, t)]).unwrap();
        let b = simulate_with(&p, &w1, &w2, 30, 0, &init, |t, i| -eps.values()[(i, t)]).unwrap();
        for (x, y) in a.h.values().iter().zip(b.h.values().iter()) {
            assert!((x - y).abs() <= 1e-12 * x.abs());
        }
    }

    #[test]
    fn volatility_positive_and_seed_deterministic() {
        let (w1, w2) = grids(4, 4);
        let p = ModelParams::model_a();
        let init = InitialConditions::default_for(16);
        let a = simulate(&p, &w1, &w2, 100, 50, &init, 3).unwrap();
        let b = simulate(&p, &w1, &w2, 100, 50, &init, 3).unwrap();
        assert!(a.h.values().iter().all(|&v| v > 0.0));
        assert_eq!(a.y, b.y);
    }

    #[test]
    fn long_run_mean_of_log_volatility() {
        let (w1, w2) = grids(2, 2);
        let p = ModelParams::model_b();
        let init = InitialConditions::default_for(4);
        let sim = simulate(&p, &w1, &w2, 100_000, 100, &init, 12).unwrap();
        let expected = Dynamics::new(&p, &w1, &w2).unwrap().stationary_log_h_mean().unwrap();
        for i in 0..4 {
            let lh: Vec<f64> = sim.h.series(i).iter().map(|v| v.ln()).collect();
            let mean = lh.iter().sum::<f64>() / lh.len() as f64;
            // ln h is strongly autocorrelated; 0.05 is several effective standard errors.
            assert!((mean - expected[i]).abs() < 0.05, "node {i}: {mean} vs {}", expected[i]);
        }
    }
}
