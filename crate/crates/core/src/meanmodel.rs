//! Spatial dynamic panel mean filter
//! `Y_t = rho W1 Y_t + gamma Y_{t-1} + lambda W2 Y_{t-1} + u_t`.
//!
//! `rho` is profiled over a grid on `(-0.995, 0.995)` and refined by golden
//! section; `(gamma, lambda)` solve least squares for each `rho`.

use nalgebra::{DMatrix, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{identity, log_abs_det};
use crate::networks::WeightMatrix;
use crate::panel::{Panel, PanelKind};

pub const RHO_BOUND: f64 = 0.995;
pub const GRID_STEP: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpdFit {
    pub rho: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub sigma2: f64,
    pub loglik: f64,
    /// Residuals `u_2, ..., u_T`.
    #[serde(skip)]
    pub residuals: Option<Panel>,
}

/// Sufficient statistics shared by every `rho`.
struct Profile<'a> {
    w1: &'a DMatrix<f64>,
    xtx: Matrix2<f64>,
    /// Rows: `X' Y`, `X' W1 Y`
    xty: Vector2<f64>,
    xtwy: Vector2<f64>,
    yy: f64,
    ywy: f64,
    wywy: f64,
    n_obs: f64,
    periods: f64,
}

impl Profile<'_> {
    fn coefficients(&self, rho: f64) -> Option<Vector2<f64>> {
        self.xtx.try_inverse().map(|inv| inv * (self.xty - self.xtwy * rho))
    }

    fn sigma2(&self, rho: f64, beta: &Vector2<f64>) -> f64 {
        let zz = self.yy - 2.0 * rho * self.ywy + rho * rho * self.wywy;
        let xtz = self.xty - self.xtwy * rho;
        (zz - beta.dot(&xtz)) / self.n_obs
    }

    fn loglik(&self, rho: f64) -> f64 {
        let Some(beta) = self.coefficients(rho) else {
            return f64::NEG_INFINITY;
        };
        let s2 = self.sigma2(rho, &beta);
        let (log_det, sign) = log_abs_det(identity(self.w1.nrows()) - self.w1 * rho);
        if !(s2 > 0.0) || !log_det.is_finite() || sign == 0.0 {
            return f64::NEG_INFINITY;
        }
        -0.5 * self.n_obs * (s2.ln() + 1.0 + (2.0 * std::f64::consts::PI).ln()) + self.periods * log_det
    }
}

/// Gaussian profile log-likelihood at `rho`.
pub fn sdpd_profile_loglik(y: &Panel, w1: &WeightMatrix, w2: &WeightMatrix, rho: f64) -> Result<f64> {
    Ok(build_profile(y, w1, w2)?.loglik(rho))
}

fn build_profile<'a>(y: &Panel, w1: &'a WeightMatrix, w2: &WeightMatrix) -> Result<Profile<'a>> {
    let n = y.n();
    let t_len = y.t_len();
    if w1.n() != n || w2.n() != n {
        return Err(Error::Dimension("weights do not match the panel".into()));
    }
    if t_len < 10 {
        return Err(Error::Invalid(format!("the mean filter needs T >= 10, got {t_len}")));
    }
    let v = y.values();
    let cur = v.columns(1, t_len - 1).into_owned();
    let lag = v.columns(0, t_len - 1).into_owned();
    let w1_cur = w1.entries() * &cur;
    let w2_lag = w2.entries() * &lag;
    let dot = |a: &DMatrix<f64>, b: &DMatrix<f64>| a.dot(b);
    let xtx = Matrix2::new(dot(&lag, &lag), dot(&lag, &w2_lag), dot(&lag, &w2_lag), dot(&w2_lag, &w2_lag));
    let det = xtx.determinant();
    if !(det.abs() > 1e-12 * xtx.norm_squared().max(f64::MIN_POSITIVE)) {
        return Err(Error::Singular("mean-filter regression design".into()));
    }
    Ok(Profile {
        w1: w1.entries(),
        xty: Vector2::new(dot(&lag, &cur), dot(&w2_lag, &cur)),
        xtwy: Vector2::new(dot(&lag, &w1_cur), dot(&w2_lag, &w1_cur)),
        yy: dot(&cur, &cur),
        ywy: dot(&cur, &w1_cur),
        wywy: dot(&w1_cur, &w1_cur),
        n_obs: (n * (t_len - 1)) as f64,
        periods: (t_len - 1) as f64,
        xtx,
    })
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Fits the mean model and returns residuals for `t = 2..T`.
pub fn fit_sdpd(y: &Panel, w1: &WeightMatrix, w2: &WeightMatrix) -> Result<SdpdFit> {
    let prof = build_profile(y, w1, w2)?;
    let steps = (2.0 * RHO_BOUND / GRID_STEP).round() as usize;
    let (mut best_rho, mut best_ll) = (0.0, f64::NEG_INFINITY);
    for k in 0..=steps {
        let rho = -RHO_BOUND + k as f64 * GRID_STEP;
        let ll = prof.loglik(rho);
        if ll > best_ll {
            best_ll = ll;
            best_rho = rho;
        }
    }
    if !best_ll.is_finite() {
        return Err(Error::Numerical("profile likelihood is undefined over the whole grid".into()));
    }
    let lo = (best_rho - GRID_STEP).max(-RHO_BOUND);
    let hi = (best_rho + GRID_STEP).min(RHO_BOUND);
    let (r, ll) = golden_max(|r| prof.loglik(r), lo, hi, 1e-9);
    if ll > best_ll {
        best_rho = r;
        best_ll = ll;
    }
    let beta = prof.coefficients(best_rho).ok_or_else(|| Error::Singular("mean-filter regression design".into()))?;
    let (gamma, lambda) = (beta[0], beta[1]);
    let residuals = sdpd_residuals(y, w1, w2, best_rho, gamma, lambda)?;
    Ok(SdpdFit { rho: best_rho, gamma, lambda, sigma2: prof.sigma2(best_rho, &beta), loglik: best_ll, residuals: Some(residuals) })
}

/// `u_t = (I - rho W1) y_t - gamma y_{t-1} - lambda W2 y_{t-1}` for `t = 2..T`.
pub fn sdpd_residuals(y: &Panel, w1: &WeightMatrix, w2: &WeightMatrix, rho: f64, gamma: f64, lambda: f64) -> Result<Panel> {
    let v = y.values();
    let t_len = y.t_len();
    let cur = v.columns(1, t_len - 1);
    let lag = v.columns(0, t_len - 1);
    let u = cur - w1.entries() * cur * rho - lag * gamma - w2.entries() * lag * lambda;
    Panel::new(u, PanelKind::Residuals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::inverse;
    use crate::networks::{standardized_grid, Contiguity};
    use crate::rng::{standard_normal, stream_rng};

    fn generate(rho: f64, gamma: f64, lambda: f64, t_len: usize, seed: u64) -> (Panel, WeightMatrix, WeightMatrix) {
        let w1 = standardized_grid(4, 4, Contiguity::Queen).unwrap();
        let w2 = standardized_grid(4, 4, Contiguity::Rook).unwrap();
        let a_inv = inverse(&(identity(16) - w1.entries() * rho), "a").unwrap();
        let mut rng = stream_rng(seed, 1);
        let mut y = DMatrix::zeros(16, t_len + 50);
        for t in 1..t_len + 50 {
            let prev = y.column(t - 1).into_owned();
            let u = nalgebra::DVector::from_fn(16, |_, _| standard_normal(&mut rng));
            let next = &a_inv * (&prev * gamma + w2.entries() * &prev * lambda + u);
            y.set_column(t, &next);
        }
        (Panel::new(y.columns(50, t_len).into_owned(), PanelKind::Returns).unwrap(), w1, w2)
    }

    #[test]
    fn pure_noise_recovers_zero() {
        let (y, w1, w2) = generate(0.0, 0.0, 0.0, 1000, 1);
        let f = fit_sdpd(&y, &w1, &w2).unwrap();
        assert!(f.rho.abs() < 0.05 && f.gamma.abs() < 0.05 && f.lambda.abs() < 0.05, "{f:?}");
    }

    #[test]
    fn recovers_generating_coefficients() {
        let (y, w1, w2) = generate(0.3, 0.2, 0.1, 1000, 2);
        let f = fit_sdpd(&y, &w1, &w2).unwrap();
        assert!((f.rho - 0.3).abs() < 0.05 && (f.gamma - 0.2).abs() < 0.05 && (f.lambda - 0.1).abs() < 0.05, "{f:?}");
        // Pooled lag-one autocorrelation of the residual panel.
        let u = f.residuals.unwrap().into_values();
        let t_len = u.ncols();
        let num = u.columns(1, t_len - 1).dot(&u.columns(0, t_len - 1));
        assert!((num / u.norm_squared()).abs() < 0.05);
    }

    #[test]
    fn residual_reconstruction_identity() {
        let (y, w1, w2) = generate(0.2, 0.3, -0.1, 40, 3);
        let f = fit_sdpd(&y, &w1, &w2).unwrap();
        let r = f.residuals.unwrap();
        for t in 1..40 {
            let yt = y.at(t);
            let yp = y.at(t - 1);
            let u = &yt - w1.entries() * &yt * f.rho - &yp * f.gamma - w2.entries() * &yp * f.lambda;
            assert!((u - r.at(t - 1)).amax() < 1e-12);
        }
    }

    #[test]
    fn returned_rho_beats_every_grid_point() {
        let (y, w1, w2) = generate(0.4, 0.1, 0.2, 60, 4);
        let f = fit_sdpd(&y, &w1, &w2).unwrap();
        for k in 0..=398 {
            let rho = -RHO_BOUND + k as f64 * GRID_STEP;
            assert!(sdpd_profile_loglik(&y, &w1, &w2, rho).unwrap() <= f.loglik + 1e-9);
        }
    }

    #[test]
    fn short_panels_rejected() {
        let (y, w1, w2) = generate(0.0, 0.0, 0.0, 9, 5);
        assert!(fit_sdpd(&y, &w1, &w2).is_err());
    }
}
