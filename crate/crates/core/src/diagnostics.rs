//! Residual adequacy tests: Ljung-Box over time, Moran's I over the network.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::networks::WeightMatrix;
use crate::panel::Panel;

pub const DEFAULT_MAX_LAG: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Sample autocorrelations `r_1, ..., r_max_lag`.
pub fn autocorrelations(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let t = series.len();
    let mean = series.iter().sum::<f64>() / t as f64;
    let z: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let denom: f64 = z.iter().map(|v| v * v).sum();
    if !(denom > 0.0) {
        return Err(Error::Invalid("series has zero variance".into()));
    }
    Ok((1..=max_lag).map(|k| (k..t).map(|i| z[i] * z[i - k]).sum::<f64>() / denom).collect())
}

/// `Q = T (T + 2) sum_k r_k^2 / (T - k)`, compared with chi-square(`max_lag`).
pub fn ljung_box(series: &[f64], max_lag: usize) -> Result<TestResult> {
    let t = series.len();
    if max_lag == 0 || t <= max_lag {
        return Err(Error::Invalid(format!("need 1 <= max_lag < T, got max_lag {max_lag} with T = {t}")));
    }
    let r = autocorrelations(series, max_lag)?;
    let tf = t as f64;
    let q = tf * (tf + 2.0) * r.iter().enumerate().map(|(k, rk)| rk * rk / (tf - (k + 1) as f64)).sum::<f64>();
    let chi = ChiSquared::new(max_lag as f64).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(TestResult { statistic: q, p_value: chi.sf(q) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoranTest {
    pub statistic: f64,
    pub expected: f64,
    /// Variance under the randomization assumption.
    pub variance: f64,
    pub z: f64,
    /// Two-sided normal-approximation p-value.
    pub p_value: f64,
}

/// Moran's I with randomization-assumption inference.
pub fn morans_i(x: &[f64], w: &WeightMatrix) -> Result<MoranTest> {
    let n = x.len();
    if n != w.n() {
        return Err(Error::Dimension(format!("{n} values for a {0}x{0} weight matrix", w.n())));
    }
    if n < 4 {
        return Err(Error::Invalid("Moran's I inference needs at least 4 nodes".into()));
    }
    let wm = w.entries();
    let s0 = wm.sum();
    if s0 == 0.0 {
        return Err(Error::Invalid("weight matrix has no non-zero entry".into()));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let z = DVector::from_iterator(n, x.iter().map(|v| v - mean));
    let m2 = z.norm_squared();
    if !(m2 > 0.0) {
        return Err(Error::Invalid("values have zero variance".into()));
    }
    let nf = n as f64;
    let statistic = nf / s0 * (z.transpose() * wm * &z)[0] / m2;

    let sym = wm + wm.transpose();
    let s1 = 0.5 * sym.norm_squared();
    let s2: f64 = (0..n).map(|i| (wm.row(i).sum() + wm.column(i).sum()).powi(2)).sum();
    let m4: f64 = z.iter().map(|v| v.powi(4)).sum();
    let b2 = nf * m4 / (m2 * m2);
    let expected = -1.0 / (nf - 1.0);
    let e_i2 = (nf * ((nf * nf - 3.0 * nf + 3.0) * s1 - nf * s2 + 3.0 * s0 * s0)
        - b2 * ((nf * nf - nf) * s1 - 2.0 * nf * s2 + 6.0 * s0 * s0))
        / ((nf - 1.0) * (nf - 2.0) * (nf - 3.0) * s0 * s0);
    let variance = e_i2 - expected * expected;
    if !(variance > 0.0) {
        return Err(Error::Numerical("non-positive Moran variance".into()));
    }
    let zs = (statistic - expected) / variance.sqrt();
    let p_value = 2.0 * Normal::standard().sf(zs.abs());
    Ok(MoranTest { statistic, expected, variance, z: zs, p_value })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignificantFractions {
    pub ljung_box_raw: f64,
    pub ljung_box_squared: f64,
    pub moran_raw: f64,
    pub moran_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub alpha: f64,
    pub max_lag: usize,
    /// Per node.
    pub ljung_box_raw: Vec<f64>,
    pub ljung_box_squared: Vec<f64>,
    /// Per time point.
    pub moran_raw: Vec<f64>,
    pub moran_squared: Vec<f64>,
    pub fractions: SignificantFractions,
}

fn share_below(p: &[f64], alpha: f64) -> f64 {
    p.iter().filter(|&&v| v < alpha).count() as f64 / p.len() as f64
}

/// Ljung-Box per node and Moran's I per time point, on residuals and squared residuals.
pub fn panel_diagnostics(residuals: &Panel, w: &WeightMatrix, max_lag: usize, alpha: f64) -> Result<DiagnosticsReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Invalid("alpha must lie in (0, 1)".into()));
    }
    let v = residuals.values();
    let sq = v.map(|x| x * x);
    let mut lb_raw = Vec::with_capacity(v.nrows());
    let mut lb_sq = Vec::with_capacity(v.nrows());
    for i in 0..v.nrows() {
        lb_raw.push(ljung_box(&v.row(i).iter().copied().collect::<Vec<_>>(), max_lag)?.p_value);
        lb_sq.push(ljung_box(&sq.row(i).iter().copied().collect::<Vec<_>>(), max_lag)?.p_value);
    }
    let mut mo_raw = Vec::with_capacity(v.ncols());
    let mut mo_sq = Vec::with_capacity(v.ncols());
    for t in 0..v.ncols() {
        mo_raw.push(morans_i(v.column(t).as_slice(), w)?.p_value);
        mo_sq.push(morans_i(sq.column(t).as_slice(), w)?.p_value);
    }
    let fractions = SignificantFractions {
        ljung_box_raw: share_below(&lb_raw, alpha),
        ljung_box_squared: share_below(&lb_sq, alpha),
        moran_raw: share_below(&mo_raw, alpha),
        moran_squared: share_below(&mo_sq, alpha),
    };
    Ok(DiagnosticsReport { alpha, max_lag, ljung_box_raw: lb_raw, ljung_box_squared: lb_sq, moran_raw: mo_raw, moran_squared: mo_sq, fractions })
}
