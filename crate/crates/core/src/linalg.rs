//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    // The unbounded Schur iteration can cycle on matrices with repeated
    // eigenvalues, so cap it and fall back to Gelfand's formula.
    match nalgebra::Schur::try_new(m.clone(), f64::EPSILON, 5_000) {
        Some(schur) => schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max),
        None => gelfand_radius(m),
    }
}

/// `lim ||A^k||^(1/k)` by repeated squaring with rescaling.
fn gelfand_radius(m: &DMatrix<f64>) -> f64 {
    let mut a = m.clone();
    let mut log_scale = 0.0;
    let mut power = 1.0;
    for _ in 0..60 {
        let norm = a.amax();
        if norm == 0.0 {
            return 0.0;
        }
        a /= norm;
        log_scale += norm.ln() / power;
        a = &a * &a;
        power *= 2.0;
    }
    let norm = a.amax();
    if norm == 0.0 {
        return 0.0;
    }
    (log_scale + norm.ln() / power).exp()
}

/// Inverse via LU; `what` names the matrix in the error.
pub fn inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let lu = m.clone().lu();
    if !lu.is_invertible() {
        return Err(Error::Singular(what.to_string()));
    }
    let inv = lu.try_inverse().ok_or_else(|| Error::Singular(what.to_string()))?;
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(what.to_string()));
    }
    Ok(inv)
}

/// `ln |det m|` and the sign of the determinant, from an LU factorization.
pub fn log_abs_det(m: DMatrix<f64>) -> (f64, f64) {
    let lu = m.lu();
    let u = lu.u();
    let mut log = 0.0;
    let mut sign = 1.0;
    for i in 0..u.nrows() {
        let d = u[(i, i)];
        log += d.abs().ln();
        if d < 0.0 {
            sign = -sign;
        }
    }
    // Row swaps flip the sign; the permutation's parity is encoded in its determinant.
    let p_sign: f64 = lu.p().determinant();
    (log, sign * p_sign)
}

pub fn identity(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n)
}

pub fn ones(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0)
}
