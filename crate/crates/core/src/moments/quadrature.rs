//! Gauss–Hermite rules on the half line, for Gaussian expectations of
//! functions with a kink at zero.
//!
//! The rule for weight `exp(-u^2)` on `[0, inf)` has no closed-form
//! recurrence, so its recurrence coefficients are obtained by the discretized
//! Stieltjes procedure on a fine composite Gauss–Legendre grid and the nodes
//! by Golub–Welsch.

use nalgebra::{DMatrix, SymmetricEigen};

const LEGENDRE_ORDER: usize = 40;
const PANELS: usize = 80;
const UPPER: f64 = 14.0;

/// Nodes and weights `(u_k, w_k)` with `sum_k w_k f(u_k) ~ int_0^inf f(u) exp(-u^2) du`.
#[derive(Debug, Clone)]
pub struct HalfRangeHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

fn golub_welsch(alpha: &[f64], beta: &[f64], mu0: f64) -> (Vec<f64>, Vec<f64>) {
    let n = alpha.len();
    let mut j = DMatrix::zeros(n, n);
    for k in 0..n {
        j[(k, k)] = alpha[k];
        if k + 1 < n {
            let off = beta[k + 1].sqrt();
            j[(k, k + 1)] = off;
            j[(k + 1, k)] = off;
        }
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], mu0 * eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Gauss–Legendre rule on `[-1, 1]`.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let alpha = vec![0.0; n];
    let beta: Vec<f64> = (0..n)
        .map(|k| if k == 0 { 2.0 } else { let k = k as f64; k * k / (4.0 * k * k - 1.0) })
        .collect();
    golub_welsch(&alpha, &beta, 2.0)
}

impl HalfRangeHermite {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "rule needs at least one node");
        let (gx, gw) = gauss_legendre(LEGENDRE_ORDER);
        let h = UPPER / PANELS as f64;
        let mut xs = Vec::with_capacity(PANELS * LEGENDRE_ORDER);
        let mut ws = Vec::with_capacity(PANELS * LEGENDRE_ORDER);
        for p in 0..PANELS {
            let lo = p as f64 * h;
            for (x, w) in gx.iter().zip(&gw) {
                let u = lo + 0.5 * h * (x + 1.0);
                xs.push(u);
                ws.push(0.5 * h * w * (-u * u).exp());
            }
        }
        // Stieltjes: orthonormal-free three-term recurrence on the discrete measure.
        let m = xs.len();
        let mut alpha = vec![0.0; n];
        let mut beta = vec![0.0; n];
        let mut p_prev = vec![0.0; m];
        let mut p_cur = vec![1.0; m];
        let mut norm_prev = 1.0;
        for k in 0..n {
            let norm: f64 = (0..m).map(|i| ws[i] * p_cur[i] * p_cur[i]).sum();
            let xnorm: f64 = (0..m).map(|i| ws[i] * xs[i] * p_cur[i] * p_cur[i]).sum();
            alpha[k] = xnorm / norm;
            beta[k] = if k == 0 { norm } else { norm / norm_prev };
            let next: Vec<f64> = (0..m)
                .map(|i| (xs[i] - alpha[k]) * p_cur[i] - if k == 0 { 0.0 } else { beta[k] * p_prev[i] })
                .collect();
            p_prev = std::mem::replace(&mut p_cur, next);
            norm_prev = norm;
        }
        let mu0 = beta[0];
        let (nodes, weights) = golub_welsch(&alpha, &beta, mu0);
        HalfRangeHermite { nodes, weights }
    }

    /// `E f(X)` for `X ~ N(0, 1)`, with `f` smooth on each half line.
    pub fn normal_expectation(&self, f: impl Fn(f64) -> f64) -> f64 {
        let scale = std::f64::consts::SQRT_2;
        let sum: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&u, &w)| w * (f(scale * u) + f(-scale * u)))
            .sum();
        sum / std::f64::consts::PI.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(10);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((s - 2.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn half_range_moments() {
        let q = HalfRangeHermite::new(64);
        // int_0^inf exp(-u^2) = sqrt(pi)/2, int_0^inf u exp(-u^2) = 1/2
        let m0: f64 = q.weights.iter().sum();
        let m1: f64 = q.nodes.iter().zip(&q.weights).map(|(u, w)| u * w).sum();
        assert!((m0 - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-13);
        assert!((m1 - 0.5).abs() < 1e-13);
        assert!(q.nodes.iter().all(|&u| u > 0.0));
    }

    #[test]
    fn kinked_normal_expectations() {
        let q = HalfRangeHermite::new(64);
        let abs = q.normal_expectation(f64::abs);
        assert!((abs - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-13);
        assert!((q.normal_expectation(|x| x * x) - 1.0).abs() < 1e-13);
        // E exp(a|X|) = 2 exp(a^2/2) Phi(a), evaluated in 30-digit arithmetic
        for (a, exact) in [(-1.3, 0.450_698_761_109_897_7), (0.4, 1.420_019_793_118_925), (1.7, 8.105_624_078_244_648)] {
            let got = q.normal_expectation(|x| (a * x.abs()).exp());
            assert!((got - exact).abs() < 1e-11 * exact, "a={a}: {got} vs {exact}");
        }
    }
}
