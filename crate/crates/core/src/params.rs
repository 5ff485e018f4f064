//! Model parameters and pre-sample conditions.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the spatiotemporal E-GARCH log-volatility equation
///
/// `ln h_t = alpha*1 + rho0*W1*g(eps_t) + rho1*g(eps_{t-1}) + lambda0*W2*ln h_t + lambda1*ln h_{t-1}`
///
/// with news-impact function `g(e) = theta*e + xi*(|e| - E|e|)`.
///
/// `theta_lag` switches on the two-leverage variant: when present, `theta` is
/// used for the contemporaneous (W1) term and `theta_lag` for the lagged term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha: f64,
    pub rho0: f64,
    pub rho1: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    pub theta: f64,
    #[serde(default = "default_xi")]
    pub xi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_lag: Option<f64>,
}

fn default_xi() -> f64 {
    1.0
}

impl ModelParams {
    pub const fn new(alpha: f64, rho0: f64, rho1: f64, lambda0: f64, lambda1: f64, theta: f64) -> Self {
        ModelParams { alpha, rho0, rho1, lambda0, lambda1, theta, xi: 1.0, theta_lag: None }
    }

    /// Model A of the Monte Carlo design (strong contemporaneous spatial dependence).
    pub const fn model_a() -> Self {
        ModelParams::new(0.5, 0.5, 0.35, 0.2, 0.3, 0.4)
    }

    /// Model B of the Monte Carlo design (temporal effects dominate).
    pub const fn model_b() -> Self {
        ModelParams::new(0.5, 0.2, 0.35, 0.25, 0.3, 0.4)
    }

    /// Parameter set used for the numerical invertibility experiments.
    pub const fn invertibility_reference() -> Self {
        ModelParams::new(0.5, 0.25, 0.3, 0.35, 0.4, 0.4)
    }

    /// All dynamics switched off: `h_t = exp(alpha)`.
    pub const fn static_volatility(alpha: f64) -> Self {
        ModelParams::new(alpha, 0.0, 0.0, 0.0, 0.0, 0.0)
    }

    pub fn with_xi(mut self, xi: f64) -> Self {
        self.xi = xi;
        self
    }

    pub fn with_theta_lag(mut self, theta_lag: f64) -> Self {
        self.theta_lag = Some(theta_lag);
        self
    }

    /// Leverage parameter of the contemporaneous spatial term.
    #[inline]
    pub fn theta_spatial(&self) -> f64 {
        self.theta
    }

    /// Leverage parameter of the lagged temporal term.
    #[inline]
    pub fn theta_temporal(&self) -> f64 {
        self.theta_lag.unwrap_or(self.theta)
    }

    pub fn is_two_theta(&self) -> bool {
        self.theta_lag.is_some()
    }

    /// Free parameters in estimation order `(alpha, rho0, rho1, lambda0, lambda1, theta[, theta_lag])`.
    pub fn free_vector(&self) -> Vec<f64> {
        let mut v = vec![self.alpha, self.rho0, self.rho1, self.lambda0, self.lambda1, self.theta];
        if let Some(t) = self.theta_lag {
            v.push(t);
        }
        v
    }

    /// Inverse of [`ModelParams::free_vector`]; `xi` is fixed at 1.
    pub fn from_free_vector(v: &[f64]) -> Self {
        let mut p = ModelParams::new(v[0], v[1], v[2], v[3], v[4], v[5]);
        if v.len() > 6 {
            p.theta_lag = Some(v[6]);
        }
        p
    }

    pub fn free_names(two_theta: bool) -> Vec<&'static str> {
        let mut v = vec!["alpha", "rho0", "rho1", "lambda0", "lambda1", "theta"];
        if two_theta {
            v.push("theta_lag");
        }
        v
    }
}

/// A single violated constraint found by [`validate_params`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Violation {
    NonFinite(&'static str),
    XiNotPositive,
    ThetaNotBelowXi,
    ThetaLagNotBelowXi,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::NonFinite(name) => write!(f, "non-finite field `{name}`"),
            Violation::XiNotPositive => f.write_str("xi <= 0"),
            Violation::ThetaNotBelowXi => f.write_str("|theta| >= xi"),
            Violation::ThetaLagNotBelowXi => f.write_str("|theta_lag| >= xi"),
        }
    }
}

/// Returns every violated constraint; an empty list means the parameters are admissible.
pub fn validate_params(p: &ModelParams) -> Vec<Violation> {
    let mut out = Vec::new();
    let fields = [
        ("alpha", p.alpha),
        ("rho0", p.rho0),
        ("rho1", p.rho1),
        ("lambda0", p.lambda0),
        ("lambda1", p.lambda1),
        ("theta", p.theta),
        ("xi", p.xi),
    ];
    for (name, v) in fields {
        if !v.is_finite() {
            out.push(Violation::NonFinite(name));
        }
    }
    if let Some(t) = p.theta_lag {
        if !t.is_finite() {
            out.push(Violation::NonFinite("theta_lag"));
        }
    }
    if p.xi.is_finite() && p.xi <= 0.0 {
        out.push(Violation::XiNotPositive);
    }
    // NaN comparisons are false, so non-finite values are only reported once above.
    if p.theta.abs() >= p.xi {
        out.push(Violation::ThetaNotBelowXi);
    }
    if let Some(t) = p.theta_lag {
        if t.abs() >= p.xi {
            out.push(Violation::ThetaLagNotBelowXi);
        }
    }
    out
}

/// Known pre-sample values `Y_0` and `eps_0` that start the recursions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialConditions {
    pub y0: DVector<f64>,
    pub eps0: DVector<f64>,
}

impl InitialConditions {
    pub fn new(y0: DVector<f64>, eps0: DVector<f64>) -> Result<Self> {
        if y0.len() != eps0.len() {
            return Err(Error::Dimension(format!(
                "y0 has {} entries but eps0 has {}",
                y0.len(),
                eps0.len()
            )));
        }
        if let Some(i) = eps0.iter().position(|&e| e == 0.0 || !e.is_finite()) {
            return Err(Error::Invalid(format!("eps0[{i}] must be finite and nonzero")));
        }
        if let Some(i) = y0.iter().position(|&e| e == 0.0 || !e.is_finite()) {
            return Err(Error::Invalid(format!("y0[{i}] must be finite and nonzero")));
        }
        Ok(InitialConditions { y0, eps0 })
    }

    /// Both pre-sample vectors filled with `value`.
    pub fn constant(n: usize, value: f64) -> Self {
        InitialConditions { y0: DVector::from_element(n, value), eps0: DVector::from_element(n, value) }
    }

    /// `Y_0 = eps_0 = 1e-4` at every node.
    pub fn default_for(n: usize) -> Self {
        Self::constant(n, 1e-4)
    }

    pub fn n(&self) -> usize {
        self.y0.len()
    }

    /// `ln h_0 = ln(y0^2 / eps0^2)`.
    pub fn log_h0(&self) -> DVector<f64> {
        self.y0.zip_map(&self.eps0, |y, e| (y * y).ln() - (e * e).ln())
    }
}
