//! Spatial log-GARCH volatility with contemporaneous and temporal spatial
//! spillovers: simulation, inversion, estimation, moments and diagnostics.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod inversion;
pub mod linalg;
pub mod likelihood;
pub mod mc;
pub mod meanmodel;
pub mod moments;
pub mod networks;
pub mod optim;
pub mod panel;
pub mod params;
pub mod process;
pub mod rng;

pub use error::{Error, Result};
pub use exec::Execution;
pub use networks::WeightMatrix;
pub use panel::{Panel, PanelKind};
pub use params::{InitialConditions, ModelParams};
