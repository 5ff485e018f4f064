//! Config building blocks shared by several commands.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use spegarch::mc::lattice_weights;
use spegarch::networks::{
    correlation_distance, euclidean_distance, knn_weights, piccolo_distance, standardized_grid, grid_contiguity, Contiguity,
    DistanceMatrix,
};
use spegarch::{InitialConditions, Panel, WeightMatrix};

use crate::config::require_file;
use crate::error::{CliError, CliResult};

/// A weight matrix given as a CSV file or as a lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSource {
    File(PathBuf),
    Grid {
        rows: usize,
        cols: usize,
        contiguity: Contiguity,
        #[serde(default = "yes")]
        standardize: bool,
    },
}

fn yes() -> bool {
    true
}

impl WeightSource {
    pub fn load(&self) -> CliResult<WeightMatrix> {
        match self {
            WeightSource::File(p) => {
                require_file(p, "weight matrix")?;
                Ok(WeightMatrix::from_csv_path(p)?)
            }
            WeightSource::Grid { rows, cols, contiguity, standardize } => Ok(if *standardize {
                standardized_grid(*rows, *cols, *contiguity)?
            } else {
                grid_contiguity(*rows, *cols, *contiguity)?
            }),
        }
    }

    pub fn file(&self) -> Option<&Path> {
        match self {
            WeightSource::File(p) => Some(p),
            WeightSource::Grid { .. } => None,
        }
    }
}

/// `grid = [rows, cols]` is shorthand for row-standardized Queen `W1` and Rook `W2`;
/// otherwise `w1` is required and `w2` defaults to `w1`.
pub fn weight_pair(
    grid: Option<[usize; 2]>,
    w1: Option<&WeightSource>,
    w2: Option<&WeightSource>,
) -> CliResult<(WeightMatrix, WeightMatrix)> {
    match (grid, w1) {
        (Some(_), Some(_)) => Err(CliError::validation("give either grid or w1/w2, not both")),
        (Some([r, c]), None) => Ok(lattice_weights(r, c)?),
        (None, Some(w1)) => {
            let a = w1.load()?;
            let b = match w2 {
                Some(w2) => w2.load()?,
                None => a.clone(),
            };
            Ok((a, b))
        }
        (None, None) => Err(CliError::validation("no weights: set grid or w1 (and optionally w2)")),
    }
}

/// Pre-sample values: one constant for every node, or explicit vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitSpec {
    Constant(f64),
    Vectors { y0: Vec<f64>, eps0: Vec<f64> },
}

impl InitSpec {
    pub fn build(spec: Option<&InitSpec>, n: usize) -> CliResult<InitialConditions> {
        match spec {
            None => Ok(InitialConditions::default_for(n)),
            Some(InitSpec::Constant(v)) => Ok(InitialConditions::new(DVector::from_element(n, *v), DVector::from_element(n, *v))?),
            Some(InitSpec::Vectors { y0, eps0 }) => {
                if y0.len() != n {
                    return Err(CliError::validation(format!("init has {} nodes, data has {n}", y0.len())));
                }
                Ok(InitialConditions::new(DVector::from_column_slice(y0), DVector::from_column_slice(eps0))?)
            }
        }
    }

    pub fn from_conditions(c: &InitialConditions) -> Self {
        InitSpec::Vectors { y0: c.y0.iter().copied().collect(), eps0: c.eps0.iter().copied().collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    Euclidean,
    Correlation,
    Piccolo,
}

fn default_ar_order() -> usize {
    1
}

/// How to build one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkDef {
    Grid {
        rows: usize,
        cols: usize,
        contiguity: Contiguity,
        #[serde(default = "yes")]
        standardize: bool,
    },
    Knn {
        distance: Distance,
        k: usize,
        #[serde(default = "default_ar_order")]
        ar_order: usize,
    },
    File {
        path: PathBuf,
    },
}

impl NetworkDef {
    pub fn needs_returns(&self) -> bool {
        matches!(self, NetworkDef::Knn { .. })
    }

    /// Builds the weights (and the distance matrix for k-NN networks).
    pub fn build(&self, returns: Option<&Panel>) -> CliResult<(WeightMatrix, Option<DistanceMatrix>)> {
        match self {
            NetworkDef::Grid { rows, cols, contiguity, standardize } => Ok((
                WeightSource::Grid { rows: *rows, cols: *cols, contiguity: *contiguity, standardize: *standardize }.load()?,
                None,
            )),
            NetworkDef::File { path } => Ok((WeightSource::File(path.clone()).load()?, None)),
            NetworkDef::Knn { distance, k, ar_order } => {
                let y = returns.ok_or_else(|| CliError::validation("a k-NN network needs a returns panel"))?;
                let d = match distance {
                    Distance::Euclidean => euclidean_distance(y)?,
                    Distance::Correlation => correlation_distance(y)?,
                    Distance::Piccolo => piccolo_distance(y, *ar_order)?,
                };
                Ok((knn_weights(&d, *k)?, Some(d)))
            }
        }
    }
}
