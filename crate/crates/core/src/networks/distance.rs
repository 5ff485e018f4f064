use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::panel::Panel;

const SYMMETRY_TOL: f64 = 1e-12;

/// Symmetric, nonnegative, zero-diagonal distances between nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    entries: DMatrix<f64>,
}

impl DistanceMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let n = entries.nrows();
        if n == 0 || entries.ncols() != n {
            return Err(Error::Dimension("distance matrix must be square and non-empty".into()));
        }
        for i in 0..n {
            if entries[(i, i)] != 0.0 {
                return Err(Error::Invalid(format!("d({0},{0}) must be zero", i + 1)));
            }
            for j in 0..i {
                let (a, b) = (entries[(i, j)], entries[(j, i)]);
                if !(a >= 0.0 && b >= 0.0) || (a - b).abs() > SYMMETRY_TOL {
                    return Err(Error::Invalid(format!("d({},{}) is negative or asymmetric", i + 1, j + 1)));
                }
            }
        }
        Ok(DistanceMatrix { entries })
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record((1..=self.n()).map(|i| format!("node_{i}")))?;
        for row in self.entries.row_iter() {
            wtr.write_record(row.iter().map(|v| format!("{v}")))?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Builds the matrix from a pairwise function evaluated on the upper triangle.
    fn from_pairs(n: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let d = f(i, j);
                m[(i, j)] = d;
                m[(j, i)] = d;
            }
        }
        DistanceMatrix::new(m)
    }
}

/// Euclidean distance between the nodes' time series.
pub fn euclidean_distance(p: &Panel) -> Result<DistanceMatrix> {
    if p.t_len() < 2 {
        return Err(Error::Invalid("euclidean distance needs at least 2 time points".into()));
    }
    let v = p.values();
    DistanceMatrix::from_pairs(p.n(), |i, j| (v.row(i) - v.row(j)).norm())
}

/// Correlation distance `sqrt(2 (1 - r_ij))`.
pub fn correlation_distance(p: &Panel) -> Result<DistanceMatrix> {
    if p.t_len() < 3 {
        return Err(Error::Invalid("correlation distance needs at least 3 time points".into()));
    }
    let n = p.n();
    let mut centered: Vec<DVector<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let row = p.values().row(i).transpose();
        let c = row.add_scalar(-row.mean());
        let norm = c.norm();
        if norm == 0.0 {
            return Err(Error::Invalid(format!("node {} has zero variance", i + 1)));
        }
        centered.push(c / norm);
    }
    DistanceMatrix::from_pairs(n, |i, j| {
        let r = centered[i].dot(&centered[j]).clamp(-1.0, 1.0);
        (2.0 * (1.0 - r)).max(0.0).sqrt()
    })
}

/// Least-squares log-ARCH(`ar_order`) slope coefficients of one series:
/// regress `ln y_t^2` on `(1, ln y_{t-1}^2, ..., ln y_{t-p}^2)`.
pub(crate) fn log_arch_slopes(series: &[f64], ar_order: usize) -> Result<DVector<f64>> {
    if series.contains(&0.0) {
        return Err(Error::Invalid("log-ARCH fit requires nonzero observations".into()));
    }
    let z: Vec<f64> = series.iter().map(|v| (v * v).ln()).collect();
    let rows = z.len() - ar_order;
    let x = DMatrix::from_fn(rows, ar_order + 1, |r, c| if c == 0 { 1.0 } else { z[ar_order + r - c] });
    let yv = DVector::from_iterator(rows, z[ar_order..].iter().copied());
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * yv;
    let chol = xtx.cholesky().ok_or_else(|| Error::Singular("log-ARCH regression design".into()))?;
    let beta = chol.solve(&xty);
    Ok(beta.rows(1, ar_order).into_owned())
}

/// Piccolo distance: Euclidean distance between fitted log-ARCH slope vectors.
pub fn piccolo_distance(p: &Panel, ar_order: usize) -> Result<DistanceMatrix> {
    if ar_order == 0 {
        return Err(Error::Invalid("ar_order must be at least 1".into()));
    }
    if p.t_len() < 10 * ar_order {
        return Err(Error::Invalid(format!(
            "Piccolo distance with order {ar_order} needs at least {} time points",
            10 * ar_order
        )));
    }
    let coefs = (0..p.n()).map(|i| log_arch_slopes(&p.series(i), ar_order)).collect::<Result<Vec<_>>>()?;
    DistanceMatrix::from_pairs(p.n(), |i, j| (&coefs[i] - &coefs[j]).norm())
}
