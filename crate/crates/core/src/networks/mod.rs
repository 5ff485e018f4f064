//! Spatial / network weight matrices.
//!
//! Lattice contiguity for simulation designs, and k-nearest-neighbour weights
//! built from data-driven distances (Euclidean, correlation, Piccolo) for
//! financial networks.

mod distance;

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use distance::{correlation_distance, euclidean_distance, piccolo_distance, DistanceMatrix};

const ROW_SUM_TOL: f64 = 1e-12;

/// Dense `n x n` weight matrix with zero diagonal and nonnegative entries.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    entries: DMatrix<f64>,
    row_standardized: bool,
}

impl WeightMatrix {
    /// Validates diagonal, sign and (when flagged) row sums.
    pub fn new(entries: DMatrix<f64>, row_standardized: bool) -> Result<Self> {
        let n = entries.nrows();
        if n == 0 || entries.ncols() != n {
            return Err(Error::Dimension(format!(
                "weight matrix must be square and non-empty, got {}x{}",
                n,
                entries.ncols()
            )));
        }
        for i in 0..n {
            if entries[(i, i)] != 0.0 {
                return Err(Error::Invalid(format!("diagonal entry ({}, {}) is nonzero", i + 1, i + 1)));
            }
        }
        if let Some(pos) = entries.iter().position(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::Invalid(format!(
                "entry ({}, {}) is negative or non-finite",
                pos % n + 1,
                pos / n + 1
            )));
        }
        if row_standardized {
            for (i, row) in entries.row_iter().enumerate() {
                let s = row.sum();
                if s != 0.0 && (s - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::Invalid(format!("row {} sums to {s}, expected 1", i + 1)));
                }
            }
        }
        Ok(WeightMatrix { entries, row_standardized })
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn is_row_standardized(&self) -> bool {
        self.row_standardized
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// Maximum absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        self.entries.row_iter().map(|r| r.sum()).fold(0.0, f64::max)
    }

    /// Number of nonzero entries in row `i`.
    pub fn degree(&self, i: usize) -> usize {
        self.entries.row(i).iter().filter(|&&w| w != 0.0).count()
    }

    /// Applies the same node permutation to rows and columns: node `perm[k]` becomes node `k`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n();
        let entries = DMatrix::from_fn(n, n, |i, j| self.entries[(perm[i], perm[j])]);
        WeightMatrix { entries, row_standardized: self.row_standardized }
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let n = rdr.headers()?.len();
        let mut data = Vec::with_capacity(n * n);
        let mut rows = 0;
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != n {
                return Err(Error::Invalid(format!("weight row {} has {} fields, expected {n}", rows + 1, rec.len())));
            }
            for f in rec.iter() {
                data.push(f.parse::<f64>().map_err(|_| Error::Invalid(format!("`{f}` is not a number")))?);
            }
            rows += 1;
        }
        if rows != n {
            return Err(Error::Dimension(format!("weight CSV has {rows} rows but {n} columns")));
        }
        let entries = DMatrix::from_row_slice(n, n, &data);
        let standardized = entries.row_iter().all(|r| {
            let s = r.sum();
            s == 0.0 || (s - 1.0).abs() <= ROW_SUM_TOL
        });
        WeightMatrix::new(entries, standardized)
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

    /// Sparse export: header `i,j,w`, one line per nonzero entry, 1-based node indices.
    pub fn write_edge_list<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["i", "j", "w"])?;
        for i in 0..self.n() {
            for j in 0..self.n() {
                let w = self.entries[(i, j)];
                if w != 0.0 {
                    wtr.write_record([(i + 1).to_string(), (j + 1).to_string(), format!("{w}")])?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn to_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Contiguity {
    /// Edge-sharing neighbours.
    Rook,
    /// Edge- or corner-sharing neighbours.
    Queen,
}

/// Binary adjacency on a `rows x cols` lattice; node `(r, c)` has index `r * cols + c`.
pub fn grid_contiguity(rows: usize, cols: usize, kind: Contiguity) -> Result<WeightMatrix> {
    if rows * cols < 2 {
        return Err(Error::Invalid(format!("degenerate {rows}x{cols} lattice")));
    }
    let n = rows * cols;
    let mut w = DMatrix::zeros(n, n);
    for r in 0..rows as isize {
        for c in 0..cols as isize {
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    if kind == Contiguity::Rook && dr != 0 && dc != 0 {
                        continue;
                    }
                    let (rr, cc) = (r + dr, c + dc);
                    if rr < 0 || cc < 0 || rr >= rows as isize || cc >= cols as isize {
                        continue;
                    }
                    let i = (r * cols as isize + c) as usize;
                    let j = (rr * cols as isize + cc) as usize;
                    w[(i, j)] = 1.0;
                }
            }
        }
    }
    WeightMatrix::new(w, false)
}

/// Scales every nonzero row to sum to one; all-zero rows stay zero.
pub fn row_standardize(w: &WeightMatrix) -> WeightMatrix {
    let mut e = w.entries.clone();
    for mut row in e.row_iter_mut() {
        let s = row.sum();
        if s > 0.0 {
            row /= s;
        }
    }
    WeightMatrix { entries: e, row_standardized: true }
}

/// Row-standardized contiguity weights for a lattice, as used in the simulation designs.
pub fn standardized_grid(rows: usize, cols: usize, kind: Contiguity) -> Result<WeightMatrix> {
    grid_contiguity(rows, cols, kind).map(|w| row_standardize(&w))
}

/// k-nearest-neighbour weights: row `i` puts `1/k` on each of node `i`'s own
/// `k` nearest neighbours, so every row sums to one. Ties at equal distance go
/// to the lower node index.
pub fn knn_weights(d: &DistanceMatrix, k: usize) -> Result<WeightMatrix> {
    let n = d.n();
    if k == 0 || k >= n {
        return Err(Error::Invalid(format!("k = {k} must lie in 1..={}", n.saturating_sub(1))));
    }
    let mut w = DMatrix::zeros(n, n);
    let weight = 1.0 / k as f64;
    for i in 0..n {
        let mut cand: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        cand.sort_by(|&a, &b| d.get(i, a).total_cmp(&d.get(i, b)).then(a.cmp(&b)));
        for &j in cand.iter().take(k) {
            w[(i, j)] = weight;
        }
    }
    WeightMatrix::new(w, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rook_2x2_has_two_neighbours() {
        let w = grid_contiguity(2, 2, Contiguity::Rook).unwrap();
        assert!((0..4).all(|i| w.degree(i) == 2));
    }

    #[test]
    fn queen_2x2_has_three_neighbours() {
        let w = grid_contiguity(2, 2, Contiguity::Queen).unwrap();
        assert!((0..4).all(|i| w.degree(i) == 3));
    }

    #[test]
    fn queen_3x3_centre_has_eight() {
        let w = grid_contiguity(3, 3, Contiguity::Queen).unwrap();
        assert_eq!(w.degree(4), 8);
        assert_eq!(w.degree(0), 3);
    }

    #[test]
    fn degenerate_lattice_rejected() {
        assert!(grid_contiguity(1, 1, Contiguity::Rook).is_err());
    }

    #[test]
    fn rook_edges_subset_of_queen() {
        for (r, c) in [(2, 3), (4, 4), (5, 2)] {
            let rook = grid_contiguity(r, c, Contiguity::Rook).unwrap();
            let queen = grid_contiguity(r, c, Contiguity::Queen).unwrap();
            for (a, b) in rook.entries().iter().zip(queen.entries().iter()) {
                assert!(*a == 0.0 || *b != 0.0);
            }
        }
    }

    #[test]
    fn standardized_rook_2x2_is_one_half() {
        let w = row_standardize(&grid_contiguity(2, 2, Contiguity::Rook).unwrap());
        assert!(w.is_row_standardized());
        assert!(w.entries().iter().all(|&v| v == 0.0 || v == 0.5));
    }

    #[test]
    fn standardize_is_idempotent() {
        let w = standardized_grid(3, 4, Contiguity::Queen).unwrap();
        assert_eq!(row_standardize(&w), w);
    }

    #[test]
    fn zero_row_stays_zero() {
        let mut e = DMatrix::zeros(3, 3);
        e[(0, 1)] = 2.0;
        e[(1, 0)] = 1.0;
        e[(1, 2)] = 3.0;
        let w = row_standardize(&WeightMatrix::new(e, false).unwrap());
        assert_eq!(w.entries().row(2).sum(), 0.0);
        assert_eq!(w.get(0, 1), 1.0);
        assert_eq!(w.get(1, 2), 0.75);
    }

    #[test]
    fn diagonal_and_negative_entries_rejected() {
        let mut e = DMatrix::zeros(2, 2);
        e[(0, 0)] = 1.0;
        assert!(WeightMatrix::new(e, false).is_err());
        let mut e = DMatrix::zeros(2, 2);
        e[(0, 1)] = -1.0;
        assert!(WeightMatrix::new(e, false).is_err());
    }

    fn points_1d(x: &[f64]) -> DistanceMatrix {
        let n = x.len();
        DistanceMatrix::new(DMatrix::from_fn(n, n, |i, j| (x[i] - x[j]).abs())).unwrap()
    }

    #[test]
    fn knn_collinear_points() {
        // Points at 0, 1, 3: both end points have the middle point as nearest neighbour.
        let w = knn_weights(&points_1d(&[0.0, 1.0, 3.0]), 1).unwrap();
        assert_eq!(w.get(0, 1), 1.0);
        assert_eq!(w.get(2, 1), 1.0);
        assert_eq!(w.get(1, 0), 1.0);
        assert_eq!(w.entries().sum(), 3.0);
    }

    #[test]
    fn knn_all_neighbours() {
        let w = knn_weights(&points_1d(&[0.0, 2.0, 5.0, 9.0, 14.0]), 4).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(w.get(i, j), if i == j { 0.0 } else { 0.25 });
            }
        }
    }

    #[test]
    fn knn_ties_go_to_lowest_index() {
        let w = knn_weights(&points_1d(&[0.0; 5]), 2).unwrap();
        assert_eq!(w.get(0, 1), 0.5);
        assert_eq!(w.get(0, 2), 0.5);
        assert_eq!(w.get(3, 0), 0.5);
        assert_eq!(w.get(3, 1), 0.5);
        assert_eq!(w.get(3, 4), 0.0);
    }

    #[test]
    fn knn_k_out_of_range() {
        let d = points_1d(&[0.0, 1.0, 2.0]);
        assert!(knn_weights(&d, 0).is_err());
        assert!(knn_weights(&d, 3).is_err());
    }

    #[test]
    fn knn_rows_sum_to_one() {
        let d = points_1d(&[0.3, 1.1, 2.7, 2.8, 5.0, 7.5]);
        let w = knn_weights(&d, 3).unwrap();
        for r in w.entries().row_iter() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
        assert_eq!(row_standardize(&w), w);
    }

    #[test]
    fn csv_and_edge_list() {
        let w = standardized_grid(2, 2, Contiguity::Rook).unwrap();
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        let back = WeightMatrix::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, w);
        let mut edges = Vec::new();
        w.write_edge_list(&mut edges).unwrap();
        let text = String::from_utf8(edges).unwrap();
        assert_eq!(text.lines().count(), 1 + 8);
        assert!(text.starts_with("i,j,w\n1,2,0.5\n"));
    }
}
