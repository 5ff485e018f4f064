//! Node-by-time panels and their CSV representation.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a panel holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PanelKind {
    Returns,
    Innovations,
    Volatility,
    LogVolatility,
    Residuals,
}

/// `n` nodes observed over `t_len` time points, stored node-major (`values[(i, t)]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    values: DMatrix<f64>,
    kind: PanelKind,
}

impl Panel {
    pub fn new(values: DMatrix<f64>, kind: PanelKind) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Invalid("panel must have at least one node and one time point".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (i, t) = (pos % values.nrows(), pos / values.nrows());
            return Err(Error::Invalid(format!("non-finite value at node {}, time {}", i + 1, t + 1)));
        }
        if kind == PanelKind::Volatility && values.iter().any(|&v| v <= 0.0) {
            return Err(Error::Invalid("volatility panel must be strictly positive".into()));
        }
        Ok(Panel { values, kind })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn t_len(&self) -> usize {
        self.values.ncols()
    }

    pub fn kind(&self) -> PanelKind {
        self.kind
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    /// Cross-section at time index `t` (0-based).
    pub fn at(&self, t: usize) -> DVector<f64> {
        self.values.column(t).into_owned()
    }

    /// Time series of node `i` (0-based).
    pub fn series(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    pub fn with_kind(mut self, kind: PanelKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn read_csv<R: Read>(reader: R, kind: PanelKind) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let n = rdr.headers()?.len();
        if n == 0 {
            return Err(Error::Invalid("CSV header has no columns".into()));
        }
        let mut data: Vec<f64> = Vec::new();
        let mut t_len = 0usize;
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Invalid(format!("row {}: {e}", row + 1)))?;
            if rec.len() != n {
                return Err(Error::Invalid(format!(
                    "row {} has {} fields, expected {n}",
                    row + 1,
                    rec.len()
                )));
            }
            for (col, field) in rec.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    Error::Invalid(format!("row {}, column {}: `{field}` is not a number", row + 1, col + 1))
                })?;
                data.push(v);
            }
            t_len += 1;
        }
        if t_len == 0 {
            return Err(Error::Invalid("CSV has no data rows".into()));
        }
        // data is time-major; the panel is node-major.
        let values = DMatrix::from_row_slice(t_len, n, &data).transpose();
        Panel::new(values, kind)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record((1..=self.n()).map(|i| format!("node_{i}")))?;
        for t in 0..self.t_len() {
            wtr.write_record(self.values.column(t).iter().map(|v| format!("{v}")))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn from_csv_path(path: impl AsRef<Path>, kind: PanelKind) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, kind)
    }

    pub fn to_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_ragged_rows() {
        let csv = "node_1,node_2\n1,2\n3\n";
        assert!(matches!(Panel::read_csv(csv.as_bytes(), PanelKind::Returns), Err(Error::Invalid(_))));
    }

    #[test]
    fn rejects_non_numeric() {
        let csv = "node_1,node_2\n1,abc\n";
        let err = Panel::read_csv(csv.as_bytes(), PanelKind::Returns).unwrap_err();
        assert!(err.to_string().contains("column 2"));
    }

    #[test]
    fn rejects_nan() {
        let csv = "node_1\nNaN\n";
        assert!(Panel::read_csv(csv.as_bytes(), PanelKind::Returns).is_err());
    }

    #[test]
    fn layout_is_time_by_row() {
        let csv = "node_1,node_2\n1,2\n3,4\n5,6\n";
        let p = Panel::read_csv(csv.as_bytes(), PanelKind::Returns).unwrap();
        assert_eq!((p.n(), p.t_len()), (2, 3));
        assert_eq!(p.series(1), vec![2.0, 4.0, 6.0]);
        assert_eq!(p.at(2).as_slice(), &[5.0, 6.0]);
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(vals in proptest::collection::vec(-1e6f64..1e6, 12)) {
            let p = Panel::new(DMatrix::from_vec(3, 4, vals), PanelKind::Returns).unwrap();
            let mut buf = Vec::new();
            p.write_csv(&mut buf).unwrap();
            let q = Panel::read_csv(buf.as_slice(), PanelKind::Returns).unwrap();
            prop_assert_eq!(p, q);
        }
    }
}
