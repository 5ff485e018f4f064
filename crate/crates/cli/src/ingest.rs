//! Return-panel ingestion with zero handling.

use std::path::Path;

use serde::{Deserialize, Serialize};
use spegarch::rng::{standard_normal, stream, stream_rng};
use spegarch::{Panel, PanelKind};

use crate::error::{CliError, CliResult};

/// Default replacement scale: variance 1e-4.
pub const ZERO_REPLACEMENT_SD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroPolicy {
    /// Replace each exact zero by an independent `N(0, sd^2)` draw.
    ReplaceNormal { sd: f64 },
    Reject,
}

impl Default for ZeroPolicy {
    fn default() -> Self {
        ZeroPolicy::ReplaceNormal { sd: ZERO_REPLACEMENT_SD }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Replacement {
    /// 1-based data row (time), header excluded.
    pub row: usize,
    /// 1-based column (node).
    pub column: usize,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub panel: Panel,
    pub replacements: Vec<Replacement>,
}

/// Reads a time-by-node CSV of log returns (header row of node names).
/// Zeros are replaced in row-major file order from the seed's replacement stream.
pub fn ingest_returns(path: &Path, policy: ZeroPolicy, seed: u64) -> CliResult<Ingested> {
    if let ZeroPolicy::ReplaceNormal { sd } = policy {
        if !(sd > 0.0 && sd.is_finite()) {
            return Err(CliError::validation(format!("replacement sd must be positive, got {sd}")));
        }
    }
    let file = std::fs::File::open(path).map_err(|e| CliError::io(format!("cannot open {}: {e}", path.display())))?;
    let panel = Panel::read_csv(std::io::BufReader::new(file), PanelKind::Returns)
        .map_err(|e| CliError::from(e).at_stage("ingest"))?;
    let mut values = panel.into_values();
    let (n, t_len) = values.shape();
    let mut rng = stream_rng(seed, stream::ZERO_REPLACEMENT);
    let mut replacements = Vec::new();
    for t in 0..t_len {
        for i in 0..n {
            if values[(i, t)] != 0.0 {
                continue;
            }
            match policy {
                ZeroPolicy::Reject => {
                    return Err(CliError::validation(format!("zero return at row {}, column {}", t + 1, i + 1)).at_stage("ingest"))
                }
                ZeroPolicy::ReplaceNormal { sd } => {
                    let mut v = 0.0;
                    while v == 0.0 {
                        v = sd * standard_normal(&mut rng);
                    }
                    values[(i, t)] = v;
                    replacements.push(Replacement { row: t + 1, column: i + 1, value: v });
                }
            }
        }
    }
    Ok(Ingested { panel: Panel::new(values, PanelKind::Returns)?, replacements })
}
