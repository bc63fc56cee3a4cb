//! Per-epoch metrics rows written as CSV.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order of `metrics.csv`.
pub const METRICS_HEADER: [&str; 9] = [
    "iteration",
    "epoch",
    "loss",
    "test_error",
    "alive_edges",
    "min_gamma",
    "median_gamma",
    "entropy_pruned",
    "cascade_pruned",
];

/// One training epoch. Prune counts are non-zero only on the last epoch of an
/// iteration, after the hyper update; `alive_edges` counts alive groups in
/// compression runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub epoch: usize,
    /// Mean penalized training objective over the epoch.
    pub loss: f64,
    /// Test classification error, or test energy for regression.
    pub test_error: f64,
    pub alive_edges: usize,
    pub min_gamma: f64,
    pub median_gamma: f64,
    pub entropy_pruned: usize,
    pub cascade_pruned: usize,
}

pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            reason: format!("{other:?}"),
        },
    })?;
    if rows.is_empty() {
        writer.write_record(METRICS_HEADER)?;
    }
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_HEADER {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            reason: format!("unexpected header {header:?}"),
        });
    }
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}
