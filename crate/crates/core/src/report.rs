//! Atomic file output and JSON report types.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Writes `bytes` to a temporary file beside `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Machine-readable error emitted on stderr by the command-line tool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub error: String,
    pub message: String,
    pub exit_code: i32,
}

impl From<&Error> for ErrorReport {
    fn from(e: &Error) -> Self {
        Self {
            error: e.kind().to_string(),
            message: e.to_string(),
            exit_code: e.exit_code(),
        }
    }
}

/// Summary of a completed command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: std::collections::BTreeMap<String, String>,
    /// `(phase, milliseconds)` in execution order.
    pub phases: Vec<(String, u64)>,
    pub outputs: Vec<String>,
    pub metrics: std::collections::BTreeMap<String, f64>,
}

/// One evaluation metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub value: f64,
    pub seed: u64,
    pub settings: String,
}

pub const METRIC_COLUMNS: [&str; 4] = ["metric", "value", "seed", "settings"];

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = METRIC_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.metric, r.value, r.seed, r.settings));
    }
    out
}
