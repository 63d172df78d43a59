//! Dataset CSV and metrics writers.
//!
//! Dataset files hold one sample per line: feature columns as decimal
//! floats followed by a non-negative integer label. The class count is one
//! more than the largest label seen.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use aadladmm_core::data::Dataset;
use aadladmm_core::trainer::EpochMetrics;
use aadladmm_core::DenseMatrix;
use serde::Serialize;

use crate::error::{CliError, Result};

/// Header of every metrics CSV.
pub const METRICS_HEADER: [&str; 8] = ["epoch", "objective", "residual", "train_acc", "test_acc", "wall_ms", "aa_accepted", "eps"];

/// Shortest round-trip decimal, in exponent form outside `[1e-5, 1e16)`.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || !a.is_finite() || (1e-5..1e16).contains(&a) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

fn parse_error(path: &Path, line: u64, column: usize, message: impl Into<String>) -> CliError {
    CliError::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message: message.into(),
    }
}

pub fn load_csv(path: &Path, has_header: bool) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(path, line, 0, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() < 2 {
            return Err(parse_error(path, line, record.len(), "need at least one feature and a label"));
        }
        let width = record.len() - 1;
        if let Some(first) = rows.first() {
            if first.len() != width {
                return Err(parse_error(path, line, record.len(), format!("expected {} columns, found {}", first.len() + 1, record.len())));
            }
        }
        let mut row = Vec::with_capacity(width);
        for (j, field) in record.iter().take(width).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_error(path, line, j + 1, format!("not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_error(path, line, j + 1, format!("non-finite value {field:?}")));
            }
            row.push(v);
        }
        let label: usize = record[width]
            .parse()
            .map_err(|_| parse_error(path, line, width + 1, format!("label must be a non-negative integer, got {:?}", &record[width])))?;
        rows.push(row);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(parse_error(path, 0, 0, "no samples"));
    }

    let (d, n) = (rows[0].len(), rows.len());
    let features = DenseMatrix::from_fn(d, n, |i, j| rows[j][i]);
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    let name = path.file_stem().map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    Ok(Dataset::new(features, labels, classes, name)?)
}

/// Writes `ds` in the format read by [`load_csv`], without a header.
pub fn write_csv(path: &Path, ds: &Dataset) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for j in 0..ds.len() {
        let mut line = String::new();
        for i in 0..ds.dim() {
            line.push_str(&fmt_f64(ds.features[(i, j)]));
            line.push(',');
        }
        line.push_str(&ds.labels[j].to_string());
        writeln!(out, "{line}").map_err(|e| CliError::io(path, e))?;
    }
    out.flush().map_err(|e| CliError::io(path, e))
}

/// Metrics as CSV with [`METRICS_HEADER`]. Floats go through [`fmt_f64`],
/// `aa_accepted` is 0/1, and a missing test accuracy is written as `NaN`.
pub fn write_metrics_csv(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(METRICS_HEADER).map_err(|e| csv_io(path, e))?;
    for m in metrics {
        w.write_record([
            m.epoch.to_string(),
            fmt_f64(m.objective),
            fmt_f64(m.residual_norm),
            fmt_f64(m.train_acc),
            fmt_f64(m.test_acc),
            fmt_f64(m.wall_ms),
            u8::from(m.aa_accepted).to_string(),
            fmt_f64(m.eps),
        ])
        .map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Serialize)]
struct MetricsLine {
    epoch: usize,
    objective: f64,
    residual: f64,
    train_acc: f64,
    /// `null` without a test set.
    test_acc: Option<f64>,
    wall_ms: f64,
    aa_accepted: bool,
    eps: f64,
}

/// One JSON object per line with the CSV column names as keys.
pub fn write_metrics_jsonl(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for m in metrics {
        let line = MetricsLine {
            epoch: m.epoch,
            objective: m.objective,
            residual: m.residual_norm,
            train_acc: m.train_acc,
            test_acc: (!m.test_acc.is_nan()).then_some(m.test_acc),
            wall_ms: m.wall_ms,
            aa_accepted: m.aa_accepted,
            eps: m.eps,
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| CliError::io(path, e.into()))?;
        writeln!(out).map_err(|e| CliError::io(path, e))?;
    }
    out.flush().map_err(|e| CliError::io(path, e))
}

/// Writes a table of pre-formatted cells under `header`.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(header).map_err(|e| csv_io(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e.into()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> CliError {
    CliError::io(path, std::io::Error::other(e))
}
