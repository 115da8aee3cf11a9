//! CSV ingestion and run-directory output writers.

use hsmm_core::model::TimeSeries;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug)]
pub struct IngestError(pub String);

impl std::fmt::Display for IngestError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "data error: {}", self.0)
    }
}

impl std::error::Error for IngestError {}

/// Read one numeric column from a headed CSV file. Offending rows are
/// reported by line number (1-based, header is line 1).
pub fn read_series(
    path: &Path,
    column: &str,
    sqrt_transform: bool,
) -> Result<TimeSeries, IngestError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| IngestError(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| IngestError(format!("{}: empty file", path.display())))?;
    let columns: Vec<&str> = header.split(',').map(|c| c.trim()).collect();
    let idx = columns.iter().position(|&c| c == column).ok_or_else(|| {
        IngestError(format!(
            "column '{column}' not found; header has {columns:?}"
        ))
    })?;
    let mut values = Vec::new();
    let mut bad_lines = Vec::new();
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parsed = fields
            .get(idx)
            .and_then(|f| f.trim().parse::<f64>().ok())
            .filter(|v| v.is_finite());
        match parsed {
            Some(v) => {
                if sqrt_transform && v < 0.0 {
                    bad_lines.push(line_no + 1);
                } else {
                    values.push(if sqrt_transform { v.sqrt() } else { v });
                }
            }
            None => bad_lines.push(line_no + 1),
        }
    }
    if !bad_lines.is_empty() {
        let shown: Vec<String> = bad_lines.iter().take(20).map(|l| l.to_string()).collect();
        return Err(IngestError(format!(
            "{} non-numeric/NaN rows in column '{column}' at lines [{}]{}",
            bad_lines.len(),
            shown.join(", "),
            if bad_lines.len() > 20 { ", …" } else { "" }
        )));
    }
    TimeSeries::new(values).map_err(|e| IngestError(e.to_string()))
}

/// CSV writer helper: rows of f64 with a header.
pub fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl Iterator<Item = Vec<f64>>,
) -> std::io::Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            let _ = write!(out, "{v}");
            first = false;
        }
        out.push('\n');
    }
    std::fs::write(path, out)
}

/// Serialize any serde value as pretty JSON.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value).expect("serializable"))
}
