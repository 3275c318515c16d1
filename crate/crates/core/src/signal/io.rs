//! CSV signal files.
//!
//! Every file starts with a header whose first column is `t` (seconds). The
//! time column must be strictly increasing with uniform spacing; the sampling
//! rate is recovered from the overall span.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::{RgbTrace, TimeSeries};

/// Relative tolerance on the spacing of the time column.
pub const SPACING_TOLERANCE: f64 = 1e-6;

/// A parsed CSV table: header names (excluding `t`), the sampling grid and
/// the value columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub t0: f64,
    pub fs: f64,
    pub columns: Vec<Vec<f64>>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| io_err(path, e))?;
    parse_table(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_table(text: &str) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .clone();
    if header.get(0) != Some("t") || header.len() < 2 {
        return Err(Error::Parse("header must be `t,<column>...`".into()));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let mut t = Vec::new();
    let mut columns = vec![Vec::new(); names.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(e.to_string()))?;
        if record.len() != header.len() {
            return Err(Error::Parse(format!("row {} has {} fields", row + 1, record.len())));
        }
        let mut fields = record.iter().map(|f| {
            f.parse::<f64>()
                .map_err(|e| Error::Parse(format!("row {}: {f:?}: {e}", row + 1)))
        });
        t.push(fields.next().unwrap()?);
        for (col, value) in columns.iter_mut().zip(fields) {
            col.push(value?);
        }
    }
    let (t0, fs) = infer_grid(&t)?;
    Ok(Table { names, t0, fs, columns })
}

/// Start time and sampling rate of a uniform time column. Rates within the
/// spacing tolerance of an integer are rounded to it.
pub fn infer_grid(t: &[f64]) -> Result<(f64, f64)> {
    if t.len() < 2 {
        return Err(Error::Parse("need at least two rows to infer the sampling rate".into()));
    }
    let mut steps: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    if let Some(i) = steps.iter().position(|d| !(*d > 0.0)) {
        return Err(Error::Parse(format!("time column not strictly increasing at row {}", i + 2)));
    }
    let mut sorted = steps.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    if let Some(i) = steps
        .iter_mut()
        .position(|d| (*d - median).abs() > SPACING_TOLERANCE * median)
    {
        return Err(Error::Parse(format!("non-uniform time step at row {}", i + 2)));
    }
    let fs = (t.len() - 1) as f64 / (t[t.len() - 1] - t[0]);
    // Decimal time stamps rarely reproduce an integer rate exactly.
    let snapped = fs.round();
    let fs = if snapped > 0.0 && (fs - snapped).abs() <= SPACING_TOLERANCE * fs { snapped } else { fs };
    Ok((t[0], fs))
}

pub fn write_table(path: &Path, names: &[&str], t0: f64, fs: f64, columns: &[&[f64]]) -> Result<()> {
    let mut out = String::new();
    render_table(&mut out, names, t0, fs, columns);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(path, e))?;
    }
    File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| io_err(path, e))
}

/// Renders a table with shortest round-trip float formatting.
pub fn render_table(out: &mut String, names: &[&str], t0: f64, fs: f64, columns: &[&[f64]]) {
    use std::fmt::Write as _;
    out.push('t');
    for name in names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    let rows = columns.iter().map(|c| c.len()).min().unwrap_or(0);
    for i in 0..rows {
        let _ = write!(out, "{}", t0 + i as f64 / fs);
        for col in columns {
            let _ = write!(out, ",{}", col[i]);
        }
        out.push('\n');
    }
}

pub fn read_time_series(path: &Path) -> Result<(String, TimeSeries)> {
    let table = read_table(path)?;
    if table.columns.len() != 1 {
        return Err(Error::Parse(format!(
            "{}: expected `t,<name>`, found {} value columns",
            path.display(),
            table.columns.len()
        )));
    }
    let name = table.names.into_iter().next().unwrap();
    let samples = table.columns.into_iter().next().unwrap();
    Ok((name, TimeSeries::with_offset(samples, table.fs, table.t0.max(0.0))?))
}

pub fn write_time_series(path: &Path, name: &str, ts: &TimeSeries) -> Result<()> {
    write_table(path, &[name], ts.t0(), ts.fs(), &[ts.samples()])
}

pub fn read_rgb_trace(path: &Path) -> Result<RgbTrace> {
    let table = read_table(path)?;
    if table.names != ["r", "g", "b"] {
        return Err(Error::Parse(format!("{}: expected header `t,r,g,b`", path.display())));
    }
    let mut cols = table.columns.into_iter();
    RgbTrace::new(
        cols.next().unwrap(),
        cols.next().unwrap(),
        cols.next().unwrap(),
        table.fs,
    )
}

pub fn write_rgb_trace(path: &Path, trace: &RgbTrace) -> Result<()> {
    write_table(path, &["r", "g", "b"], 0.0, trace.fs(), &trace.channels())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_uniform_table() {
        let table = parse_table("t,ppg\n0,1\n0.0025,2\n0.005,3\n").unwrap();
        assert_eq!(table.names, vec!["ppg"]);
        assert!((table.fs - 400.0).abs() < 1e-9);
        assert_eq!(table.columns[0], vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn rejects_bad_time_columns() {
        assert!(parse_table("t,x\n0,1\n0.1,2\n0.3,3\n").is_err());
        assert!(parse_table("t,x\n0,1\n0,2\n").is_err());
        assert!(parse_table("time,x\n0,1\n1,2\n").is_err());
        assert!(parse_table("t,x\n0,1\n1,abc\n").is_err());
    }

    #[test]
    fn render_then_parse_is_lossless() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin() * 1e3 / 7.0).collect();
        let mut text = String::new();
        render_table(&mut text, &["x"], 12.5, 90.0, &[&xs]);
        let table = parse_table(&text).unwrap();
        assert_eq!(table.columns[0], xs);
        assert!((table.fs - 90.0).abs() < 1e-6);
        assert_eq!(table.t0, 12.5);
    }
}
