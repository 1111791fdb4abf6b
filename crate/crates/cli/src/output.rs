//! Artifact writers: CSV tables, line-delimited JSON traces and JSON
//! summaries.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const ESTIMATES_FILE: &str = "estimates.csv";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PLOT_DIR: &str = "plotdata";

pub fn write_csv<I, R, S>(path: &Path, header: &[S], rows: I) -> CliResult<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
    S: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::output(path, e))?;
    w.write_record(header).map_err(|e| CliError::output(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| CliError::output(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Writes columns of equal length, the first being an integer index.
pub fn write_columns(path: &Path, index_name: &str, index: &[usize], columns: &[(String, Vec<f64>)]) -> CliResult<()> {
    let mut header = vec![index_name.to_string()];
    header.extend(columns.iter().map(|c| c.0.clone()));
    let rows = index.iter().enumerate().map(|(i, t)| {
        std::iter::once(t.to_string())
            .chain(columns.iter().map(|c| c.1[i].to_string()))
            .collect::<Vec<_>>()
    });
    write_csv(path, &header, rows)
}

/// Writes a grid of `y` values against named density columns.
pub fn write_grid(path: &Path, grid: &[f64], columns: &[(String, Vec<f64>)]) -> CliResult<()> {
    let mut header = vec!["y".to_string()];
    header.extend(columns.iter().map(|c| c.0.clone()));
    let rows = grid.iter().enumerate().map(|(i, y)| {
        std::iter::once(y.to_string())
            .chain(columns.iter().map(|c| c.1[i].to_string()))
            .collect::<Vec<_>>()
    });
    write_csv(path, &header, rows)
}

/// One row of `estimates.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub t: usize,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Header of `estimates.csv`: `t`, `xhat_i`, `cov_diag_i`, then extras.
pub fn estimates_header(n_x: usize, extras: &[&str]) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=n_x).map(|i| format!("xhat_{i}")));
    h.extend((1..=n_x).map(|i| format!("cov_diag_{i}")));
    h.extend(extras.iter().map(|s| s.to_string()));
    h
}

/// Writes `estimates.csv`; each extra column holds one value per row.
pub fn write_estimates(dir: &Path, rows: &[EstimateRow], extras: &[(&str, Vec<f64>)]) -> CliResult<PathBuf> {
    let path = dir.join(ESTIMATES_FILE);
    let n_x = rows.first().map_or(0, |r| r.mean.len());
    let names: Vec<&str> = extras.iter().map(|e| e.0).collect();
    let header = estimates_header(n_x, &names);
    let lines = rows.iter().enumerate().map(|(i, r)| {
        let mut line = vec![r.t.to_string()];
        line.extend(r.mean.iter().map(|x| x.to_string()));
        line.extend((0..n_x).map(|k| r.cov[(k, k)].to_string()));
        line.extend(extras.iter().map(|e| e.1[i].to_string()));
        line
    });
    write_csv(&path, &header, lines)?;
    Ok(path)
}

/// Line-delimited JSON writer; each record is flushed as it is written.
pub struct JsonlWriter {
    path: PathBuf,
    inner: BufWriter<File>,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> CliResult<Self> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            inner: BufWriter::new(file),
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> CliResult<()> {
        serde_json::to_writer(&mut self.inner, record).map_err(|e| CliError::output(&self.path, e))?;
        self.inner.write_all(b"\n").map_err(|e| CliError::io(&self.path, e))?;
        self.inner.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::output(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}
