//! Observation series stored as `t,z1[,z2,...]` CSV files.

use std::io::Read;
use std::path::Path;

use nalgebra::DVector;

use crate::error::{CliError, CliResult};

/// Reads `z_{1:T}` from a CSV file with header `t,z1,...,zn` and rows
/// `t = 1, 2, ...` with no gaps.
pub fn load_timeseries(path: impl AsRef<Path>) -> CliResult<Vec<DVector<f64>>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    read_timeseries(file).map_err(|e| match e {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// As [`load_timeseries`], from any reader.
pub fn read_timeseries<R: Read>(reader: R) -> CliResult<Vec<DVector<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| CliError::Data(format!("line 1: {e}")))?
        .clone();
    let n_z = header.len().saturating_sub(1);
    let expected: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=n_z).map(|i| format!("z{i}")))
        .collect();
    if n_z == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(CliError::Data(format!(
            "line 1: header must be \"t,z1[,z2,...]\", found \"{}\"",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| CliError::Data(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != n_z + 1 {
            return Err(CliError::Data(format!(
                "line {line}: expected {n_z} observation value(s), found {}",
                record.len().saturating_sub(1)
            )));
        }
        let t: usize = record[0]
            .parse()
            .map_err(|_| CliError::Data(format!("line {line}: t must be a positive integer, found \"{}\"", &record[0])))?;
        let want = out.len() + 1;
        if t > want {
            return Err(CliError::Data(format!("line {line}: gap in t, missing t = {want}")));
        }
        if t < want {
            return Err(CliError::Data(format!(
                "line {line}: t must increase strictly from 1, found t = {t} after t = {}",
                want - 1
            )));
        }
        let values = record
            .iter()
            .skip(1)
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| CliError::Data(format!("line {line}: cannot parse \"{s}\" as a number")))
            })
            .collect::<CliResult<Vec<f64>>>()?;
        out.push(DVector::from_vec(values));
    }
    if out.is_empty() {
        return Err(CliError::Data("the series holds no observations".into()));
    }
    Ok(out)
}

/// Writes `z_{1:T}` in the format read by [`load_timeseries`]. Values are
/// printed in shortest round-trip form, so reading them back is exact.
pub fn write_timeseries(path: impl AsRef<Path>, z: &[DVector<f64>]) -> CliResult<()> {
    let path = path.as_ref();
    let n_z = z.first().map_or(1, |x| x.len());
    let mut header = vec!["t".to_string()];
    header.extend((1..=n_z).map(|i| format!("z{i}")));
    let rows = z.iter().enumerate().map(|(i, x)| {
        std::iter::once((i + 1).to_string())
            .chain(x.iter().map(|v| v.to_string()))
            .collect::<Vec<_>>()
    });
    crate::output::write_csv(path, &header, rows)
}
