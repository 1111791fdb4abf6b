//! One runner per subcommand. Every runner writes its artifacts into the
//! output directory and returns the headline metrics for `summary.json`.

mod bench;
mod chain;
mod filter;
mod simulate;

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use dpmss::apps::{simulate_deconv, synth_changepoint_data, ChangePointData, DeconvData, DATA_STREAM};
use dpmss::RngStream;

use crate::config::{ChangepointSpec, DeconvSpec, ExperimentConfig, Mode};
use crate::error::{CliError, CliResult};
use crate::output::{write_columns, write_json, EstimateRow, PLOT_DIR, SUMMARY_FILE};
use crate::timeseries::load_timeseries;

/// Runs a resolved configuration, writing every artifact under `out`.
/// Returns the contents of `summary.json`. `quiet` suppresses the tables
/// printed to standard output.
pub fn run(config: &ExperimentConfig, out: &Path, quiet: bool) -> CliResult<Value> {
    let mode = config.mode.expect("config must be resolved before running");
    std::fs::create_dir_all(out.join(PLOT_DIR)).map_err(|e| CliError::io(out, e))?;
    let start = Instant::now();
    let metrics = match mode {
        Mode::Simulate => simulate::run(config, out)?,
        Mode::Mcmc => chain::run_mcmc(config, out)?,
        Mode::Rbpf => filter::run_rbpf_mode(config, out)?,
        Mode::Changepoint => match config.run.engine {
            crate::config::Engine::Mcmc => chain::run_changepoint(config, out)?,
            crate::config::Engine::Rbpf => filter::run_changepoint(config, out)?,
        },
        Mode::DeconvBench => bench::run(config, out, quiet)?,
    };
    let summary = json!({
        "mode": mode.name(),
        "seed": config.seed(),
        "wall_time_s": start.elapsed().as_secs_f64(),
        "metrics": metrics,
        "config": config,
    });
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Reads the input series and checks its dimension against the model.
fn load_input(path: &Path, n_z: usize) -> CliResult<Vec<DVector<f64>>> {
    let z = load_timeseries(path)?;
    if z[0].len() != n_z {
        return Err(CliError::Data(format!(
            "{}: the model observes {n_z} value(s) per step, the file holds {}",
            path.display(),
            z[0].len()
        )));
    }
    Ok(z)
}

/// Deconvolution data: the input file without ground truth, or a synthetic
/// series drawn from the seed.
fn deconv_data(config: &ExperimentConfig, spec: &DeconvSpec) -> CliResult<(DeconvData, bool)> {
    match &config.io.input {
        Some(path) => Ok((
            DeconvData {
                v: Vec::new(),
                r: Vec::new(),
                z: load_input(path, 1)?,
            },
            false,
        )),
        None => Ok((
            simulate_deconv(&spec.setup(), &mut RngStream::new(config.seed(), DATA_STREAM))?,
            true,
        )),
    }
}

fn changepoint_data(config: &ExperimentConfig, spec: &ChangepointSpec) -> CliResult<(Vec<DVector<f64>>, Option<ChangePointData>)> {
    match &config.io.input {
        Some(path) => Ok((load_input(path, 1)?, None)),
        None => {
            let data = synth_changepoint_data(&spec.synth, &mut RngStream::new(config.seed(), DATA_STREAM))?;
            Ok((data.z.clone(), Some(data)))
        }
    }
}

/// True deconvolution states `x_t = (v_t, v_{t−1}, ..., v_{t−L})`.
fn deconv_states(v: &[f64], l: usize) -> Vec<DVector<f64>> {
    (0..v.len())
        .map(|t| DVector::from_fn(l + 1, |j, _| if t >= j { v[t - j] } else { 0.0 }))
        .collect()
}

fn column(name: impl Into<String>, values: Vec<f64>) -> (String, Vec<f64>) {
    (name.into(), values)
}

fn indexed(prefix: &str, vectors: &[DVector<f64>]) -> Vec<(String, Vec<f64>)> {
    let n = vectors.first().map_or(0, |v| v.len());
    (0..n)
        .map(|i| column(format!("{prefix}_{}", i + 1), vectors.iter().map(|v| v[i]).collect()))
        .collect()
}

/// `signal.csv` (observations, estimates and truth) and `residuals.csv`
/// (`z_t − H x̂_t`, plus `x̂_t − x_t` when the truth is known).
fn write_signal_plots(
    out: &Path,
    rows: &[EstimateRow],
    z: &[DVector<f64>],
    h: &DMatrix<f64>,
    truth: Option<&[DVector<f64>]>,
) -> CliResult<()> {
    let dir = out.join(PLOT_DIR);
    let t: Vec<usize> = rows.iter().map(|r| r.t).collect();
    let means: Vec<DVector<f64>> = rows.iter().map(|r| r.mean.clone()).collect();
    let obs: Vec<DVector<f64>> = t.iter().map(|&t| z[t - 1].clone()).collect();

    let mut cols = indexed("z", &obs);
    cols.extend(indexed("xhat", &means));
    if let Some(x) = truth {
        let x: Vec<DVector<f64>> = t.iter().map(|&t| x[t - 1].clone()).collect();
        cols.extend(indexed("x_true", &x));
    }
    write_columns(&dir.join("signal.csv"), "t", &t, &cols)?;

    let resid: Vec<DVector<f64>> = obs.iter().zip(&means).map(|(z, m)| z - h * m).collect();
    let mut cols = indexed("resid_z", &resid);
    if let Some(x) = truth {
        let err: Vec<DVector<f64>> = t.iter().zip(&means).map(|(&t, m)| m - &x[t - 1]).collect();
        cols.extend(indexed("err_x", &err));
    }
    write_columns(&dir.join("residuals.csv"), "t", &t, &cols)
}

fn write_jump_plot(out: &Path, t: &[usize], probs: &[f64]) -> CliResult<()> {
    write_columns(
        &out.join(PLOT_DIR).join("jump_probs.csv"),
        "t",
        t,
        &[column("jump_prob", probs.to_vec())],
    )
}

/// Detection summary for a jump-probability series against known jumps.
fn detection_metrics(probs: &[f64], truth: Option<&ChangePointData>) -> Value {
    let detected: Vec<usize> = probs
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.5)
        .map(|(i, _)| i + 1)
        .collect();
    let mut m = json!({ "detected": detected });
    if let Some(data) = truth {
        let hits = data.jumps.iter().filter(|t| detected.contains(t)).count();
        let false_alarms = detected.iter().filter(|t| !data.jumps.contains(t)).count();
        let quiet = probs.len() - data.jumps.len();
        m["true_jumps"] = json!(data.jumps);
        m["outliers"] = json!(data.outliers);
        m["hits"] = json!(hits);
        m["false_alarms"] = json!(false_alarms);
        m["false_alarm_rate"] = json!(if quiet > 0 { false_alarms as f64 / quiet as f64 } else { 0.0 });
    }
    m
}
