use std::path::Path;

use nalgebra::DVector;
use serde::Serialize;
use serde_json::{json, Value};

use dpmss::apps::{build_changepoint_statespace, build_deconv_statespace, changepoint_processes, e_mse};
use dpmss::rbpf::{rbpf_flush, rbpf_init, rbpf_step_smoothed, LagEstimate, RbpfConfig};
use dpmss::{DpHyper, GaussianCluster, LinearGaussianModel, NoiseProcess, SpikeMass};

use super::{changepoint_data, deconv_data, deconv_states, detection_metrics, write_jump_plot, write_signal_plots};
use crate::config::{ExperimentConfig, ModelSpec};
use crate::error::CliResult;
use crate::output::{write_estimates, EstimateRow, JsonlWriter, TRACE_FILE};

/// One `trace.jsonl` record per time step, written as the step completes.
#[derive(Serialize)]
struct StepRecord<'a> {
    t: usize,
    ess: f64,
    resampled: bool,
    nonspike_prob: f64,
    mean: Vec<f64>,
    cov_diag: Vec<f64>,
    lagged: Option<&'a LagEstimate>,
}

struct Streamed {
    smoothed: Vec<LagEstimate>,
    ess: Vec<f64>,
    resamples: usize,
}

fn rbpf_config(config: &ExperimentConfig) -> RbpfConfig {
    RbpfConfig {
        n_particles: config.run.particles,
        ess_threshold: config.run.ess_threshold,
        lag: config.run.lag,
        seed: config.seed(),
    }
}

/// Filters the series one observation at a time, appending to
/// `trace.jsonl` after every step.
fn stream(
    config: &ExperimentConfig,
    out: &Path,
    model: &LinearGaussianModel,
    v: NoiseProcess,
    w: NoiseProcess,
    z: &[DVector<f64>],
) -> CliResult<Streamed> {
    let mut ens = rbpf_init(model, v, w, &rbpf_config(config))?;
    let mut writer = JsonlWriter::create(&out.join(TRACE_FILE))?;
    let mut smoothed = Vec::with_capacity(z.len());
    let mut ess = Vec::with_capacity(z.len());
    let mut resamples = 0;
    for zt in z {
        let (report, lagged) = rbpf_step_smoothed(&mut ens, model, zt)?;
        writer.write(&StepRecord {
            t: report.t,
            ess: report.ess,
            resampled: report.resampled,
            nonspike_prob: report.nonspike_prob,
            mean: report.mean.iter().copied().collect(),
            cov_diag: report.cov.diagonal().iter().copied().collect(),
            lagged: lagged.as_ref(),
        })?;
        log::debug!("t = {}: N_eff = {:.1}", report.t, report.ess);
        resamples += usize::from(report.resampled);
        ess.push(report.ess);
        smoothed.extend(lagged);
    }
    smoothed.extend(rbpf_flush(&ens, model)?);
    Ok(Streamed {
        smoothed,
        ess,
        resamples,
    })
}

/// Writes estimates and plots; returns the filter metrics.
fn finish(
    out: &Path,
    model: &LinearGaussianModel,
    z: &[DVector<f64>],
    s: &Streamed,
    truth: Option<&[DVector<f64>]>,
    spike_v: bool,
    jump_column: bool,
) -> CliResult<(Vec<EstimateRow>, Value)> {
    let rows: Vec<EstimateRow> = s
        .smoothed
        .iter()
        .map(|e| EstimateRow {
            t: e.t,
            mean: e.mean.clone(),
            cov: e.cov.clone(),
        })
        .collect();
    let probs: Vec<f64> = s.smoothed.iter().map(|e| e.nonspike_prob).collect();
    let mut extras = Vec::new();
    if jump_column {
        extras.push(("jump_prob", probs.clone()));
    }
    extras.push(("N_eff", rows.iter().map(|r| s.ess[r.t - 1]).collect()));
    write_estimates(out, &rows, &extras)?;
    write_signal_plots(out, &rows, z, model.h_mat(1), truth)?;
    if spike_v {
        let t: Vec<usize> = rows.iter().map(|r| r.t).collect();
        write_jump_plot(out, &t, &probs)?;
    }
    let metrics = json!({
        "mean_ess": s.ess.iter().sum::<f64>() / s.ess.len() as f64,
        "resamples": s.resamples,
    });
    Ok((rows, metrics))
}

/// Particle filter with fixed-lag smoothing on the configured model.
pub fn run_rbpf_mode(config: &ExperimentConfig, out: &Path) -> CliResult<Value> {
    match config.model() {
        ModelSpec::Deconv(spec) => {
            let model = build_deconv_statespace(&spec.h_true)?;
            let m = spec.model(config.hyper.alpha_prior)?;
            let v = NoiseProcess::spike_dpm(
                DpHyper::niw(m.alpha, m.base.clone())?,
                SpikeMass::Beta {
                    zeta: m.lambda_prior.0,
                    tau: m.lambda_prior.1,
                },
                m.spike_atom(),
            )?;
            let w = NoiseProcess::fixed(GaussianCluster::scalar(0.0, m.sigma_w2)?);
            let (data, has_truth) = deconv_data(config, spec)?;
            let s = stream(config, out, &model, v, w, &data.z)?;
            let truth = has_truth.then(|| deconv_states(&data.v, spec.h_true.len()));
            let (rows, mut metrics) = finish(out, &model, &data.z, &s, truth.as_deref(), true, false)?;
            if has_truth {
                let v_hat: Vec<f64> = rows.iter().map(|r| r.mean[0]).collect();
                metrics["e_mse"] = json!(e_mse(&data.v, &v_hat));
            }
            Ok(metrics)
        }
        ModelSpec::Changepoint(spec) => {
            let model = build_changepoint_statespace()?;
            let (v, w) = changepoint_processes(&spec.model()?)?;
            let (z, truth) = changepoint_data(config, spec)?;
            let s = stream(config, out, &model, v, w, &z)?;
            let states = truth.map(|d| d.states[1..].to_vec());
            Ok(finish(out, &model, &z, &s, states.as_deref(), true, false)?.1)
        }
        ModelSpec::Custom(spec) => {
            let model = spec.model()?;
            let (v, w) = spec.processes()?;
            let spike_v = matches!(v, NoiseProcess::SpikeDpm { .. });
            let path = config.io.input.as_ref().expect("validated: custom models need an input");
            let z = super::load_input(path, model.dims().n_z)?;
            let s = stream(config, out, &model, v, w, &z)?;
            Ok(finish(out, &model, &z, &s, None, spike_v, false)?.1)
        }
    }
}

/// Change-point detection with the particle filter.
pub fn run_changepoint(config: &ExperimentConfig, out: &Path) -> CliResult<Value> {
    let ModelSpec::Changepoint(spec) = config.model() else {
        unreachable!("validated: changepoint mode uses the changepoint preset");
    };
    let model = build_changepoint_statespace()?;
    let (v, w) = changepoint_processes(&spec.model()?)?;
    let (z, truth) = changepoint_data(config, spec)?;
    let s = stream(config, out, &model, v, w, &z)?;
    let states = truth.as_ref().map(|d| d.states[1..].to_vec());
    let (_, mut metrics) = finish(out, &model, &z, &s, states.as_deref(), true, true)?;
    let probs: Vec<f64> = s.smoothed.iter().map(|e| e.nonspike_prob).collect();
    metrics["detection"] = detection_metrics(&probs, truth.as_ref());
    Ok(metrics)
}
