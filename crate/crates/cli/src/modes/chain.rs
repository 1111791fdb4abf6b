use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::{json, Value};

use dpmss::apps::{
    build_changepoint_statespace, changepoint_processes, density_grid, jump_posterior_mcmc, run_deconv_on,
    DeconvSetup, DeconvVariant,
};
use dpmss::mcmc::{run_chain, ChainConfig, ChainTrace};
use dpmss::noise::SideSnapshot;
use dpmss::{Label, LinearGaussianModel, NoiseProcess};

use super::{changepoint_data, column, deconv_data, deconv_states, detection_metrics, write_jump_plot, write_signal_plots};
use crate::config::{ExperimentConfig, ModelSpec, NiwSpec};
use crate::error::{CliError, CliResult};
use crate::output::{write_columns, write_estimates, write_grid, EstimateRow, JsonlWriter, PLOT_DIR, TRACE_FILE};

#[derive(Serialize)]
struct AtomSummary {
    n: usize,
    mean: Vec<f64>,
    cov_diag: Vec<f64>,
}

/// One `trace.jsonl` record per retained iteration.
#[derive(Serialize)]
struct IterationRecord<'a> {
    iter: usize,
    acceptance: f64,
    alpha_v: Option<f64>,
    alpha_w: Option<f64>,
    psi_v: Option<NiwSpec>,
    psi_w: Option<NiwSpec>,
    clusters_v: usize,
    clusters_w: usize,
    spikes_v: usize,
    atoms_v: Vec<AtomSummary>,
    atoms_w: Vec<AtomSummary>,
    aux: BTreeMap<&'a str, f64>,
}

fn atoms(side: &SideSnapshot) -> Vec<AtomSummary> {
    side.urn
        .as_ref()
        .map(|u| {
            u.atoms
                .iter()
                .map(|(_, c, n)| AtomSummary {
                    n: *n,
                    mean: c.mean.iter().copied().collect(),
                    cov_diag: c.cov.diagonal().iter().copied().collect(),
                })
                .collect()
        })
        .unwrap_or_default()
}

/// Chain results plus what is needed to plot them.
pub(super) struct ChainOutputs<'a> {
    pub trace: &'a ChainTrace,
    pub z: &'a [DVector<f64>],
    /// Observation matrix used for residuals.
    pub h: DMatrix<f64>,
    /// True `x_{1:T}` when known.
    pub truth: Option<Vec<DVector<f64>>>,
    pub spike_v: bool,
    /// True state-noise density on the plotting grid, when known.
    pub true_density: Option<Vec<f64>>,
}

/// `x̂_{t|T}` and its covariance for `t = 1..=T`.
pub(super) fn chain_estimates(trace: &ChainTrace) -> CliResult<Vec<EstimateRow>> {
    let means = trace.mmse_states()?;
    let covs = trace.state_covariances()?;
    Ok(means
        .into_iter()
        .zip(covs)
        .enumerate()
        .skip(1)
        .map(|(t, (mean, cov))| EstimateRow { t, mean, cov })
        .collect())
}

/// Writes `trace.jsonl` and the chain plots.
pub(super) fn write_chain_artifacts(config: &ExperimentConfig, out: &Path, o: &ChainOutputs, rows: &[EstimateRow]) -> CliResult<Value> {
    write_iteration_trace(out, o.trace)?;
    write_chain_plots(config, out, o, rows, true)
}

fn write_iteration_trace(out: &Path, trace: &ChainTrace) -> CliResult<()> {
    let mut writer = JsonlWriter::create(&out.join(TRACE_FILE))?;
    for (k, theta) in trace.theta_samples.iter().enumerate() {
        let iter = trace.burn_in + k;
        let phi = &trace.hyper_samples[iter];
        let aux = trace
            .aux_names
            .iter()
            .map(String::as_str)
            .zip(trace.aux_samples.get(iter).cloned().unwrap_or_default())
            .collect();
        writer.write(&IterationRecord {
            iter: iter + 1,
            acceptance: trace.sweep_acceptance[iter],
            alpha_v: phi.alpha_v,
            alpha_w: phi.alpha_w,
            psi_v: phi.psi_v.as_ref().map(NiwSpec::from_params),
            psi_w: phi.psi_w.as_ref().map(NiwSpec::from_params),
            clusters_v: phi.clusters_v,
            clusters_w: phi.clusters_w,
            spikes_v: theta.v.labels.iter().filter(|l| **l == Label::Spike).count(),
            atoms_v: atoms(&theta.v),
            atoms_w: atoms(&theta.w),
            aux,
        })?;
    }
    Ok(())
}

/// Signal, residual, hyperparameter and auxiliary traces, the density grid
/// when `with_density` is set, and jump probabilities for spike models.
pub(super) fn write_chain_plots(
    config: &ExperimentConfig,
    out: &Path,
    o: &ChainOutputs,
    rows: &[EstimateRow],
    with_density: bool,
) -> CliResult<Value> {
    let trace = o.trace;
    write_signal_plots(out, rows, o.z, &o.h, o.truth.as_deref())?;
    let dir = out.join(PLOT_DIR);
    let iters: Vec<usize> = (1..=trace.hyper_samples.len()).collect();
    let mut cols = Vec::new();
    let hs = &trace.hyper_samples;
    if hs.first().is_some_and(|p| p.alpha_v.is_some()) {
        cols.push(column("alpha_v", hs.iter().map(|p| p.alpha_v.unwrap_or(f64::NAN)).collect()));
    }
    if hs.first().is_some_and(|p| p.alpha_w.is_some()) {
        cols.push(column("alpha_w", hs.iter().map(|p| p.alpha_w.unwrap_or(f64::NAN)).collect()));
    }
    cols.push(column("clusters_v", hs.iter().map(|p| p.clusters_v as f64).collect()));
    cols.push(column("clusters_w", hs.iter().map(|p| p.clusters_w as f64).collect()));
    write_columns(&dir.join("alpha_trace.csv"), "iter", &iters, &cols)?;

    if !trace.aux_names.is_empty() {
        let cols: Vec<(String, Vec<f64>)> = trace
            .aux_names
            .iter()
            .enumerate()
            .map(|(i, n)| column(n.clone(), trace.aux_samples.iter().map(|s| s[i]).collect()))
            .collect();
        write_columns(&dir.join("h_trace.csv"), "iter", &iters, &cols)?;
    }

    let urn_v = trace.theta_samples.first().is_some_and(|s| s.v.urn.is_some());
    if urn_v && with_density {
        let grid = config.run.density.grid();
        let density = density_grid(trace, &grid, config.run.density.base_draws, config.seed())?;
        let mut cols = vec![column("density", density)];
        if let Some(d) = &o.true_density {
            cols.push(column("true_density", d.clone()));
        }
        write_grid(&dir.join("density.csv"), &grid, &cols)?;
    }
    if o.spike_v {
        let probs = jump_posterior_mcmc(trace)?;
        let t: Vec<usize> = (1..=probs.len()).collect();
        write_jump_plot(out, &t, &probs)?;
    }

    let retained = &hs[trace.burn_in..];
    let mean_of = |f: &dyn Fn(&dpmss::mcmc::PhiSample) -> Option<f64>| {
        let xs: Vec<f64> = retained.iter().filter_map(f).collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    };
    Ok(json!({
        "acceptance_rate": trace.acceptance.rate(),
        "retained": trace.retained,
        "mean_alpha_v": mean_of(&|p| p.alpha_v),
        "mean_clusters_v": mean_of(&|p| Some(p.clusters_v as f64)),
    }))
}

/// Impulse density of the deconvolution generator on a grid.
pub(super) fn mixture_density(setup: &DeconvSetup, grid: &[f64]) -> Vec<f64> {
    grid.iter()
        .map(|y| {
            setup
                .mixture
                .iter()
                .map(|(w, m, v)| w * (-(y - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt())
                .sum()
        })
        .collect()
}

fn chain_config(config: &ExperimentConfig) -> CliResult<ChainConfig> {
    let burn_in = config.run.burn_in();
    Ok(ChainConfig {
        burn_in,
        retained: config.run.iterations - burn_in,
        seed: config.seed(),
        scheme: config.hyper.scheme,
        hyper: config.hyper.params()?,
    })
}

fn is_spike(p: &NoiseProcess) -> bool {
    matches!(p, NoiseProcess::SpikeDpm { .. })
}

fn check_horizon(z: &[DVector<f64>]) -> CliResult<()> {
    if z.is_empty() {
        return Err(CliError::Data("the series holds no observations".into()));
    }
    Ok(())
}

/// Batch sampler on the configured model.
pub fn run_mcmc(config: &ExperimentConfig, out: &Path) -> CliResult<Value> {
    match config.model() {
        ModelSpec::Deconv(spec) => {
            let setup = spec.setup();
            let model = spec.model(config.hyper.alpha_prior)?;
            let variant = spec.variant()?;
            let (data, has_truth) = deconv_data(config, spec)?;
            let run = run_deconv_on(
                &setup,
                &model,
                variant,
                config.run.iterations,
                config.run.burn_in(),
                config.seed(),
                data,
            )?;
            let rows = chain_estimates(&run.trace)?;
            write_estimates(out, &rows, &[])?;
            let l = setup.h.len();
            let h_mean = posterior_mean_aux(&run.trace, l);
            let mut h = DMatrix::zeros(1, l + 1);
            h[(0, 0)] = 1.0;
            for (i, x) in h_mean.iter().enumerate() {
                h[(0, i + 1)] = *x;
            }
            let grid = config.run.density.grid();
            let outputs = ChainOutputs {
                trace: &run.trace,
                z: &run.data.z,
                h,
                truth: has_truth.then(|| deconv_states(&run.data.v, l)),
                spike_v: !matches!(variant, DeconvVariant::M2 | DeconvVariant::M3),
                true_density: has_truth.then(|| mixture_density(&setup, &grid)),
            };
            let mut metrics = write_chain_artifacts(config, out, &outputs, &rows)?;
            metrics["variant"] = json!(variant.name());
            metrics["h_mean"] = json!(h_mean);
            if has_truth {
                metrics["e_mse"] = json!(run.e_mse);
            }
            Ok(metrics)
        }
        ModelSpec::Changepoint(spec) => {
            let model = build_changepoint_statespace()?;
            let (v, w) = changepoint_processes(&spec.model()?)?;
            let (z, truth) = changepoint_data(config, spec)?;
            let states = truth.map(|d| d.states[1..].to_vec());
            let (_, metrics) = generic_chain(config, out, model, v, w, &z, states, false)?;
            Ok(metrics)
        }
        ModelSpec::Custom(spec) => {
            let model = spec.model()?;
            let (v, w) = spec.processes()?;
            let path = config.io.input.as_ref().expect("validated: custom models need an input");
            let z = super::load_input(path, model.dims().n_z)?;
            let (_, metrics) = generic_chain(config, out, model, v, w, &z, None, false)?;
            Ok(metrics)
        }
    }
}

fn posterior_mean_aux(trace: &ChainTrace, l: usize) -> Vec<f64> {
    let retained = &trace.aux_samples[trace.burn_in..];
    let n = retained.len().max(1) as f64;
    (0..l).map(|i| retained.iter().map(|s| s[i]).sum::<f64>() / n).collect()
}

/// Runs the chain and writes estimates and artifacts, with a `jump_prob`
/// column when `jump_column` is set.
#[allow(clippy::too_many_arguments)]
fn generic_chain(
    config: &ExperimentConfig,
    out: &Path,
    model: LinearGaussianModel,
    v: NoiseProcess,
    w: NoiseProcess,
    z: &[DVector<f64>],
    truth: Option<Vec<DVector<f64>>>,
    jump_column: bool,
) -> CliResult<(ChainTrace, Value)> {
    check_horizon(z)?;
    let spike_v = is_spike(&v);
    let h = model.h_mat(1).clone();
    let trace = run_chain(model, z, v, w, &chain_config(config)?, None)?;
    let rows = chain_estimates(&trace)?;
    let extras = if jump_column {
        vec![("jump_prob", jump_posterior_mcmc(&trace)?)]
    } else {
        Vec::new()
    };
    write_estimates(out, &rows, &extras)?;
    let outputs = ChainOutputs {
        trace: &trace,
        z,
        h,
        truth,
        spike_v,
        true_density: None,
    };
    let metrics = write_chain_artifacts(config, out, &outputs, &rows)?;
    Ok((trace, metrics))
}

/// Change-point detection with the batch sampler.
pub fn run_changepoint(config: &ExperimentConfig, out: &Path) -> CliResult<Value> {
    let ModelSpec::Changepoint(spec) = config.model() else {
        unreachable!("validated: changepoint mode uses the changepoint preset");
    };
    let model = build_changepoint_statespace()?;
    let (v, w) = changepoint_processes(&spec.model()?)?;
    let (z, truth) = changepoint_data(config, spec)?;
    let states = truth.as_ref().map(|d| d.states[1..].to_vec());
    let (trace, mut metrics) = generic_chain(config, out, model, v, w, &z, states, true)?;
    let probs = jump_posterior_mcmc(&trace)?;
    metrics["detection"] = detection_metrics(&probs, truth.as_ref());
    Ok(metrics)
}
