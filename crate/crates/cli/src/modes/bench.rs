use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use dpmss::apps::{density_grid, run_deconv, DeconvRun, DeconvVariant, VariantSummary};

use super::chain::{chain_estimates, mixture_density, write_chain_plots, ChainOutputs};
use super::{column, deconv_states};
use crate::config::{parse_variant, ExperimentConfig, ModelSpec};
use crate::error::CliResult;
use crate::output::{write_csv, write_estimates, write_grid, JsonlWriter, PLOT_DIR, TRACE_FILE};

pub const TABLE_FILE: &str = "table.csv";

/// Result of one `(variant, seed)` chain, kept small so that many runs fit
/// in memory.
#[derive(Serialize)]
struct RunRecord {
    variant: DeconvVariant,
    seed: u64,
    e_mse: f64,
    mean_alpha: Option<f64>,
    mean_clusters: f64,
    #[serde(skip)]
    density: Option<Vec<f64>>,
}

/// Every variant on every seed; each seed shares one synthetic data set.
/// The first variant on the first seed is also written out in full.
pub fn run(config: &ExperimentConfig, out: &Path, quiet: bool) -> CliResult<Value> {
    let ModelSpec::Deconv(spec) = config.model() else {
        unreachable!("validated: the benchmark uses the deconv preset");
    };
    let setup = spec.setup();
    let model = spec.model(config.hyper.alpha_prior)?;
    let variants = config
        .run
        .variants
        .iter()
        .map(|v| parse_variant(v))
        .collect::<CliResult<Vec<_>>>()?;
    let seeds = &config.run.seeds;
    let (iters, burn_in) = (config.run.iterations, config.run.burn_in());
    let grid = config.run.density.grid();
    let base_draws = config.run.density.base_draws;

    let jobs: Vec<(usize, DeconvVariant, u64)> = variants
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .enumerate()
        .map(|(i, (v, s))| (i, v, s))
        .collect();
    let results: Vec<(RunRecord, Option<DeconvRun>)> = jobs
        .par_iter()
        .map(|&(i, variant, seed)| -> CliResult<_> {
            let run = run_deconv(&setup, &model, variant, iters, burn_in, seed)?;
            log::info!("{} seed {seed}: e_MSE = {:.4}", variant.name(), run.e_mse);
            let retained = &run.trace.hyper_samples[burn_in..];
            let alphas: Vec<f64> = retained.iter().filter_map(|p| p.alpha_v).collect();
            let urn = run.trace.theta_samples[0].v.urn.is_some();
            let record = RunRecord {
                variant,
                seed,
                e_mse: run.e_mse,
                mean_alpha: (!alphas.is_empty()).then(|| alphas.iter().sum::<f64>() / alphas.len() as f64),
                mean_clusters: retained.iter().map(|p| p.clusters_v as f64).sum::<f64>() / retained.len() as f64,
                density: if urn {
                    Some(density_grid(&run.trace, &grid, base_draws, seed)?)
                } else {
                    None
                },
            };
            Ok((record, (i == 0).then_some(run)))
        })
        .collect::<CliResult<_>>()?;

    let mut writer = JsonlWriter::create(&out.join(TRACE_FILE))?;
    for (r, _) in &results {
        writer.write(r)?;
    }

    let summaries: Vec<VariantSummary> = variants
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let errors = results[k * seeds.len()..(k + 1) * seeds.len()]
                .iter()
                .map(|(r, _)| r.e_mse)
                .collect();
            VariantSummary::from_errors(v, errors)
        })
        .collect();
    write_csv(
        &out.join(TABLE_FILE),
        &["variant", "mean", "std", "median", "seeds"],
        summaries.iter().map(|s| {
            vec![
                s.variant.name().to_string(),
                s.mean.to_string(),
                s.std.to_string(),
                s.median.to_string(),
                s.e_mse.len().to_string(),
            ]
        }),
    )?;
    if !quiet {
        println!("{:<8}{:>10}{:>10}{:>10}", "variant", "mean", "std", "median");
        for s in &summaries {
            println!("{:<8}{:>10.4}{:>10.4}{:>10.4}", s.variant.name(), s.mean, s.std, s.median);
        }
    }

    let mut density_cols = vec![column("true_density", mixture_density(&setup, &grid))];
    for (k, &v) in variants.iter().enumerate() {
        let block = &results[k * seeds.len()..(k + 1) * seeds.len()];
        if block[0].0.density.is_none() {
            continue;
        }
        let mut pooled = vec![0.0; grid.len()];
        for (r, _) in block {
            for (acc, d) in pooled.iter_mut().zip(r.density.as_ref().expect("urn variants carry densities")) {
                *acc += d / seeds.len() as f64;
            }
        }
        density_cols.push(column(v.name(), pooled));
    }

    let reference = results
        .into_iter()
        .find_map(|(_, run)| run)
        .expect("the first job keeps its run");
    let rows = chain_estimates(&reference.trace)?;
    write_estimates(out, &rows, &[])?;
    let l = setup.h.len();
    let mut h = nalgebra::DMatrix::zeros(1, l + 1);
    h[(0, 0)] = 1.0;
    for (i, x) in setup.h.iter().enumerate() {
        h[(0, i + 1)] = *x;
    }
    let outputs = ChainOutputs {
        trace: &reference.trace,
        z: &reference.data.z,
        h,
        truth: Some(deconv_states(&reference.data.v, l)),
        spike_v: !matches!(reference.variant, DeconvVariant::M2 | DeconvVariant::M3),
        true_density: Some(mixture_density(&setup, &grid)),
    };
    let reference_metrics = write_chain_plots(config, out, &outputs, &rows, false)?;
    write_grid(&out.join(PLOT_DIR).join("density.csv"), &grid, &density_cols)?;

    Ok(json!({
        "iterations": iters,
        "burn_in": burn_in,
        "seeds": seeds,
        "table": summaries,
        "reference_run": {
            "variant": reference.variant.name(),
            "seed": seeds[0],
            "e_mse": reference.e_mse,
            "chain": reference_metrics,
        },
    }))
}
