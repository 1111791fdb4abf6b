use std::path::Path;

use serde_json::{json, Value};

use dpmss::apps::{simulate_deconv, synth_changepoint_data, DATA_STREAM};
use dpmss::simulate::simulate_path;
use dpmss::RngStream;

use super::{column, indexed};
use crate::config::{ExperimentConfig, ModelSpec};
use crate::error::CliResult;
use crate::output::write_columns;
use crate::timeseries::write_timeseries;

pub const DATA_FILE: &str = "data.csv";
pub const TRUTH_FILE: &str = "truth.csv";

/// Writes `data.csv` (loadable as input) and `truth.csv`.
pub fn run(config: &ExperimentConfig, out: &Path) -> CliResult<Value> {
    let mut rng = RngStream::new(config.seed(), DATA_STREAM);
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    match config.model() {
        ModelSpec::Deconv(spec) => {
            let data = simulate_deconv(&spec.setup(), &mut rng)?;
            write_timeseries(out.join(DATA_FILE), &data.z)?;
            let t: Vec<usize> = (1..=data.z.len()).collect();
            write_columns(
                &out.join(TRUTH_FILE),
                "t",
                &t,
                &[
                    column("v", data.v.clone()),
                    column("r", data.r.iter().map(|&b| flag(b)).collect()),
                ],
            )?;
            Ok(json!({
                "horizon": data.z.len(),
                "impulses": data.r.iter().filter(|&&b| b).count(),
            }))
        }
        ModelSpec::Changepoint(spec) => {
            let data = synth_changepoint_data(&spec.synth, &mut rng)?;
            write_timeseries(out.join(DATA_FILE), &data.z)?;
            let t: Vec<usize> = (1..=data.z.len()).collect();
            let mut cols = indexed("x", &data.states[1..]);
            cols.push(column("jump", t.iter().map(|t| flag(data.jumps.contains(t))).collect()));
            cols.push(column("outlier", t.iter().map(|t| flag(data.outliers.contains(t))).collect()));
            write_columns(&out.join(TRUTH_FILE), "t", &t, &cols)?;
            Ok(json!({
                "horizon": data.z.len(),
                "jumps": data.jumps,
                "outliers": data.outliers,
            }))
        }
        ModelSpec::Custom(spec) => {
            let model = spec.model()?;
            let (v, w) = spec.processes()?;
            let path = simulate_path(&model, v, w, spec.horizon, &mut rng)?;
            write_timeseries(out.join(DATA_FILE), &path.z)?;
            let t: Vec<usize> = (1..=path.z.len()).collect();
            let mut cols = indexed("x", &path.states[1..]);
            cols.extend(indexed("v", &path.state_noise));
            write_columns(&out.join(TRUTH_FILE), "t", &t, &cols)?;
            Ok(json!({ "horizon": path.z.len() }))
        }
    }
}
