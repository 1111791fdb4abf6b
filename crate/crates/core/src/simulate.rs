//! Forward simulation of a linear model whose noise clusters follow their
//! prior laws.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{sample_mvn, GaussianCluster, RngStream};
use crate::noise::{NoiseProcess, NoiseSide};
use crate::statespace::LinearGaussianModel;

/// A simulated trajectory. `states` holds `x_0..=x_T`; the other series
/// hold `t = 1..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedPath {
    pub states: Vec<DVector<f64>>,
    pub state_noise: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
}

/// Draws `θ_{1:T}` sequentially from the noise priors, then `x_{0:T}` and
/// `z_{1:T}` from the model.
pub fn simulate_path(
    model: &LinearGaussianModel,
    v: NoiseProcess,
    w: NoiseProcess,
    horizon: usize,
    rng: &mut RngStream,
) -> Result<SimulatedPath> {
    let dims = model.dims();
    if v.dim() != dims.n_v {
        return Err(Error::DimensionMismatch {
            what: "state noise process",
            expected: dims.n_v,
            got: v.dim(),
        });
    }
    if w.dim() != dims.n_z {
        return Err(Error::DimensionMismatch {
            what: "observation noise process",
            expected: dims.n_z,
            got: w.dim(),
        });
    }
    let mut v_side = NoiseSide::sequential(v);
    let mut w_side = NoiseSide::sequential(w);
    let init = GaussianCluster::new(model.init_mean().clone(), model.init_cov().clone())?;
    let mut x = sample_mvn(&init, rng);
    let mut states = vec![x.clone()];
    let mut state_noise = Vec::with_capacity(horizon);
    let mut z = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let pv = v_side.sample(&v_side.conditional(None), rng);
        v_side.push(&pv);
        let pw = w_side.sample(&w_side.conditional(None), rng);
        w_side.push(&pw);
        let vt = sample_mvn(&pv.cluster, rng);
        let wt = sample_mvn(&pw.cluster, rng);
        x = model.f_mat(t) * &x + model.g_mat(t) * &vt;
        if let Some(u) = model.input_term(t) {
            x += u;
        }
        z.push(model.h_mat(t) * &x + wt);
        states.push(x.clone());
        state_noise.push(vt);
    }
    Ok(SimulatedPath { states, state_noise, z })
}
