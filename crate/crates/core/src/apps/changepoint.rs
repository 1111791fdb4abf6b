//! Change-point detection in a local linear trend observed with occasional
//! outliers.
//!
//! The state is `x_t = (m_t, ṁ_t)` (level and slope). Jumps enter through a
//! spike-and-DPM state noise; outliers through a two-component observation
//! noise.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dpm::DpHyper;
use crate::error::{invalid, Result};
use crate::gaussian::{GaussianCluster, NiwParams, RngStream};
use crate::mcmc::{nonspike_frequency, ChainTrace};
use crate::noise::{NoiseProcess, SpikeMass};
use crate::rbpf::RbpfOutput;
use crate::statespace::LinearGaussianModel;

/// `F = G = [[1, 1], [0, 1]]`, `H = (1 0)`, with a broad prior on `x₀`.
pub fn build_changepoint_statespace() -> Result<LinearGaussianModel> {
    let f = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
    let h = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    LinearGaussianModel::time_invariant(
        f.clone(),
        f,
        h,
        DVector::zeros(2),
        DMatrix::from_diagonal(&DVector::from_vec(vec![100.0, 1.0])),
    )
}

/// Inference settings of the change-point model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePointModel {
    /// Probability that an observation is accurate.
    pub lambda_w: f64,
    /// Variance of accurate observations.
    pub sigma1_w: f64,
    /// Variance of outlying observations.
    pub sigma2_w: f64,
    /// Probability of a jump at each step.
    pub jump_prob: f64,
    pub alpha: f64,
    /// Base measure of the jump density.
    pub base: NiwParams,
}

impl Default for ChangePointModel {
    fn default() -> Self {
        Self {
            lambda_w: 0.98,
            sigma1_w: 1e-7,
            sigma2_w: 1.0,
            jump_prob: 0.15,
            alpha: 1.0,
            base: NiwParams::new(
                DVector::zeros(2),
                1e6,
                4.0,
                DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 0.01])),
            )
            .expect("valid NIW"),
        }
    }
}

impl ChangePointModel {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("lambda_w", self.lambda_w), ("jump_prob", self.jump_prob)] {
            if !(p > 0.0 && p < 1.0) {
                return Err(invalid(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(self.sigma1_w > 0.0 && self.sigma2_w > 0.0) {
            return Err(invalid("observation noise variances must be positive"));
        }
        if self.base.dim() != 2 {
            return Err(invalid("the jump base measure must be two-dimensional"));
        }
        Ok(())
    }

    /// The zero cluster used when no jump occurs.
    pub fn spike_atom(&self) -> GaussianCluster {
        GaussianCluster::zero(2)
    }
}

/// Noise processes `(v, w)` of the change-point model.
pub fn changepoint_processes(model: &ChangePointModel) -> Result<(NoiseProcess, NoiseProcess)> {
    model.validate()?;
    let v = NoiseProcess::spike_dpm(
        DpHyper::niw(model.alpha, model.base.clone())?,
        SpikeMass::Fixed(model.jump_prob),
        model.spike_atom(),
    )?;
    let w = NoiseProcess::finite(
        vec![
            GaussianCluster::scalar(0.0, model.sigma1_w)?,
            GaussianCluster::scalar(0.0, model.sigma2_w)?,
        ],
        vec![model.lambda_w, 1.0 - model.lambda_w],
    )?;
    Ok((v, w))
}

/// Synthetic trend series with level jumps and outliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChangePointSynth {
    pub horizon: usize,
    pub init_level: f64,
    pub init_slope: f64,
    /// Probability of a random jump at each step.
    pub jump_prob: f64,
    /// Steps (1-based) that always carry a jump.
    pub forced_jumps: Vec<usize>,
    /// Level jumps have magnitude uniform on this range and a random sign.
    pub level_jump: (f64, f64),
    /// Standard deviation of the slope change at a jump.
    pub slope_jump_sd: f64,
    pub lambda_w: f64,
    pub sigma1_w: f64,
    pub sigma2_w: f64,
}

impl Default for ChangePointSynth {
    fn default() -> Self {
        Self {
            horizon: 120,
            init_level: 0.0,
            init_slope: 0.02,
            jump_prob: 0.0,
            forced_jumps: vec![8, 20, 110],
            level_jump: (2.0, 4.0),
            slope_jump_sd: 0.02,
            lambda_w: 0.98,
            sigma1_w: 1e-7,
            sigma2_w: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePointData {
    pub z: Vec<DVector<f64>>,
    /// True `(m_t, ṁ_t)` for `t = 0..=T`.
    pub states: Vec<DVector<f64>>,
    /// Steps (1-based) with a jump.
    pub jumps: Vec<usize>,
    /// Steps (1-based) with an outlying observation.
    pub outliers: Vec<usize>,
}

pub fn synth_changepoint_data(cfg: &ChangePointSynth, rng: &mut RngStream) -> Result<ChangePointData> {
    if !(0.0..=1.0).contains(&cfg.jump_prob) || !(0.0..=1.0).contains(&cfg.lambda_w) {
        return Err(invalid("probabilities must lie in [0, 1]"));
    }
    if cfg.forced_jumps.iter().any(|&t| t == 0 || t > cfg.horizon) {
        return Err(invalid("forced jumps must lie in 1..=horizon"));
    }
    let mut level = cfg.init_level;
    let mut slope = cfg.init_slope;
    let mut states = vec![DVector::from_vec(vec![level, slope])];
    let mut z = Vec::with_capacity(cfg.horizon);
    let mut jumps = Vec::new();
    let mut outliers = Vec::new();
    for t in 1..=cfg.horizon {
        let random_jump = rng.uniform() < cfg.jump_prob;
        let (mut a, mut b) = (0.0, 0.0);
        if random_jump || cfg.forced_jumps.contains(&t) {
            let (lo, hi) = cfg.level_jump;
            let mag = lo + (hi - lo) * rng.uniform();
            a = if rng.uniform() < 0.5 { -mag } else { mag };
            b = cfg.slope_jump_sd * rng.standard_normal();
            jumps.push(t);
        }
        // x_t = F x_{t−1} + G v_t with v_t = (a, b).
        level += slope + a + b;
        slope += b;
        states.push(DVector::from_vec(vec![level, slope]));
        let accurate = rng.uniform() < cfg.lambda_w;
        let var = if accurate { cfg.sigma1_w } else { cfg.sigma2_w };
        if !accurate {
            outliers.push(t);
        }
        z.push(DVector::from_element(1, level + var.sqrt() * rng.standard_normal()));
    }
    Ok(ChangePointData {
        z,
        states,
        jumps,
        outliers,
    })
}

/// Fraction of retained iterations with a non-spike jump cluster at each
/// step, `t = 1..=T`.
pub fn jump_posterior_mcmc(trace: &ChainTrace) -> Result<Vec<f64>> {
    nonspike_frequency(trace)
}

/// Weight mass of particles with a non-spike jump cluster at each step,
/// read from the fixed-lag estimates, `t = 1..=T`.
pub fn jump_posterior_rbpf(output: &RbpfOutput) -> Vec<f64> {
    let mut p: Vec<(usize, f64)> = output.smoothed.iter().map(|e| (e.t, e.nonspike_prob)).collect();
    p.sort_by_key(|e| e.0);
    p.into_iter().map(|e| e.1).collect()
}
