//! Blind deconvolution of a Bernoulli-Gaussian impulse train observed through
//! an unknown FIR filter.
//!
//! The state is `x_t = (v_t, v_{t−1}, …, v_{t−L})` and `z_t = (1 h) x_t + w_t`.
//! The impulses `v_t` are zero or drawn from an unknown density modelled as a
//! Dirichlet process mixture.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dpm::{AlphaPrior, DpHyper};
use crate::error::{invalid, Error, Result};
use crate::gaussian::{sample_categorical, GaussianCluster, NiwParams, RngStream};
use crate::linalg::cholesky;
use crate::mcmc::{run_chain_from, AuxSampler, ChainConfig, ChainState, ChainTrace, HyperParams, SideHyper};
use crate::noise::{Choice, Conditional, NoiseProcess, NoiseSide, SpikeMass};
use crate::statespace::{simulation_smoother, LinearGaussianModel, TimeVarying};

/// Stream id used for synthetic data, distinct from the chain's stream 0.
pub const DATA_STREAM: u64 = 0xDA7A;

/// `F`: `x_t` takes `v_t` in its first slot and shifts the previous lags down.
/// `G = e₁`, `H = (1 h)`, `x₀ = 0` known.
pub fn build_deconv_statespace(h: &[f64]) -> Result<LinearGaussianModel> {
    let l = h.len();
    if l == 0 {
        return Err(invalid("the filter needs at least one coefficient"));
    }
    let n = l + 1;
    let mut f = DMatrix::zeros(n, n);
    for i in 1..n {
        f[(i, i - 1)] = 1.0;
    }
    let mut g = DMatrix::zeros(n, 1);
    g[(0, 0)] = 1.0;
    LinearGaussianModel::time_invariant(f, g, observation_row(h), DVector::zeros(n), DMatrix::zeros(n, n))
}

fn observation_row(h: &[f64]) -> DMatrix<f64> {
    let mut row = DMatrix::zeros(1, h.len() + 1);
    row[(0, 0)] = 1.0;
    for (i, x) in h.iter().enumerate() {
        row[(0, i + 1)] = *x;
    }
    row
}

/// Parameters of the deconvolution model used for inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeconvModel {
    /// Initial filter coefficients.
    pub h: Vec<f64>,
    /// Initial (or known) observation noise variance.
    pub sigma_w2: f64,
    /// Beta prior `(ζ, τ)` on the impulse probability.
    pub lambda_prior: (f64, f64),
    /// `Σ_h` in the prior `h ~ N(0, σ_w² Σ_h)`.
    pub h_prior_cov: DMatrix<f64>,
    /// Initial (or fixed) `α` of the impulse density.
    pub alpha: f64,
    /// Base measure of the impulse density.
    pub base: NiwParams,
    pub alpha_prior: AlphaPrior,
    /// Inverse-gamma prior `(u, v)` used when `σ_w²` is sampled.
    pub sigma_w2_prior: (f64, f64),
    pub init: ChainInit,
}

/// Starting labels of the impulse side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainInit {
    /// Labels drawn sequentially from the prior.
    Prior,
    /// Every step starts at the zero impulse.
    Quiet,
    /// Every step shares one cluster drawn from the base measure.
    #[default]
    Shared,
}

impl DeconvModel {
    pub fn spike_atom(&self) -> GaussianCluster {
        GaussianCluster::zero(1)
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.h.len();
        if l == 0 {
            return Err(invalid("the filter needs at least one coefficient"));
        }
        if !(self.alpha > 0.0) {
            return Err(invalid("alpha must be positive"));
        }
        if self.base.dim() != 1 {
            return Err(invalid("the impulse base measure must be scalar"));
        }
        if !(self.sigma_w2 > 0.0) {
            return Err(invalid("sigma_w2 must be positive"));
        }
        if !(self.lambda_prior.0 > 0.0 && self.lambda_prior.1 > 0.0) {
            return Err(invalid("Beta parameters must be positive"));
        }
        if self.h_prior_cov.shape() != (l, l) || cholesky(&self.h_prior_cov).is_none() {
            return Err(invalid("h prior covariance must be L x L positive definite"));
        }
        if !(self.sigma_w2_prior.0 > 0.0 && self.sigma_w2_prior.1 > 0.0) {
            return Err(invalid("inverse-gamma parameters must be positive"));
        }
        Ok(())
    }
}

/// Synthetic data generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeconvSetup {
    pub horizon: usize,
    pub h: Vec<f64>,
    /// Probability of a nonzero impulse.
    pub lambda: f64,
    pub sigma_w2: f64,
    /// True impulse density as `(weight, mean, variance)` components.
    pub mixture: Vec<(f64, f64, f64)>,
}

impl Default for DeconvSetup {
    fn default() -> Self {
        Self {
            horizon: 120,
            h: vec![-1.5, 0.5, -0.2],
            lambda: 0.4,
            sigma_w2: 0.1,
            mixture: vec![(0.7, 2.0, 0.5), (0.3, -1.0, 0.1)],
        }
    }
}

impl DeconvSetup {
    /// Inference model with the default priors for this setup.
    pub fn default_model(&self) -> DeconvModel {
        let l = self.h.len();
        DeconvModel {
            h: vec![0.0; l],
            sigma_w2: self.sigma_w2,
            lambda_prior: (1.0, 1.0),
            h_prior_cov: DMatrix::identity(l, l) * 100.0,
            alpha: 100.0,
            base: NiwParams::scalar(0.0, 0.1, 4.0, 1.0).expect("valid NIW"),
            alpha_prior: AlphaPrior { eta: 3.0, nu: 3.0 },
            sigma_w2_prior: (2.0, 0.1),
            init: ChainInit::default(),
        }
    }

    /// Mean and variance of the true impulse density.
    pub fn mixture_moments(&self) -> (f64, f64) {
        let mean: f64 = self.mixture.iter().map(|(w, m, _)| w * m).sum();
        let second: f64 = self.mixture.iter().map(|(w, m, s)| w * (s + m * m)).sum();
        (mean, second - mean * mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeconvData {
    /// True impulses `v_1..v_T`.
    pub v: Vec<f64>,
    /// Impulse indicators `r_t`.
    pub r: Vec<bool>,
    pub z: Vec<DVector<f64>>,
}

/// Draws `(v, r, z)` from the setup.
pub fn simulate_deconv(setup: &DeconvSetup, rng: &mut RngStream) -> Result<DeconvData> {
    let total: f64 = setup.mixture.iter().map(|c| c.0).sum();
    if setup.mixture.is_empty() || (total - 1.0).abs() > 1e-9 {
        return Err(invalid("impulse mixture weights must sum to 1"));
    }
    let weights: Vec<f64> = setup.mixture.iter().map(|c| c.0).collect();
    let mut v = Vec::with_capacity(setup.horizon);
    let mut r = Vec::with_capacity(setup.horizon);
    let mut z = Vec::with_capacity(setup.horizon);
    let sd_w = setup.sigma_w2.sqrt();
    for t in 0..setup.horizon {
        let on = rng.uniform() < setup.lambda;
        let vt = if on {
            let k = sample_categorical(&weights, rng);
            let (_, m, s) = setup.mixture[k];
            m + s.sqrt() * rng.standard_normal()
        } else {
            0.0
        };
        v.push(vt);
        r.push(on);
        let mut y = vt;
        for (j, hj) in setup.h.iter().enumerate() {
            if t > j {
                y += hj * v[t - 1 - j];
            }
        }
        z.push(DVector::from_element(1, y + sd_w * rng.standard_normal()));
    }
    Ok(DeconvData { v, r, z })
}

/// Conditional law of the impulse cluster at step `exclude`: the spike with
/// weight `b/(a+b)`, otherwise the Pólya urn over the non-spike steps.
pub fn spike_urn_conditional(side: &NoiseSide, exclude: usize) -> Result<Conditional> {
    match side.process() {
        NoiseProcess::SpikeDpm { .. } => Ok(side.conditional(Some(exclude))),
        _ => Err(invalid("spike_urn_conditional needs a spike-and-DPM side")),
    }
}

/// One draw of `h | x_{0:T}, z_{1:T}` from `N(m, σ_w² Σ'_h)`.
pub fn sample_h_posterior(
    states: &[DVector<f64>],
    observations: &[DVector<f64>],
    sigma_w2: f64,
    h_prior_cov: &DMatrix<f64>,
    rng: &mut RngStream,
) -> Result<DVector<f64>> {
    let (mean, precision) = h_posterior(states, observations, h_prior_cov)?;
    let chol = cholesky(&precision).ok_or(Error::DegenerateDensity)?;
    let l = mean.len();
    let eps = DVector::from_fn(l, |_, _| rng.standard_normal());
    let noise = chol
        .l()
        .transpose()
        .solve_upper_triangular(&eps)
        .ok_or(Error::DegenerateDensity)?;
    Ok(mean + noise * sigma_w2.sqrt())
}

/// Mean `m` and scaled precision `Σ'_h⁻¹` of the filter posterior.
pub fn h_posterior(
    states: &[DVector<f64>],
    observations: &[DVector<f64>],
    h_prior_cov: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let l = h_prior_cov.nrows();
    if states.len() != observations.len() + 1 {
        return Err(Error::DimensionMismatch {
            what: "state path length",
            expected: observations.len() + 1,
            got: states.len(),
        });
    }
    let mut precision = h_prior_cov.clone().try_inverse().ok_or(Error::DegenerateDensity)?;
    let mut rhs = DVector::zeros(l);
    for (x, z) in states[1..].iter().zip(observations) {
        let lags = x.rows(1, l);
        precision += lags * lags.transpose();
        rhs += lags * (z[0] - x[0]);
    }
    let chol = cholesky(&precision).ok_or(Error::DegenerateDensity)?;
    Ok((chol.solve(&rhs), precision))
}

/// One draw of `σ_w² | x_{0:T}, z_{1:T}, h` from `iG(u + T/2, v + ½ Σ (z_t − H x_t)²)`.
pub fn sample_sigma_w2_posterior(
    states: &[DVector<f64>],
    observations: &[DVector<f64>],
    h_row: &DMatrix<f64>,
    prior: (f64, f64),
    rng: &mut RngStream,
) -> f64 {
    let (shape, rate) = sigma_w2_posterior_params(states, observations, h_row, prior);
    let g: f64 = Gamma::new(shape, 1.0 / rate).expect("positive parameters").sample(rng);
    1.0 / g
}

/// `(u′, v′)` of the inverse-gamma conditional.
pub fn sigma_w2_posterior_params(
    states: &[DVector<f64>],
    observations: &[DVector<f64>],
    h_row: &DMatrix<f64>,
    prior: (f64, f64),
) -> (f64, f64) {
    let sse: f64 = states[1..]
        .iter()
        .zip(observations)
        .map(|(x, z)| (z[0] - (h_row * x)[0]).powi(2))
        .sum();
    (prior.0 + observations.len() as f64 / 2.0, prior.1 + 0.5 * sse)
}

/// Gibbs blocks for `h` and, optionally, `σ_w²`, given a simulation-smoother
/// draw of the state path.
#[derive(Debug, Clone)]
pub struct DeconvAux {
    pub h: DVector<f64>,
    pub sigma_w2: f64,
    pub h_prior_cov: DMatrix<f64>,
    /// `Some((u, v))` samples `σ_w²`.
    pub sigma_w2_prior: Option<(f64, f64)>,
}

impl AuxSampler for DeconvAux {
    fn update(&mut self, state: &mut ChainState, observations: &[DVector<f64>], rng: &mut RngStream) -> Result<()> {
        let path = simulation_smoother(&state.model, &state.thetas(), observations, rng)?;
        self.h = sample_h_posterior(&path, observations, self.sigma_w2, &self.h_prior_cov, rng)?;
        let row = observation_row(self.h.as_slice());
        if let Some(prior) = self.sigma_w2_prior {
            self.sigma_w2 = sample_sigma_w2_posterior(&path, observations, &row, prior, rng);
            state.w.set_fixed(GaussianCluster::scalar(0.0, self.sigma_w2)?)?;
        }
        state.model.set_observation_matrix(TimeVarying::Constant(row))
    }

    fn names(&self) -> Vec<String> {
        let mut n: Vec<String> = (1..=self.h.len()).map(|i| format!("h_{i}")).collect();
        if self.sigma_w2_prior.is_some() {
            n.push("sigma_w2".into());
        }
        n
    }

    fn values(&self, _state: &ChainState) -> Vec<f64> {
        let mut v: Vec<f64> = self.h.iter().copied().collect();
        if self.sigma_w2_prior.is_some() {
            v.push(self.sigma_w2);
        }
        v
    }
}

/// Model variants compared by the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DeconvVariant {
    /// Spike-and-DPM impulses with `α` sampled.
    M1,
    /// Jump-linear model with the true impulse mixture.
    M2,
    /// Jump-linear model with one Gaussian matching the first two moments.
    M3,
    /// `α = 0.1` fixed.
    M4,
    /// `α = 1` fixed.
    M5,
    /// `α = 10` fixed.
    M6,
    /// `α = 100` fixed.
    M7,
    /// As M1, with `σ_w²` sampled.
    M8,
}

impl DeconvVariant {
    pub const ALL: [DeconvVariant; 8] = [
        DeconvVariant::M1,
        DeconvVariant::M2,
        DeconvVariant::M3,
        DeconvVariant::M4,
        DeconvVariant::M5,
        DeconvVariant::M6,
        DeconvVariant::M7,
        DeconvVariant::M8,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DeconvVariant::M1 => "M1",
            DeconvVariant::M2 => "M2",
            DeconvVariant::M3 => "M3",
            DeconvVariant::M4 => "M4",
            DeconvVariant::M5 => "M5",
            DeconvVariant::M6 => "M6",
            DeconvVariant::M7 => "M7",
            DeconvVariant::M8 => "M8",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name().eq_ignore_ascii_case(s))
    }

    fn fixed_alpha(self) -> Option<f64> {
        match self {
            DeconvVariant::M4 => Some(0.1),
            DeconvVariant::M5 => Some(1.0),
            DeconvVariant::M6 => Some(10.0),
            DeconvVariant::M7 => Some(100.0),
            _ => None,
        }
    }

    /// Impulse process and hyperparameter sampling for this variant.
    pub fn noise(self, setup: &DeconvSetup, model: &DeconvModel) -> Result<(NoiseProcess, HyperParams)> {
        let lambda = setup.lambda;
        let sc = |m: f64, v: f64| GaussianCluster::scalar(m, v);
        let finite = |atoms: Vec<GaussianCluster>, probs: Vec<f64>| -> Result<(NoiseProcess, HyperParams)> {
            Ok((NoiseProcess::finite(atoms, probs)?, HyperParams::fixed()))
        };
        match self {
            DeconvVariant::M2 => {
                let mut atoms = vec![model.spike_atom()];
                let mut probs = vec![1.0 - lambda];
                for (w, m, v) in &setup.mixture {
                    atoms.push(sc(*m, *v)?);
                    probs.push(w * lambda);
                }
                finite(atoms, probs)
            }
            DeconvVariant::M3 => {
                let (m, v) = setup.mixture_moments();
                finite(vec![model.spike_atom(), sc(m, v)?], vec![1.0 - lambda, lambda])
            }
            _ => {
                let alpha = self.fixed_alpha().unwrap_or(model.alpha);
                let hyper = DpHyper::niw(alpha, model.base.clone())?;
                let spike = SpikeMass::Beta {
                    zeta: model.lambda_prior.0,
                    tau: model.lambda_prior.1,
                };
                let process = NoiseProcess::spike_dpm(hyper, spike, model.spike_atom())?;
                let params = HyperParams {
                    alpha_prior: model.alpha_prior,
                    v: SideHyper {
                        sample_alpha: self.fixed_alpha().is_none(),
                        psi_prior: None,
                    },
                    w: SideHyper::default(),
                };
                Ok((process, params))
            }
        }
    }
}

/// Root-mean-square error between true and estimated impulses.
pub fn e_mse(truth: &[f64], estimate: &[f64]) -> f64 {
    let n = truth.len() as f64;
    (truth.iter().zip(estimate).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone)]
pub struct DeconvRun {
    pub variant: DeconvVariant,
    pub data: DeconvData,
    /// `v̂^MMSE_{t|T}`, `t = 1..=T`.
    pub v_hat: Vec<f64>,
    pub e_mse: f64,
    pub trace: ChainTrace,
}

/// Simulates data from `seed` and runs one variant's sampler on it.
pub fn run_deconv(
    setup: &DeconvSetup,
    model: &DeconvModel,
    variant: DeconvVariant,
    iterations: usize,
    burn_in: usize,
    seed: u64,
) -> Result<DeconvRun> {
    let data = simulate_deconv(setup, &mut RngStream::new(seed, DATA_STREAM))?;
    run_deconv_on(setup, model, variant, iterations, burn_in, seed, data)
}

/// Runs one variant's sampler on given data.
pub fn run_deconv_on(
    setup: &DeconvSetup,
    model: &DeconvModel,
    variant: DeconvVariant,
    iterations: usize,
    burn_in: usize,
    seed: u64,
    data: DeconvData,
) -> Result<DeconvRun> {
    model.validate()?;
    if burn_in >= iterations {
        return Err(invalid("burn-in must be shorter than the run"));
    }
    let (v_process, hyper) = variant.noise(setup, model)?;
    let w_process = NoiseProcess::fixed(GaussianCluster::scalar(0.0, model.sigma_w2)?);
    let ss = build_deconv_statespace(&model.h)?;
    let mut aux = DeconvAux {
        h: DVector::from_column_slice(&model.h),
        sigma_w2: model.sigma_w2,
        h_prior_cov: model.h_prior_cov.clone(),
        sigma_w2_prior: (variant == DeconvVariant::M8).then_some(model.sigma_w2_prior),
    };
    let config = ChainConfig {
        burn_in,
        retained: iterations - burn_in,
        seed,
        scheme: Default::default(),
        hyper,
    };
    let mut rng = RngStream::new(seed, 0);
    let mut state = ChainState::new(ss, v_process, w_process, data.z.len())?;
    state.init_from_prior(&mut rng);
    if model.init == ChainInit::Shared && state.v.process().is_urn() {
        let first = state.v.realize(Choice::Fresh, &mut rng);
        state.v.set(0, &first);
        let id = match state.v.label(0) {
            Some(crate::noise::Label::Atom(id)) => id,
            _ => unreachable!("fresh draws are urn atoms"),
        };
        for idx in 1..state.horizon() {
            let p = state.v.realize(Choice::Existing(id), &mut rng);
            state.v.set(idx, &p);
        }
    }
    if model.init == ChainInit::Quiet {
        let quiet = match state.v.process() {
            NoiseProcess::Finite { .. } => Choice::Component(0),
            _ => Choice::Spike,
        };
        for idx in 0..state.horizon() {
            let p = state.v.realize(quiet, &mut rng);
            state.v.set(idx, &p);
        }
    }
    let trace = run_chain_from(state, &data.z, &config, Some(&mut aux), &mut rng)?;
    let v_hat: Vec<f64> = trace.mmse_states()?[1..].iter().map(|x| x[0]).collect();
    Ok(DeconvRun {
        variant,
        e_mse: e_mse(&data.v, &v_hat),
        data,
        v_hat,
        trace,
    })
}

/// Per-variant error statistics over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: DeconvVariant,
    pub e_mse: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

impl VariantSummary {
    pub fn from_errors(variant: DeconvVariant, e_mse: Vec<f64>) -> Self {
        let n = e_mse.len() as f64;
        let mean = e_mse.iter().sum::<f64>() / n;
        let std = if e_mse.len() > 1 {
            (e_mse.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut sorted = e_mse.clone();
        sorted.sort_by(f64::total_cmp);
        let k = sorted.len();
        let median = if k % 2 == 1 {
            sorted[k / 2]
        } else {
            0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
        };
        Self {
            variant,
            e_mse,
            mean,
            std,
            median,
        }
    }
}

/// Runs every `(variant, seed)` pair; each seed shares one data set across
/// the variants.
pub fn run_deconv_benchmark(
    setup: &DeconvSetup,
    model: &DeconvModel,
    variants: &[DeconvVariant],
    seeds: &[u64],
    iterations: usize,
    burn_in: usize,
) -> Result<Vec<VariantSummary>> {
    if seeds.is_empty() {
        return Err(invalid("the benchmark needs at least one seed"));
    }
    let jobs: Vec<(DeconvVariant, u64)> = variants
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let errors: Vec<f64> = jobs
        .par_iter()
        .map(|&(v, s)| run_deconv(setup, model, v, iterations, burn_in, s).map(|r| r.e_mse))
        .collect::<Result<_>>()?;
    Ok(variants
        .iter()
        .enumerate()
        .map(|(i, &v)| VariantSummary::from_errors(v, errors[i * seeds.len()..(i + 1) * seeds.len()].to_vec()))
        .collect())
}
