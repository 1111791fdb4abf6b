//! Online inference: a Rao-Blackwellized particle filter over the cluster
//! sequence, with one Kalman filter per particle.
//!
//! Cluster values are never revisited once drawn, so the filter cannot
//! correct atoms proposed early in the sequence.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gaussian::RngStream;
use crate::noise::{Label, NoiseProcess, NoiseSide};
use crate::statespace::{kalman_step, smooth_window_start, KalmanBelief, LinearGaussianModel, NoisePair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbpfConfig {
    pub n_particles: usize,
    /// Resample when `N_eff ≤ ess_threshold`; `None` uses `N/2`.
    pub ess_threshold: Option<f64>,
    /// Fixed-lag depth; 0 gives filtering estimates only.
    pub lag: usize,
    pub seed: u64,
}

impl RbpfConfig {
    pub fn new(n_particles: usize, seed: u64) -> Self {
        Self {
            n_particles,
            ess_threshold: None,
            lag: 0,
            seed,
        }
    }

    fn threshold(&self) -> f64 {
        self.ess_threshold.unwrap_or(self.n_particles as f64 / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 2 {
            return Err(invalid("the particle filter needs at least two particles"));
        }
        let eta = self.threshold();
        if !(1.0..=self.n_particles as f64).contains(&eta) {
            return Err(invalid(format!("ESS threshold {eta} outside [1, N]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct HistoryEntry {
    belief: KalmanBelief,
    theta: Option<NoisePair>,
    v_label: Option<Label>,
}

/// One weighted path `θ_{1:t}` with its Kalman belief.
#[derive(Debug, Clone)]
pub struct Particle {
    v: NoiseSide,
    w: NoiseSide,
    belief: KalmanBelief,
    log_weight: f64,
    history: VecDeque<HistoryEntry>,
}

impl Particle {
    pub fn belief(&self) -> &KalmanBelief {
        &self.belief
    }

    /// Normalized log weight.
    pub fn log_weight(&self) -> f64 {
        self.log_weight
    }

    pub fn v(&self) -> &NoiseSide {
        &self.v
    }

    pub fn w(&self) -> &NoiseSide {
        &self.w
    }

    /// Cluster pair drawn at the most recent step.
    pub fn last_theta(&self) -> Option<&NoisePair> {
        self.history.back().and_then(|h| h.theta.as_ref())
    }

    /// v-side label of the most recent step.
    pub fn last_v_label(&self) -> Option<Label> {
        self.history.back().and_then(|h| h.v_label)
    }
}

#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    particles: Vec<Particle>,
    t: usize,
    ess_threshold: f64,
    lag: usize,
    seed: u64,
    observations: VecDeque<DVector<f64>>,
}

impl ParticleEnsemble {
    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.log_weight.exp()).collect()
    }

    pub fn ess_threshold(&self) -> f64 {
        self.ess_threshold
    }
}

/// All particles start from the state prior with uniform weights.
pub fn rbpf_init(model: &LinearGaussianModel, v: NoiseProcess, w: NoiseProcess, config: &RbpfConfig) -> Result<ParticleEnsemble> {
    config.validate()?;
    let n = config.n_particles;
    let belief = KalmanBelief::initial(model);
    let particle = Particle {
        v: NoiseSide::sequential(v),
        w: NoiseSide::sequential(w),
        belief: belief.clone(),
        log_weight: -(n as f64).ln(),
        history: VecDeque::from([HistoryEntry {
            belief,
            theta: None,
            v_label: None,
        }]),
    };
    Ok(ParticleEnsemble {
        particles: vec![particle; n],
        t: 0,
        ess_threshold: config.threshold(),
        lag: config.lag,
        seed: config.seed,
        observations: VecDeque::new(),
    })
}

/// `N_eff = 1 / Σ w_i²` for normalized weights.
pub fn ess(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Systematic resampling: ancestor index for each of the `N` offspring.
pub fn resample_systematic(weights: &[f64], rng: &mut RngStream) -> Vec<usize> {
    let n = weights.len();
    let u = rng.uniform();
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut j = 0;
    for i in 0..n {
        let pos = (u + i as f64) / n as f64;
        while pos >= cum && j + 1 < n {
            j += 1;
            cum += weights[j];
        }
        out.push(j);
    }
    out
}

/// Resamples the ensemble in place and resets the weights to `1/N`.
pub fn resample_ensemble(ensemble: &mut ParticleEnsemble, rng: &mut RngStream) {
    let idx = resample_systematic(&ensemble.weights(), rng);
    let lw = -(ensemble.particles.len() as f64).ln();
    let next: Vec<Particle> = idx
        .iter()
        .map(|&i| {
            let mut p = ensemble.particles[i].clone();
            p.log_weight = lw;
            p
        })
        .collect();
    ensemble.particles = next;
}

/// Weighted mixture moments of the per-particle beliefs.
pub fn mixture_moments<'a>(items: impl Iterator<Item = (f64, &'a DVector<f64>, &'a DMatrix<f64>)> + Clone) -> (DVector<f64>, DMatrix<f64>) {
    let mut mean: Option<DVector<f64>> = None;
    for (w, m, _) in items.clone() {
        match &mut mean {
            Some(acc) => *acc += m * w,
            None => mean = Some(m * w),
        }
    }
    let mean = mean.expect("at least one particle");
    let n = mean.len();
    let mut cov = DMatrix::zeros(n, n);
    for (w, m, c) in items {
        let d = m - &mean;
        cov += (c + &d * d.transpose()) * w;
    }
    (mean, cov)
}

/// `x̂^MMSE_{t|t}` and the mixture covariance.
pub fn estimate_state(ensemble: &ParticleEnsemble) -> (DVector<f64>, DMatrix<f64>) {
    mixture_moments(
        ensemble
            .particles
            .iter()
            .map(|p| (p.log_weight.exp(), &p.belief.mean, &p.belief.cov)),
    )
}

/// Smoothed estimate of `x_{t−lag}` given `z_{1:t}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagEstimate {
    pub t: usize,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Posterior probability that step `t` used a non-spike v-side cluster.
    pub nonspike_prob: f64,
}

/// `E(x_{t−lag} | z_{1:t})` from each particle's stored window, reweighted
/// by the current weights.
pub fn fixed_lag_estimate(ensemble: &ParticleEnsemble, model: &LinearGaussianModel, lag: usize) -> Result<LagEstimate> {
    let available = ensemble.particles[0].history.len();
    if lag + 1 > available || lag > ensemble.t {
        return Err(Error::InsufficientHistory {
            needed: lag + 1,
            available,
        });
    }
    let target = ensemble.t - lag;
    let obs: Vec<DVector<f64>> = ensemble
        .observations
        .iter()
        .skip(ensemble.observations.len() - lag)
        .cloned()
        .collect();
    let smoothed: Vec<(f64, DVector<f64>, DMatrix<f64>, bool)> = ensemble
        .particles
        .par_iter()
        .map(|p| {
            let start = p.history.len() - 1 - lag;
            let window: Vec<&HistoryEntry> = p.history.iter().skip(start).collect();
            let beliefs: Vec<KalmanBelief> = window.iter().map(|h| h.belief.clone()).collect();
            let thetas: Vec<NoisePair> = window[1..]
                .iter()
                .map(|h| h.theta.clone().expect("steps after the first carry clusters"))
                .collect();
            let s = smooth_window_start(model, target, &beliefs, &thetas, &obs)?;
            let nonspike = matches!(window[0].v_label, Some(l) if l != Label::Spike);
            Ok((p.log_weight.exp(), s.mean, s.cov, nonspike))
        })
        .collect::<Result<_>>()?;
    let (mean, cov) = mixture_moments(smoothed.iter().map(|(w, m, c, _)| (*w, m, c)));
    let nonspike_prob = smoothed.iter().filter(|s| s.3).map(|s| s.0).sum::<f64>();
    Ok(LagEstimate {
        t: target,
        mean,
        cov,
        nonspike_prob: nonspike_prob.min(1.0),
    })
}

/// Diagnostics and filtering estimate after one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub t: usize,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub ess: f64,
    pub resampled: bool,
    /// Weight mass of particles whose step-`t` v-side cluster is not the spike.
    pub nonspike_prob: f64,
}

fn particle_stream(seed: u64, t: usize, i: u64) -> RngStream {
    RngStream::new(seed, ((t as u64) << 32) | i)
}

/// Advances every particle by one observation.
///
/// Each particle draws `θ_t` from the urn of its own path (the prior
/// evolution law), runs a Kalman step and multiplies its weight by the
/// predictive likelihood. Weights are renormalized and the ensemble is
/// resampled when `N_eff ≤ η`. Estimates are taken before resampling.
pub fn rbpf_step(ensemble: &mut ParticleEnsemble, model: &LinearGaussianModel, z: &DVector<f64>) -> Result<StepReport> {
    let mut report = propagate(ensemble, model, z)?;
    report.resampled = resample_if_needed(ensemble, report.ess);
    Ok(report)
}

fn propagate(ensemble: &mut ParticleEnsemble, model: &LinearGaussianModel, z: &DVector<f64>) -> Result<StepReport> {
    let t = ensemble.t + 1;
    let seed = ensemble.seed;
    let keep = ensemble.lag + 1;
    ensemble
        .particles
        .par_iter_mut()
        .enumerate()
        .try_for_each(|(i, p)| -> Result<()> {
            let mut rng = particle_stream(seed, t, i as u64);
            let pv = p.v.sample(&p.v.conditional(None), &mut rng);
            let pw = p.w.sample(&p.w.conditional(None), &mut rng);
            let pair = NoisePair::from_arcs(pv.cluster.clone(), pw.cluster.clone());
            match kalman_step(model, t, &p.belief, &pair, z) {
                Ok(b) => {
                    p.log_weight += b.loglik_increment;
                    p.belief = b;
                }
                Err(Error::SingularInnovation { .. }) => p.log_weight = f64::NEG_INFINITY,
                Err(e) => return Err(e),
            }
            let v_label = p.v.push(&pv);
            p.w.push(&pw);
            p.history.push_back(HistoryEntry {
                belief: p.belief.clone(),
                theta: Some(pair),
                v_label: Some(v_label),
            });
            while p.history.len() > keep {
                p.history.pop_front();
            }
            Ok(())
        })?;
    ensemble.t = t;
    ensemble.observations.push_back(z.clone());
    while ensemble.observations.len() > ensemble.lag {
        ensemble.observations.pop_front();
    }

    let top = ensemble
        .particles
        .iter()
        .map(|p| p.log_weight)
        .fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY || top.is_nan() {
        return Err(Error::ParticleDegeneracy { t });
    }
    let lse = top
        + ensemble
            .particles
            .iter()
            .map(|p| (p.log_weight - top).exp())
            .sum::<f64>()
            .ln();
    for p in &mut ensemble.particles {
        p.log_weight -= lse;
    }
    let weights = ensemble.weights();
    let (mean, cov) = estimate_state(ensemble);
    let nonspike_prob = ensemble
        .particles
        .iter()
        .zip(&weights)
        .filter(|(p, _)| matches!(p.last_v_label(), Some(l) if l != Label::Spike))
        .map(|(_, w)| w)
        .sum::<f64>()
        .min(1.0);
    Ok(StepReport {
        t,
        mean,
        cov,
        ess: ess(&weights),
        resampled: false,
        nonspike_prob,
    })
}

fn resample_if_needed(ensemble: &mut ParticleEnsemble, n_eff: f64) -> bool {
    if n_eff > ensemble.ess_threshold {
        return false;
    }
    let mut rng = particle_stream(ensemble.seed, ensemble.t, u32::MAX as u64);
    resample_ensemble(ensemble, &mut rng);
    true
}

/// Output of [`run_rbpf`].
#[derive(Debug, Clone)]
pub struct RbpfOutput {
    pub steps: Vec<StepReport>,
    /// Fixed-lag estimates for `t = 1..=T`; the last `lag` steps use the
    /// longest window available at the end of the data.
    pub smoothed: Vec<LagEstimate>,
    pub final_ensemble: ParticleEnsemble,
}

/// One step that also returns the fixed-lag estimate of `x_{t−lag}` once
/// `t > lag`, with the lag taken from the ensemble's configuration. The
/// estimate is read before resampling.
pub fn rbpf_step_smoothed(
    ensemble: &mut ParticleEnsemble,
    model: &LinearGaussianModel,
    z: &DVector<f64>,
) -> Result<(StepReport, Option<LagEstimate>)> {
    let mut report = propagate(ensemble, model, z)?;
    let smoothed = if ensemble.t > ensemble.lag {
        Some(fixed_lag_estimate(ensemble, model, ensemble.lag)?)
    } else {
        None
    };
    report.resampled = resample_if_needed(ensemble, report.ess);
    Ok((report, smoothed))
}

/// Estimates for the last `lag` steps, which never receive a full window;
/// each uses the longest window available at the end of the data.
pub fn rbpf_flush(ensemble: &ParticleEnsemble, model: &LinearGaussianModel) -> Result<Vec<LagEstimate>> {
    let big_t = ensemble.t;
    let first_tail = (big_t + 1).saturating_sub(ensemble.lag).max(1);
    (first_tail..=big_t)
        .map(|s| fixed_lag_estimate(ensemble, model, big_t - s))
        .collect()
}

/// Filters a whole series, producing filtering and fixed-lag estimates.
pub fn run_rbpf(
    model: &LinearGaussianModel,
    observations: &[DVector<f64>],
    v: NoiseProcess,
    w: NoiseProcess,
    config: &RbpfConfig,
) -> Result<RbpfOutput> {
    let mut ens = rbpf_init(model, v, w, config)?;
    let mut steps = Vec::with_capacity(observations.len());
    let mut smoothed = Vec::with_capacity(observations.len());
    for z in observations {
        let (report, lagged) = rbpf_step_smoothed(&mut ens, model, z)?;
        smoothed.extend(lagged);
        steps.push(report);
    }
    smoothed.extend(rbpf_flush(&ens, model)?);
    Ok(RbpfOutput {
        steps,
        smoothed,
        final_ensemble: ens,
    })
}
