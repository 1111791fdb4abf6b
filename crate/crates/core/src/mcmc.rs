//! Batch inference: per-step Metropolis-Hastings over the cluster sequence
//! using the backward-forward likelihood, with hyperparameter updates and
//! smoothed state estimates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dpm::{sample_alpha_mh, sample_psi_mh, AlphaPrior, BaseMeasure, PsiPrior};
use crate::error::{invalid, Error, Result};
use crate::gaussian::{sample_categorical, GaussianCluster, NiwParams, RngStream};
use crate::noise::{NoiseProcess, NoiseSide, Proposal, SideSnapshot};
use crate::statespace::{
    backward_info_recursion, combined_loglik_at, kalman_smoother, kalman_step, KalmanBelief, LinearGaussianModel,
    NoisePair,
};

/// How the v-side and w-side clusters of one step are proposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateScheme {
    /// One proposal `θ_t* = (θ_t^v*, θ_t^w*)` and one acceptance test.
    #[default]
    Joint,
    /// A v-only proposal followed by a w-only proposal.
    Alternating,
}

/// Which hyperparameters of one side are sampled.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SideHyper {
    pub sample_alpha: bool,
    /// `Some` samples `ψ` with this prior as proposal.
    pub psi_prior: Option<PsiPrior>,
}

/// Hyperparameter sampling configuration. Current values of `α` and `ψ`
/// live in each side's noise process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub alpha_prior: AlphaPrior,
    pub v: SideHyper,
    pub w: SideHyper,
}

impl HyperParams {
    /// Nothing is sampled.
    pub fn fixed() -> Self {
        Self {
            alpha_prior: AlphaPrior { eta: 1.0, nu: 1.0 },
            v: SideHyper::default(),
            w: SideHyper::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub burn_in: usize,
    pub retained: usize,
    pub seed: u64,
    pub scheme: UpdateScheme,
    pub hyper: HyperParams,
}

impl ChainConfig {
    /// `iterations` total sweeps with the first three quarters as burn-in.
    pub fn with_iterations(iterations: usize, seed: u64) -> Self {
        let burn_in = 3 * iterations / 4;
        Self {
            burn_in,
            retained: iterations - burn_in,
            seed,
            scheme: UpdateScheme::Joint,
            hyper: HyperParams::fixed(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.retained == 0 {
            return Err(invalid("the chain needs at least one retained iteration"));
        }
        Ok(())
    }
}

/// Model plus the current cluster labels of both noise sides.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub model: LinearGaussianModel,
    pub v: NoiseSide,
    pub w: NoiseSide,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum SideId {
    V = 0,
    W = 1,
}

impl ChainState {
    /// State with every step unlabelled; call [`ChainState::init_from_prior`]
    /// or set labels before sweeping.
    pub fn new(model: LinearGaussianModel, v: NoiseProcess, w: NoiseProcess, horizon: usize) -> Result<Self> {
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
        Ok(Self {
            model,
            v: NoiseSide::batch(v, horizon),
            w: NoiseSide::batch(w, horizon),
        })
    }

    pub fn horizon(&self) -> usize {
        self.v.len()
    }

    /// Draws `θ_{1:T}` sequentially from the prior.
    pub fn init_from_prior(&mut self, rng: &mut RngStream) {
        for idx in 0..self.horizon() {
            for side in [&mut self.v, &mut self.w] {
                let c = side.conditional(Some(idx));
                let p = side.sample(&c, rng);
                side.set(idx, &p);
            }
        }
    }

    pub fn theta(&self, idx: usize) -> NoisePair {
        NoisePair::from_arcs(self.v.cluster(idx), self.w.cluster(idx))
    }

    pub fn thetas(&self) -> Vec<NoisePair> {
        (0..self.horizon()).map(|i| self.theta(i)).collect()
    }

}

/// Per-step proposal and acceptance counts of the Metropolis-Hastings moves.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub proposed: Vec<u64>,
    pub accepted: Vec<u64>,
}

impl AcceptanceStats {
    pub fn new(horizon: usize) -> Self {
        Self {
            proposed: vec![0; horizon],
            accepted: vec![0; horizon],
        }
    }

    pub fn merge(&mut self, other: &AcceptanceStats) {
        for (a, b) in self.proposed.iter_mut().zip(&other.proposed) {
            *a += b;
        }
        for (a, b) in self.accepted.iter_mut().zip(&other.accepted) {
            *a += b;
        }
    }

    pub fn rate(&self) -> f64 {
        let p: u64 = self.proposed.iter().sum();
        if p == 0 {
            return 0.0;
        }
        self.accepted.iter().sum::<u64>() as f64 / p as f64
    }
}

/// `min(1, exp(candidate − current))`, with NaN treated as rejection.
pub fn mh_accept_prob(current_ll: f64, candidate_ll: f64) -> f64 {
    if candidate_ll == f64::NEG_INFINITY {
        return 0.0;
    }
    if current_ll == f64::NEG_INFINITY {
        return 1.0;
    }
    let d = candidate_ll - current_ll;
    if d.is_nan() {
        0.0
    } else {
        d.exp().min(1.0)
    }
}

struct Site<'a> {
    model: &'a LinearGaussianModel,
    t: usize,
    prev: &'a KalmanBelief,
    z: &'a DVector<f64>,
    back: &'a crate::statespace::BackwardInfo,
}

impl Site<'_> {
    fn evaluate(&self, pair: &NoisePair) -> Result<(KalmanBelief, f64)> {
        let b = kalman_step(self.model, self.t, self.prev, pair, self.z)?;
        let ll = combined_loglik_at(&b, self.back);
        Ok((b, ll))
    }
}

fn pair_with(current: &NoisePair, side: SideId, proposal: &Proposal) -> NoisePair {
    match side {
        SideId::V => NoisePair::from_arcs(proposal.cluster.clone(), current.w.clone()),
        SideId::W => NoisePair::from_arcs(current.v.clone(), proposal.cluster.clone()),
    }
}

/// One forward sweep over `t = 1..T`.
///
/// The backward information pass is computed once under the incoming
/// labels; at step `t` it only involves `θ_{t+1:T}`, which the sweep has
/// not yet touched. Urn sides get a Metropolis-Hastings move with the
/// leave-one-out urn as proposal; finite-mixture sides are drawn exactly
/// by enumerating their components.
pub fn gibbs_sweep(
    state: &mut ChainState,
    observations: &[DVector<f64>],
    scheme: UpdateScheme,
    rng: &mut RngStream,
) -> Result<AcceptanceStats> {
    let horizon = state.horizon();
    if observations.len() != horizon {
        return Err(Error::DimensionMismatch {
            what: "observation count",
            expected: horizon,
            got: observations.len(),
        });
    }
    let thetas = state.thetas();
    let pass = backward_info_recursion(&state.model, &thetas, observations)?;
    let mut stats = AcceptanceStats::new(horizon);

    let ChainState { model, v, w } = state;
    let mut sides = [v, w];
    let urn_sides: Vec<SideId> = [SideId::V, SideId::W]
        .into_iter()
        .filter(|&s| sides[s as usize].process().is_urn())
        .collect();
    let groups: Vec<Vec<SideId>> = match scheme {
        UpdateScheme::Joint if !urn_sides.is_empty() => vec![urn_sides],
        UpdateScheme::Joint => vec![],
        UpdateScheme::Alternating => urn_sides.into_iter().map(|s| vec![s]).collect(),
    };
    let finite_sides: Vec<SideId> = [SideId::V, SideId::W]
        .into_iter()
        .filter(|&s| matches!(sides[s as usize].process(), NoiseProcess::Finite { .. }))
        .collect();

    let mut prev = KalmanBelief::initial(model);
    for idx in 0..horizon {
        let t = idx + 1;
        let site = Site {
            model,
            t,
            prev: &prev,
            z: &observations[idx],
            back: pass.predicted(t),
        };
        let mut pair = thetas[idx].clone();
        let (mut belief, mut ll) = site.evaluate(&pair)?;

        for group in &groups {
            let proposals: Vec<(SideId, Proposal)> = group
                .iter()
                .map(|&s| {
                    let side = &sides[s as usize];
                    let c = side.conditional(Some(idx));
                    (s, side.sample(&c, rng))
                })
                .collect();
            let mut cand = pair.clone();
            for (s, p) in &proposals {
                cand = pair_with(&cand, *s, p);
            }
            stats.proposed[idx] += 1;
            let (cand_belief, cand_ll) = match site.evaluate(&cand) {
                Ok(x) => x,
                Err(Error::SingularInnovation { .. }) => (belief.clone(), f64::NEG_INFINITY),
                Err(e) => return Err(e),
            };
            if rng.uniform() < mh_accept_prob(ll, cand_ll) {
                for (s, p) in &proposals {
                    sides[*s as usize].set(idx, p);
                }
                stats.accepted[idx] += 1;
                pair = cand;
                belief = cand_belief;
                ll = cand_ll;
            }
        }

        for &s in &finite_sides {
            let side = &mut sides[s as usize];
            let cond = side.conditional(Some(idx));
            let mut options = Vec::with_capacity(cond.entries.len());
            for &(choice, weight) in &cond.entries {
                let prop = side.realize(choice, rng);
                let cand = pair_with(&pair, s, &prop);
                let scored = if weight > 0.0 {
                    match site.evaluate(&cand) {
                        Ok((b, l)) => Some((b, l + weight.ln())),
                        Err(Error::SingularInnovation { .. }) => None,
                        Err(e) => return Err(e),
                    }
                } else {
                    None
                };
                options.push((prop, cand, scored));
            }
            let top = options
                .iter()
                .filter_map(|o| o.2.as_ref().map(|x| x.1))
                .fold(f64::NEG_INFINITY, f64::max);
            if top == f64::NEG_INFINITY {
                return Err(Error::SingularInnovation { t });
            }
            let weights: Vec<f64> = options
                .iter()
                .map(|o| o.2.as_ref().map_or(0.0, |x| (x.1 - top).exp()))
                .collect();
            let k = sample_categorical(&weights, rng);
            let (prop, cand, scored) = options.swap_remove(k);
            side.set(idx, &prop);
            pair = cand;
            belief = scored.expect("positive weight implies a score").0;
        }
        prev = belief;
    }
    Ok(stats)
}

/// Current values of the sampled hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiSample {
    pub alpha_v: Option<f64>,
    pub alpha_w: Option<f64>,
    pub psi_v: Option<NiwParams>,
    pub psi_w: Option<NiwParams>,
    /// Distinct urn clusters `M^v`, `M^w`.
    pub clusters_v: usize,
    pub clusters_w: usize,
}

impl PhiSample {
    pub fn capture(state: &ChainState) -> Self {
        let part = |side: &NoiseSide| {
            side.process()
                .hyper()
                .map(|h| (h.alpha, h.base.niw().cloned()))
        };
        let (av, pv) = part(&state.v).unzip();
        let (aw, pw) = part(&state.w).unzip();
        Self {
            alpha_v: av,
            alpha_w: aw,
            psi_v: pv.flatten(),
            psi_w: pw.flatten(),
            clusters_v: state.v.registry().n_clusters(),
            clusters_w: state.w.registry().n_clusters(),
        }
    }
}

fn update_side_hyper(side: &mut NoiseSide, cfg: &SideHyper, prior: &AlphaPrior, rng: &mut RngStream) {
    let m = side.registry().n_clusters();
    let n = side.registry().n_assigned();
    let atoms = side.registry().distinct_atoms();
    let Some(h) = side.hyper_mut() else {
        return;
    };
    if cfg.sample_alpha {
        h.alpha = sample_alpha_mh(h.alpha, m, n, prior, rng).0;
    }
    if let (Some(pp), BaseMeasure::Niw(psi)) = (&cfg.psi_prior, &mut h.base) {
        *psi = sample_psi_mh(psi, &atoms, pp, rng).0;
    }
}

/// Refreshes the hyperparameters flagged as sampled; fixed ones are left
/// untouched.
pub fn sample_hyperparameters(state: &mut ChainState, hyper: &HyperParams, rng: &mut RngStream) -> PhiSample {
    update_side_hyper(&mut state.v, &hyper.v, &hyper.alpha_prior, rng);
    update_side_hyper(&mut state.w, &hyper.w, &hyper.alpha_prior, rng);
    PhiSample::capture(state)
}

/// Extra Gibbs blocks run after each cluster sweep, for model parameters
/// outside the noise processes.
pub trait AuxSampler {
    fn update(&mut self, state: &mut ChainState, observations: &[DVector<f64>], rng: &mut RngStream) -> Result<()>;

    /// Names of the scalar quantities recorded every iteration.
    fn names(&self) -> Vec<String>;

    fn values(&self, state: &ChainState) -> Vec<f64>;
}

/// Labels of both sides at one retained iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaSample {
    pub v: SideSnapshot,
    pub w: SideSnapshot,
}

/// Output of [`run_chain`].
#[derive(Debug, Clone)]
pub struct ChainTrace {
    pub burn_in: usize,
    pub retained: usize,
    /// Hyperparameters after every iteration, burn-in included.
    pub hyper_samples: Vec<PhiSample>,
    pub aux_names: Vec<String>,
    /// Auxiliary parameters after every iteration, burn-in included.
    pub aux_samples: Vec<Vec<f64>>,
    pub theta_samples: Vec<ThetaSample>,
    /// `x̂_{t|T}(θ^{(i)})` for `t = 0..=T`, one row per retained iteration.
    pub smoothed_means: Vec<Vec<DVector<f64>>>,
    smoothed_cov_sum: Vec<DMatrix<f64>>,
    theta_v_sum: Vec<(DVector<f64>, DMatrix<f64>)>,
    theta_w_sum: Vec<(DVector<f64>, DMatrix<f64>)>,
    /// Proposal counts summed over every iteration.
    pub acceptance: AcceptanceStats,
    /// Acceptance rate of each sweep.
    pub sweep_acceptance: Vec<f64>,
}

impl ChainTrace {
    /// `x̂^MMSE_{t|T} = (1/N) Σ_i x̂_{t|T}(θ^{(i)})`, `t = 0..=T`.
    pub fn mmse_states(&self) -> Result<Vec<DVector<f64>>> {
        let first = self.smoothed_means.first().ok_or(Error::EmptyTrace)?;
        let n = self.smoothed_means.len() as f64;
        let mut out: Vec<DVector<f64>> = first.iter().map(|m| DVector::zeros(m.len())).collect();
        for row in &self.smoothed_means {
            for (acc, m) in out.iter_mut().zip(row) {
                *acc += m;
            }
        }
        for m in &mut out {
            *m /= n;
        }
        Ok(out)
    }

    /// Posterior covariance of `x_t`: mean smoothed covariance plus the
    /// spread of the per-iteration smoothed means.
    pub fn state_covariances(&self) -> Result<Vec<DMatrix<f64>>> {
        let mean = self.mmse_states()?;
        let n = self.smoothed_means.len() as f64;
        let mut out: Vec<DMatrix<f64>> = self.smoothed_cov_sum.iter().map(|c| c / n).collect();
        for row in &self.smoothed_means {
            for ((acc, m), mu) in out.iter_mut().zip(row).zip(&mean) {
                let d = m - mu;
                *acc += &d * d.transpose() / n;
            }
        }
        Ok(out)
    }

    fn average(sums: &[(DVector<f64>, DMatrix<f64>)], n: usize) -> Vec<GaussianCluster> {
        sums.iter()
            .map(|(m, c)| GaussianCluster {
                mean: m / n as f64,
                cov: c / n as f64,
            })
            .collect()
    }

    /// `θ̂^{v,MMSE}_{t|T}` for `t = 1..=T`: averaged cluster mean and covariance.
    pub fn theta_v_mmse(&self) -> Vec<GaussianCluster> {
        Self::average(&self.theta_v_sum, self.smoothed_means.len())
    }

    pub fn theta_w_mmse(&self) -> Vec<GaussianCluster> {
        Self::average(&self.theta_w_sum, self.smoothed_means.len())
    }
}

/// Runs `burn_in + retained` sweeps from a prior draw of the labels.
pub fn run_chain(
    model: LinearGaussianModel,
    observations: &[DVector<f64>],
    v: NoiseProcess,
    w: NoiseProcess,
    config: &ChainConfig,
    aux: Option<&mut dyn AuxSampler>,
) -> Result<ChainTrace> {
    config.validate()?;
    let mut rng = RngStream::new(config.seed, 0);
    let mut state = ChainState::new(model, v, w, observations.len())?;
    state.init_from_prior(&mut rng);
    run_chain_from(state, observations, config, aux, &mut rng)
}

/// Runs the chain from a given labelled state.
pub fn run_chain_from(
    mut state: ChainState,
    observations: &[DVector<f64>],
    config: &ChainConfig,
    mut aux: Option<&mut dyn AuxSampler>,
    rng: &mut RngStream,
) -> Result<ChainTrace> {
    config.validate()?;
    let horizon = state.horizon();
    let dims = state.model.dims();
    let total = config.burn_in + config.retained;
    let mut trace = ChainTrace {
        burn_in: config.burn_in,
        retained: config.retained,
        hyper_samples: Vec::with_capacity(total),
        aux_names: aux.as_ref().map(|a| a.names()).unwrap_or_default(),
        aux_samples: Vec::with_capacity(total),
        theta_samples: Vec::with_capacity(config.retained),
        smoothed_means: Vec::with_capacity(config.retained),
        smoothed_cov_sum: vec![DMatrix::zeros(dims.n_x, dims.n_x); horizon + 1],
        theta_v_sum: vec![(DVector::zeros(dims.n_v), DMatrix::zeros(dims.n_v, dims.n_v)); horizon],
        theta_w_sum: vec![(DVector::zeros(dims.n_z), DMatrix::zeros(dims.n_z, dims.n_z)); horizon],
        acceptance: AcceptanceStats::new(horizon),
        sweep_acceptance: Vec::with_capacity(total),
    };

    for iter in 0..total {
        let stats = gibbs_sweep(&mut state, observations, config.scheme, rng)?;
        trace.acceptance.merge(&stats);
        trace.sweep_acceptance.push(stats.rate());
        trace
            .hyper_samples
            .push(sample_hyperparameters(&mut state, &config.hyper, rng));
        if let Some(a) = aux.as_deref_mut() {
            a.update(&mut state, observations, rng)?;
            trace.aux_samples.push(a.values(&state));
        }
        if iter >= config.burn_in {
            let thetas = state.thetas();
            let sm = kalman_smoother(&state.model, &thetas, observations)?;
            for (acc, s) in trace.smoothed_cov_sum.iter_mut().zip(&sm) {
                *acc += &s.cov;
            }
            trace.smoothed_means.push(sm.into_iter().map(|s| s.mean).collect());
            for (i, th) in thetas.iter().enumerate() {
                trace.theta_v_sum[i].0 += &th.v.mean;
                trace.theta_v_sum[i].1 += &th.v.cov;
                trace.theta_w_sum[i].0 += &th.w.mean;
                trace.theta_w_sum[i].1 += &th.w.cov;
            }
            trace.theta_samples.push(ThetaSample {
                v: state.v.snapshot(),
                w: state.w.snapshot(),
            });
        }
    }
    Ok(trace)
}

/// Fraction of retained iterations in which step `t` uses a non-spike
/// v-side cluster, for `t = 1..=T`.
pub fn nonspike_frequency(trace: &ChainTrace) -> Result<Vec<f64>> {
    let first = trace.theta_samples.first().ok_or(Error::EmptyTrace)?;
    let n = trace.theta_samples.len() as f64;
    let mut out = vec![0.0; first.v.labels.len()];
    for s in &trace.theta_samples {
        for (acc, l) in out.iter_mut().zip(&s.v.labels) {
            if *l != crate::noise::Label::Spike {
                *acc += 1.0;
            }
        }
    }
    for x in &mut out {
        *x /= n;
    }
    Ok(out)
}
