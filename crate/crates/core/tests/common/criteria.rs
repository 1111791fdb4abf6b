//! Measurements shared by the unit-level tests and the acceptance report.
//! Each function returns the measured quantity; callers apply tolerances.

use std::sync::Arc;

use dpmss::dpm::{
    alpha_log_posterior, exact_expected_clusters, sample_alpha_mh, stick_breaking, stirling_first_kind_log,
    BaseMeasure, DpHyper,
};
use dpmss::mcmc::{mh_accept_prob, ChainState};
use dpmss::noise::{Choice, NoiseProcess, NoiseSide};
use dpmss::rbpf::{rbpf_init, rbpf_step, RbpfConfig};
use dpmss::statespace::{
    backward_info_recursion, combined_loglik_at, kalman_filter, kalman_loglik, kalman_step, NoisePair,
};
use dpmss::{AlphaPrior, GaussianCluster, LinearGaussianModel, RngStream};
use nalgebra::{DMatrix, DVector};

use super::enumerate::{enumerate, DiscreteToy};
use super::{
    dense_backward_info, max_abs_diff, max_abs_diff_vec, random_cluster, random_instance, random_w_cluster,
    RandomInstance,
};

fn sc(m: f64, v: f64) -> GaussianCluster {
    GaussianCluster::scalar(m, v).unwrap()
}

pub fn scalar_model(f: f64) -> LinearGaussianModel {
    LinearGaussianModel::time_invariant(
        DMatrix::from_element(1, 1, f),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 1.0),
        DVector::zeros(1),
        DMatrix::from_element(1, 1, 1.0),
    )
    .unwrap()
}

/// Largest errors of the backward recursion against the dense oracle and of
/// combined-likelihood differences against direct Kalman likelihoods, over
/// `n_models` random models with `n_x ≤ 3`, `n_z ≤ 2`, `T ≤ 10`.
pub struct BackwardErrors {
    /// `|computed − oracle| / (1 + |oracle|)`, maximized over entries.
    pub info: f64,
    /// `|diff − direct| / (1 + max(|diff|, |direct|))`.
    pub combined: f64,
}

fn combined_at(inst: &RandomInstance, t: usize, cand: &NoisePair) -> f64 {
    let mut thetas = inst.thetas.clone();
    thetas[t - 1] = cand.clone();
    let filt = kalman_filter(&inst.model, &thetas[..t - 1], &inst.obs[..t - 1]).unwrap();
    let pass = backward_info_recursion(&inst.model, &thetas, &inst.obs).unwrap();
    let b = kalman_step(&inst.model, t, filt.last().unwrap(), cand, &inst.obs[t - 1]).unwrap();
    combined_loglik_at(&b, pass.predicted(t))
}

pub fn backward_errors(n_models: usize, seed: u64) -> BackwardErrors {
    let mut rng = RngStream::new(seed, 0);
    let mut info = 0.0_f64;
    let mut combined = 0.0_f64;
    for _ in 0..n_models {
        let inst = random_instance(&mut rng, 3, 2, 10);
        let pass = backward_info_recursion(&inst.model, &inst.thetas, &inst.obs).unwrap();
        for s in 0..=inst.obs.len() {
            let (jm, jv) = dense_backward_info(&inst.model, &inst.thetas, &inst.obs, s);
            let got = pass.predicted(s);
            let scale = 1.0 + jm.amax() + jv.amax();
            info = info.max(max_abs_diff(&got.info_mat, &jm) / scale);
            info = info.max(max_abs_diff_vec(&got.info_vec, &jv) / scale);
        }
        let nv = inst.model.dims().n_v;
        let nz = inst.model.dims().n_z;
        for t in 1..=inst.obs.len() {
            let r1 = (rng.uniform() * (nv + 1) as f64) as usize;
            let r2 = (rng.uniform() * (nv + 1) as f64) as usize;
            let a = NoisePair::new(random_cluster(nv, r1.min(nv), &mut rng), random_w_cluster(nz, &mut rng));
            let b = NoisePair::new(random_cluster(nv, r2.min(nv), &mut rng), random_w_cluster(nz, &mut rng));
            let diff = combined_at(&inst, t, &a) - combined_at(&inst, t, &b);
            let mut ta = inst.thetas.clone();
            ta[t - 1] = a;
            let mut tb = inst.thetas.clone();
            tb[t - 1] = b;
            let direct = kalman_loglik(&inst.model, &ta, &inst.obs).unwrap()
                - kalman_loglik(&inst.model, &tb, &inst.obs).unwrap();
            combined = combined.max((diff - direct).abs() / (1.0 + diff.abs().max(direct.abs())));
        }
    }
    BackwardErrors { info, combined }
}

/// Two scalar atoms, a DP with a discrete base measure over them, and two
/// observations.
pub fn toy() -> DiscreteToy {
    DiscreteToy {
        model: scalar_model(0.6),
        atoms: vec![sc(-1.0, 0.5), sc(1.5, 1.0)],
        probs: vec![0.4, 0.6],
        alpha: 1.3,
        w: sc(0.0, 0.5),
        z: vec![DVector::from_element(1, 0.4), DVector::from_element(1, 1.9)],
    }
}

pub fn toy_process(toy: &DiscreteToy) -> NoiseProcess {
    let base = BaseMeasure::discrete(toy.atoms.clone(), toy.probs.clone()).unwrap();
    NoiseProcess::Dpm(DpHyper::new(toy.alpha, base).unwrap())
}

pub fn value_index(toy: &DiscreteToy, c: &GaussianCluster) -> usize {
    toy.atoms.iter().position(|a| a == c).unwrap()
}

pub fn loglik(toy: &DiscreteToy, cfg: [usize; 2]) -> f64 {
    let thetas: Vec<NoisePair> = cfg
        .iter()
        .map(|&k| NoisePair::new(toy.atoms[k].clone(), toy.w.clone()))
        .collect();
    kalman_loglik(&toy.model, &thetas, &toy.z).unwrap()
}

/// Exact posterior over the four value configurations `(θ_1, θ_2)`, indexed
/// `2a + b`.
pub fn posterior(toy: &DiscreteToy) -> [f64; 4] {
    let mut p = [0.0; 4];
    for a in 0..2 {
        for b in 0..2 {
            let prior = toy.probs[a] * (f64::from(u8::from(a == b)) + toy.alpha * toy.probs[b]) / (1.0 + toy.alpha);
            p[2 * a + b] = prior * loglik(toy, [a, b]).exp();
        }
    }
    let s: f64 = p.iter().sum();
    p.map(|x| x / s)
}

pub fn state_for(toy: &DiscreteToy, cfg: [usize; 2]) -> ChainState {
    let mut st = ChainState::new(toy.model.clone(), toy_process(toy), NoiseProcess::fixed(toy.w.clone()), 2).unwrap();
    let mut rng = RngStream::new(0, 0);
    for (i, &k) in cfg.iter().enumerate() {
        let mut p = st.v.realize(Choice::Fresh, &mut rng);
        p.cluster = Arc::new(toy.atoms[k].clone());
        st.v.set(i, &p);
        let pw = st.w.realize(Choice::Fixed, &mut rng);
        st.w.set(i, &pw);
    }
    st
}

/// Value-level transition probabilities of one site update, built from the
/// sampler's own conditional weights and acceptance rule.
pub fn site_kernel(toy: &DiscreteToy, cfg: [usize; 2], site: usize) -> [f64; 2] {
    let st = state_for(toy, cfg);
    let cond = st.v.conditional(Some(site));
    let mut q = [0.0; 2];
    for &(choice, w) in &cond.entries {
        match choice {
            Choice::Existing(id) => q[value_index(toy, st.v.registry().atom(id).unwrap())] += w,
            Choice::Fresh => {
                for (k, qk) in q.iter_mut().enumerate() {
                    *qk += w * toy.probs[k];
                }
            }
            other => panic!("unexpected {other:?}"),
        }
    }
    let cur = loglik(toy, cfg);
    let mut out = [0.0; 2];
    let mut stay = 1.0;
    for k in 0..2 {
        let mut next = cfg;
        next[site] = k;
        let move_p = q[k] * mh_accept_prob(cur, loglik(toy, next));
        out[k] += move_p;
        stay -= move_p;
    }
    out[cfg[site]] += stay;
    out
}

/// Transition matrix of one full sweep over the four configurations.
pub fn sweep_matrix(toy: &DiscreteToy) -> DMatrix<f64> {
    let mut sweep = DMatrix::zeros(4, 4);
    for s in 0..4 {
        let cfg = [s / 2, s % 2];
        let k1 = site_kernel(toy, cfg, 0);
        for (a, p1) in k1.iter().enumerate() {
            let k2 = site_kernel(toy, [a, cfg[1]], 1);
            for (b, p2) in k2.iter().enumerate() {
                sweep[(s, 2 * a + b)] += p1 * p2;
            }
        }
    }
    sweep
}

/// Stationary law of a row-stochastic matrix: solves `π (K − I) = 0` with
/// `Σ π = 1`.
pub fn stationary_law(k: &DMatrix<f64>) -> DVector<f64> {
    let n = k.nrows();
    let mut a = k.transpose() - DMatrix::identity(n, n);
    let mut rhs = DVector::zeros(n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    rhs[n - 1] = 1.0;
    a.lu().solve(&rhs).expect("irreducible chain")
}

/// Largest total variation between the particle filter's law of `θ_t` and
/// the enumerated filtering law over `t = 1..=T`.
pub fn rbpf_filter_tv(toy: &DiscreteToy, n_particles: usize, seed: u64) -> f64 {
    let exact = enumerate(toy, 0, false);
    let cfg = RbpfConfig::new(n_particles, seed);
    let mut ens = rbpf_init(&toy.model, toy_process(toy), NoiseProcess::fixed(toy.w.clone()), &cfg).unwrap();
    let mut worst = 0.0_f64;
    for (t, z) in toy.z.iter().enumerate() {
        rbpf_step(&mut ens, &toy.model, z).unwrap();
        let mut p = vec![0.0; toy.atoms.len()];
        for (part, w) in ens.particles().iter().zip(ens.weights()) {
            p[value_index(toy, &part.last_theta().unwrap().v)] += w;
        }
        let tv = 0.5 * p.iter().zip(&exact.filter_probs[t]).map(|(a, b)| (a - b).abs()).sum::<f64>();
        worst = worst.max(tv);
    }
    worst
}

/// Monte Carlo moments of `G(A)` under stick-breaking, where `A` holds the
/// first of two base atoms with base mass `p`.
pub struct StickMoments {
    pub mean: f64,
    pub mean_target: f64,
    pub mean_se: f64,
    pub var: f64,
    pub var_target: f64,
    pub var_se: f64,
}

pub fn stick_moments(alpha: f64, p: f64, draws: usize, truncation: usize, seed: u64) -> StickMoments {
    let atoms = vec![sc(-1.0, 1.0), sc(1.0, 1.0)];
    let base = BaseMeasure::discrete(atoms.clone(), vec![p, 1.0 - p]).unwrap();
    let hyper = DpHyper::new(alpha, base).unwrap();
    let mut rng = RngStream::new(seed, 0);
    let xs: Vec<f64> = (0..draws)
        .map(|_| {
            let sb = stick_breaking(&hyper, truncation, &mut rng);
            sb.weights
                .iter()
                .zip(&sb.atoms)
                .filter(|(_, a)| ***a == atoms[0])
                .map(|(w, _)| w)
                .sum::<f64>()
        })
        .collect();
    let n = draws as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    StickMoments {
        mean,
        mean_target: p,
        mean_se: (var / n).sqrt(),
        var,
        var_target: p * (1.0 - p) / (alpha + 1.0),
        var_se: ((m4 - var * var) / n).sqrt(),
    }
}

/// Average number of distinct clusters after `n` sequential urn draws.
pub fn urn_mean_clusters(alpha: f64, n: usize, reps: usize, seed: u64) -> f64 {
    let base = BaseMeasure::discrete(vec![sc(0.0, 1.0)], vec![1.0]).unwrap();
    let process = NoiseProcess::Dpm(DpHyper::new(alpha, base).unwrap());
    let mut rng = RngStream::new(seed, 0);
    let mut total = 0usize;
    for _ in 0..reps {
        let mut side = NoiseSide::sequential(process.clone());
        for _ in 0..n {
            let p = side.sample(&side.conditional(None), &mut rng);
            side.push(&p);
        }
        total += side.registry().n_clusters();
    }
    total as f64 / reps as f64
}

pub fn exact_clusters(alpha: f64, n: usize) -> f64 {
    exact_expected_clusters(alpha, n)
}

/// Largest relative error of `log Σ_k |s(n,k)| α^k` against the log rising
/// factorial, over `n = 1..=n_max` and a few `α`.
pub fn stirling_max_error(n_max: usize) -> f64 {
    let mut worst = 0.0_f64;
    for n in 1..=n_max {
        let row = stirling_first_kind_log(n).unwrap();
        for alpha in [0.1_f64, 0.5, 1.0, 2.0, 10.0] {
            let terms: Vec<f64> = row.iter().enumerate().map(|(k, s)| s + (k + 1) as f64 * alpha.ln()).collect();
            let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = top + terms.iter().map(|x| (x - top).exp()).sum::<f64>().ln();
            let exact: f64 = (0..n).map(|i| (alpha + i as f64).ln()).sum();
            worst = worst.max((lse - exact).abs() / exact.abs().max(1.0));
        }
    }
    worst
}

/// Total variation between the MH chain for `α` (given `M` clusters among
/// `n`) and a grid quadrature of its posterior, on a common binning.
pub fn alpha_mh_tv(m: usize, n: usize, prior: &AlphaPrior, iters: usize, seed: u64) -> f64 {
    let (lo, hi, bins) = (0.0, 15.0, 60);
    let width = (hi - lo) / bins as f64;
    let fine = 200;
    let mut exact = vec![0.0; bins];
    for (b, e) in exact.iter_mut().enumerate() {
        for j in 0..fine {
            let a = lo + width * (b as f64 + (j as f64 + 0.5) / fine as f64);
            *e += alpha_log_posterior(a, m, n, Some(prior)).exp();
        }
    }
    let tail: f64 = {
        let mut acc = 0.0;
        let dx = width / fine as f64;
        let mut a = hi + 0.5 * dx;
        while a < hi + 200.0 {
            acc += alpha_log_posterior(a, m, n, Some(prior)).exp();
            a += dx;
        }
        acc
    };
    let z: f64 = exact.iter().sum::<f64>() + tail;
    let mut rng = RngStream::new(seed, 0);
    let mut alpha = prior.mean();
    let mut counts = vec![0usize; bins];
    let mut outside = 0usize;
    for _ in 0..iters {
        alpha = sample_alpha_mh(alpha, m, n, prior, &mut rng).0;
        let b = ((alpha - lo) / width) as usize;
        if b < bins {
            counts[b] += 1;
        } else {
            outside += 1;
        }
    }
    let it = iters as f64;
    0.5 * (exact.iter().zip(&counts).map(|(e, c)| (e / z - *c as f64 / it).abs()).sum::<f64>()
        + (tail / z - outside as f64 / it).abs())
}
