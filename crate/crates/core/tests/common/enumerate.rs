//! Exhaustive enumeration over cluster sequences when the v-side DP has a
//! discrete base measure and the w-side is fixed.

use dpmss::statespace::{kalman_smoother, kalman_step, KalmanBelief, LinearGaussianModel, NoisePair};
use dpmss::GaussianCluster;
use nalgebra::DVector;

pub struct DiscreteToy {
    pub model: LinearGaussianModel,
    pub atoms: Vec<GaussianCluster>,
    pub probs: Vec<f64>,
    pub alpha: f64,
    pub w: GaussianCluster,
    pub z: Vec<DVector<f64>>,
}

/// Exact filtering and fixed-lag quantities for every `t = 1..=T`.
pub struct Enumerated {
    /// `p(θ_t = atom k | z_{1:t})`.
    pub filter_probs: Vec<Vec<f64>>,
    /// `E(x_t | z_{1:t})`.
    pub filter_means: Vec<DVector<f64>>,
    /// `p(θ_s = atom k | z_{1:min(s+lag, T)})` for `s = 1..=T`.
    pub lag_probs: Vec<Vec<f64>>,
    /// `E(x_s | z_{1:min(s+lag, T)})` for `s = 1..=T`; filled only when
    /// `smooth` was requested.
    pub lag_means: Vec<DVector<f64>>,
}

struct Acc {
    probs: Vec<Vec<f64>>,
    means: Vec<DVector<f64>>,
    totals: Vec<f64>,
}

impl Acc {
    fn new(big_t: usize, k: usize, n_x: usize) -> Self {
        Self {
            probs: vec![vec![0.0; k]; big_t],
            means: vec![DVector::zeros(n_x); big_t],
            totals: vec![0.0; big_t],
        }
    }

    fn finish(mut self) -> (Vec<Vec<f64>>, Vec<DVector<f64>>) {
        for (t, total) in self.totals.iter().enumerate() {
            if *total > 0.0 {
                self.probs[t].iter_mut().for_each(|p| *p /= total);
                self.means[t] /= *total;
            }
        }
        (self.probs, self.means)
    }
}

struct Walker<'a> {
    toy: &'a DiscreteToy,
    lag: usize,
    smooth: bool,
    path: Vec<usize>,
    counts: Vec<usize>,
    filter: Acc,
    lagged: Acc,
}

impl Walker<'_> {
    fn pairs(&self) -> Vec<NoisePair> {
        self.path
            .iter()
            .map(|&k| NoisePair::new(self.toy.atoms[k].clone(), self.toy.w.clone()))
            .collect()
    }

    fn record_lag(&mut self, s: usize, weight: f64) {
        let d = self.path.len();
        self.lagged.totals[s - 1] += weight;
        self.lagged.probs[s - 1][self.path[s - 1]] += weight;
        if self.smooth {
            let sm = kalman_smoother(&self.toy.model, &self.pairs(), &self.toy.z[..d]).unwrap();
            self.lagged.means[s - 1] += &sm[s].mean * weight;
        }
    }

    fn visit(&mut self, belief: &KalmanBelief, log_weight: f64) {
        let d = self.path.len();
        let big_t = self.toy.z.len();
        if d > 0 {
            let weight = log_weight.exp();
            self.filter.totals[d - 1] += weight;
            self.filter.probs[d - 1][self.path[d - 1]] += weight;
            self.filter.means[d - 1] += &belief.mean * weight;
            if d > self.lag {
                self.record_lag(d - self.lag, weight);
            }
            if d == big_t {
                for s in (big_t + 1).saturating_sub(self.lag).max(1)..=big_t {
                    self.record_lag(s, weight);
                }
                return;
            }
        }
        let n = d as f64;
        for k in 0..self.toy.atoms.len() {
            let prior = (self.counts[k] as f64 + self.toy.alpha * self.toy.probs[k]) / (n + self.toy.alpha);
            let pair = NoisePair::new(self.toy.atoms[k].clone(), self.toy.w.clone());
            let next = kalman_step(&self.toy.model, d + 1, belief, &pair, &self.toy.z[d]).unwrap();
            let lw = log_weight + prior.ln() + next.loglik_increment;
            self.path.push(k);
            self.counts[k] += 1;
            self.visit(&next, lw);
            self.counts[k] -= 1;
            self.path.pop();
        }
    }
}

pub fn enumerate(toy: &DiscreteToy, lag: usize, smooth: bool) -> Enumerated {
    let big_t = toy.z.len();
    let k = toy.atoms.len();
    let n_x = toy.model.dims().n_x;
    let mut walker = Walker {
        toy,
        lag,
        smooth,
        path: Vec::with_capacity(big_t),
        counts: vec![0; k],
        filter: Acc::new(big_t, k, n_x),
        lagged: Acc::new(big_t, k, n_x),
    };
    walker.visit(&KalmanBelief::initial(&toy.model), 0.0);
    let (filter_probs, filter_means) = walker.filter.finish();
    let (lag_probs, lag_means) = walker.lagged.finish();
    Enumerated {
        filter_probs,
        filter_means,
        lag_probs,
        lag_means,
    }
}
