use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Result};
use crate::gaussian::RngStream;

/// Gamma prior `α ~ G(η/2, ν/2)` (shape, rate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaPrior {
    pub eta: f64,
    pub nu: f64,
}

impl AlphaPrior {
    pub fn new(eta: f64, nu: f64) -> Result<Self> {
        if !(eta > 0.0 && nu > 0.0) {
            return Err(invalid("alpha prior parameters must be positive"));
        }
        Ok(Self { eta, nu })
    }

    pub fn shape(&self) -> f64 {
        0.5 * self.eta
    }

    pub fn rate(&self) -> f64 {
        0.5 * self.nu
    }

    pub fn mean(&self) -> f64 {
        self.eta / self.nu
    }

    pub fn log_density(&self, alpha: f64) -> f64 {
        if alpha <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let (a, b) = (self.shape(), self.rate());
        a * b.ln() - ln_gamma(a) + (a - 1.0) * alpha.ln() - b * alpha
    }

    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        Gamma::new(self.shape(), 1.0 / self.rate())
            .expect("validated parameters")
            .sample(rng)
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn stirling_cache() -> &'static Mutex<HashMap<usize, Arc<Vec<f64>>>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Vec<f64>>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// `log |s(n, k)|` for `k = 1..=n` (element `k − 1`), unsigned Stirling
/// numbers of the first kind. Rows are cached per `n`.
pub fn stirling_first_kind_log(n: usize) -> Result<Arc<Vec<f64>>> {
    if n == 0 {
        return Err(invalid("Stirling table needs n >= 1"));
    }
    if let Some(row) = stirling_cache().lock().expect("cache lock").get(&n) {
        return Ok(row.clone());
    }
    // row[k] = log|s(m, k)| for k = 0..=m, built up from m = 1.
    let mut row = vec![f64::NEG_INFINITY, 0.0];
    for m in 1..n {
        let ln_m = (m as f64).ln();
        let mut next = vec![f64::NEG_INFINITY; m + 2];
        for k in 1..=m + 1 {
            let carry = row[k - 1];
            let stay = if k <= m { ln_m + row[k] } else { f64::NEG_INFINITY };
            next[k] = log_add(carry, stay);
        }
        row = next;
    }
    let out = Arc::new(row[1..].to_vec());
    stirling_cache()
        .lock()
        .expect("cache lock")
        .insert(n, out.clone());
    Ok(out)
}

/// `log p(M | α, n)`: `log |s(n,M)| α^M / Σ_k |s(n,k)| α^k`.
///
/// An empty urn (`n = 0`) carries no information about `α`.
pub fn alpha_log_likelihood(alpha: f64, m: usize, n: usize) -> f64 {
    if n == 0 {
        return if m == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if m == 0 || m > n || !(alpha > 0.0) {
        return f64::NEG_INFINITY;
    }
    let row = stirling_first_kind_log(n).expect("n >= 1");
    let ln_a = alpha.ln();
    let terms: Vec<f64> = row
        .iter()
        .enumerate()
        .map(|(k, s)| s + (k + 1) as f64 * ln_a)
        .collect();
    let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let denom = top + terms.iter().map(|x| (x - top).exp()).sum::<f64>().ln();
    terms[m - 1] - denom
}

/// Unnormalized log posterior of `α` given `M` clusters among `n` members;
/// `prior = None` is a flat prior.
pub fn alpha_log_posterior(alpha: f64, m: usize, n: usize, prior: Option<&AlphaPrior>) -> f64 {
    alpha_log_likelihood(alpha, m, n) + prior.map_or(0.0, |p| p.log_density(alpha))
}

/// Acceptance probability of moving `current → proposal` when the proposal
/// is drawn from the prior, so only the likelihood ratio remains.
pub fn alpha_acceptance_prob(current: f64, proposal: f64, m: usize, n: usize) -> f64 {
    let diff = alpha_log_likelihood(proposal, m, n) - alpha_log_likelihood(current, m, n);
    if diff.is_nan() {
        return 0.0;
    }
    diff.exp().min(1.0)
}

/// One Metropolis-Hastings step for `α` with a prior proposal. Returns the
/// new value and whether the proposal was accepted.
pub fn sample_alpha_mh(current: f64, m: usize, n: usize, prior: &AlphaPrior, rng: &mut RngStream) -> (f64, bool) {
    let proposal = prior.sample(rng);
    let rho = alpha_acceptance_prob(current, proposal, m, n);
    if rng.uniform() < rho {
        (proposal, true)
    } else {
        (current, false)
    }
}

/// Large-`n` approximation `α log(1 + n/α)` of the expected cluster count.
pub fn antoniak_expected_clusters(alpha: f64, n: usize) -> f64 {
    alpha * (1.0 + n as f64 / alpha).ln()
}

/// Exact expected cluster count `Σ_{k<n} α/(α+k)` of a sequential urn.
pub fn exact_expected_clusters(alpha: f64, n: usize) -> f64 {
    (0..n).map(|k| alpha / (alpha + k as f64)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rising_log(alpha: f64, n: usize) -> f64 {
        (0..n).map(|i| (alpha + i as f64).ln()).sum()
    }

    #[test]
    fn small_stirling_values() {
        let row = stirling_first_kind_log(3).unwrap();
        assert_eq!(row.len(), 3);
        assert!((row[2] - 0.0).abs() < 1e-15);
        assert!((row[0] - 2f64.ln()).abs() < 1e-15);
        assert!((row[1] - 3f64.ln()).abs() < 1e-15);
        let sum: f64 = row.iter().map(|x| x.exp()).sum();
        assert!((sum - 6.0).abs() < 1e-12);
        assert!(stirling_first_kind_log(0).is_err());
    }

    #[test]
    fn rising_factorial_identity() {
        for n in [1usize, 2, 7, 50, 200] {
            let row = stirling_first_kind_log(n).unwrap();
            for alpha in [0.5, 1.0, 2.0] {
                let terms: Vec<f64> = row
                    .iter()
                    .enumerate()
                    .map(|(k, s)| s + (k + 1) as f64 * f64::ln(alpha))
                    .collect();
                let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = top + terms.iter().map(|x| (x - top).exp()).sum::<f64>().ln();
                let exact = rising_log(alpha, n);
                assert!(((lse - exact) / exact.abs().max(1.0)).abs() < 1e-10, "n={n} α={alpha}");
            }
        }
    }

    #[test]
    fn posterior_closed_form() {
        let v = alpha_log_posterior(1.0, 3, 3, None);
        assert!((v - (1.0f64 / 6.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn full_occupancy_is_increasing() {
        let mut prev = f64::NEG_INFINITY;
        for i in 1..200 {
            let a = 0.05 * i as f64;
            let v = alpha_log_posterior(a, 10, 10, None);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn identical_proposal_accepted() {
        assert_eq!(alpha_acceptance_prob(1.7, 1.7, 3, 10), 1.0);
    }

    #[test]
    fn antoniak_values() {
        assert!((antoniak_expected_clusters(1.0, 100) - 101f64.ln()).abs() < 1e-12);
        let big = antoniak_expected_clusters(1e9, 100);
        assert!((big - 100.0).abs() < 1e-3);
        assert!((exact_expected_clusters(1.0, 3) - (1.0 + 0.5 + 1.0 / 3.0)).abs() < 1e-12);
    }
}
