use std::sync::Arc;

use rand_distr::{Beta, Distribution};

use super::{antoniak_expected_clusters, DpHyper};
use crate::gaussian::{GaussianCluster, RngStream};

/// A truncated stick-breaking realization of `G ~ DP(α, G₀)`.
#[derive(Debug, Clone)]
pub struct StickBreaking {
    pub weights: Vec<f64>,
    pub atoms: Vec<Arc<GaussianCluster>>,
    /// Mass `1 − Σ π_j` beyond the truncation.
    pub residual: f64,
}

/// Truncation level `⌈α log(1 + n/α)⌉ + 50`.
pub fn default_truncation(alpha: f64, n: usize) -> usize {
    antoniak_expected_clusters(alpha, n).ceil() as usize + 50
}

/// `π_j = β_j ∏_{l<j} (1 − β_l)` with `β_j ~ Beta(1, α)` and atoms drawn
/// i.i.d. from the base measure.
pub fn stick_breaking(hyper: &DpHyper, truncation: usize, rng: &mut RngStream) -> StickBreaking {
    let beta = Beta::new(1.0, hyper.alpha).expect("positive alpha");
    let mut remaining = 1.0;
    let mut weights = Vec::with_capacity(truncation);
    let mut atoms = Vec::with_capacity(truncation);
    for _ in 0..truncation.max(1) {
        let b: f64 = beta.sample(rng);
        weights.push(remaining * b);
        remaining *= 1.0 - b;
        atoms.push(hyper.base.sample(rng));
    }
    StickBreaking {
        weights,
        atoms,
        residual: remaining,
    }
}
