//! Posterior predictive density of a DPM noise side on a grid.

use crate::error::{invalid, Error, Result};
use crate::gaussian::{sample_niw, GaussianCluster, RngStream};
use crate::mcmc::ChainTrace;

fn normal_pdf(y: f64, c: &GaussianCluster) -> f64 {
    let var = c.cov[(0, 0)];
    let d = y - c.mean[0];
    (-0.5 * d * d / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// `F̂^v(y)` averaged over retained iterations: each iteration contributes
/// `[Σ_k n_k N(y; θ_k) + α g₀(y)] / (T′ + α)`, where the sum runs over the
/// non-spike clusters and `g₀` is the base predictive estimated from
/// `base_draws` NIW samples. Multivariate clusters use their first
/// coordinate.
pub fn density_grid(trace: &ChainTrace, grid: &[f64], base_draws: usize, seed: u64) -> Result<Vec<f64>> {
    if trace.theta_samples.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let mut rng = RngStream::new(seed, 0xDE);
    let mut out = vec![0.0; grid.len()];
    for sample in &trace.theta_samples {
        let urn = sample
            .v
            .urn
            .as_ref()
            .ok_or_else(|| invalid("density grid needs a DPM state-noise side"))?;
        let n_prime = urn.n_assigned() as f64;
        let norm = n_prime + urn.alpha;
        let fresh: Vec<GaussianCluster> = match (&urn.base, base_draws) {
            (Some(psi), k) if k > 0 => (0..k).map(|_| sample_niw(psi, &mut rng)).collect(),
            _ => Vec::new(),
        };
        for (acc, &y) in out.iter_mut().zip(grid) {
            let mut d: f64 = urn.atoms.iter().map(|(_, c, n)| *n as f64 * normal_pdf(y, c)).sum();
            if !fresh.is_empty() {
                let g0 = fresh.iter().map(|c| normal_pdf(y, c)).sum::<f64>() / fresh.len() as f64;
                d += urn.alpha * g0;
            }
            *acc += d / norm;
        }
    }
    let n = trace.theta_samples.len() as f64;
    out.iter_mut().for_each(|x| *x /= n);
    Ok(out)
}
