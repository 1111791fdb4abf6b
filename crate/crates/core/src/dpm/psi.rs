use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gaussian::{niw_logpdf, sample_wishart, sample_with_factor, GaussianCluster, NiwParams, RngStream};
use crate::linalg::{pivoted_cholesky, symmetrize};

/// Prior `p₀(ψ)` over the base-measure hyperparameters, factorized as a
/// Gaussian on `μ₀`, a log-normal on `κ₀`, an exponential on `ν₀ − (d − 1)`
/// and a Wishart on `Λ₀⁻¹`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiPrior {
    pub mu_mean: DVector<f64>,
    pub mu_cov: DMatrix<f64>,
    pub log_kappa_mean: f64,
    pub log_kappa_sd: f64,
    pub nu_excess_rate: f64,
    pub lambda_inv_dof: f64,
    pub lambda_inv_scale: DMatrix<f64>,
}

impl PsiPrior {
    pub fn dim(&self) -> usize {
        self.mu_mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.mu_cov.shape() != (d, d) || self.lambda_inv_scale.shape() != (d, d) {
            return Err(invalid("psi prior matrices must match the mean dimension"));
        }
        if !(self.log_kappa_sd >= 0.0 && self.nu_excess_rate > 0.0 && self.lambda_inv_dof > d as f64 - 1.0) {
            return Err(invalid("psi prior: need log_kappa_sd >= 0, nu_excess_rate > 0, lambda_inv_dof > d - 1"));
        }
        if self.lambda_inv_scale.clone().cholesky().is_none() {
            return Err(invalid("psi prior: lambda_inv_scale must be positive definite"));
        }
        Ok(())
    }
}

/// One draw of `ψ = (μ₀, κ₀, ν₀, Λ₀)` from `p₀`.
pub fn sample_psi_prior(prior: &PsiPrior, rng: &mut RngStream) -> NiwParams {
    let d = prior.dim();
    let mu0 = sample_with_factor(&prior.mu_mean, &pivoted_cholesky(&prior.mu_cov, 1e-14), rng);
    let kappa0 = (prior.log_kappa_mean + prior.log_kappa_sd * rng.standard_normal()).exp();
    let excess: f64 = Exp::new(prior.nu_excess_rate).expect("validated rate").sample(rng);
    let nu0 = d as f64 - 1.0 + excess.max(f64::MIN_POSITIVE);
    let scale_chol = prior
        .lambda_inv_scale
        .clone()
        .cholesky()
        .expect("validated scale")
        .l();
    let lambda_inv = sample_wishart(prior.lambda_inv_dof, &scale_chol, rng);
    let mut lambda0 = lambda_inv
        .cholesky()
        .map(|c| c.inverse())
        .unwrap_or_else(|| DMatrix::identity(d, d));
    symmetrize(&mut lambda0);
    NiwParams::new(mu0, kappa0, nu0, lambda0).unwrap_or_else(|_| NiwParams {
        mu0: prior.mu_mean.clone(),
        kappa0: kappa0.max(f64::MIN_POSITIVE),
        nu0,
        lambda0: DMatrix::identity(d, d),
    })
}

fn log_base_likelihood(psi: &NiwParams, atoms: &[Arc<GaussianCluster>]) -> f64 {
    atoms
        .iter()
        .map(|a| niw_logpdf(a, psi).unwrap_or(f64::NEG_INFINITY))
        .sum()
}

/// `min(1, ∏_k G₀(θ'_k | ψ*) / ∏_k G₀(θ'_k | ψ))` over the distinct atoms.
pub fn psi_acceptance_prob(current: &NiwParams, proposal: &NiwParams, atoms: &[Arc<GaussianCluster>]) -> f64 {
    if atoms.is_empty() {
        return 1.0;
    }
    let diff = log_base_likelihood(proposal, atoms) - log_base_likelihood(current, atoms);
    if diff.is_nan() {
        return 0.0;
    }
    diff.exp().min(1.0)
}

/// One Metropolis-Hastings step for `ψ` with a `p₀` proposal.
pub fn sample_psi_mh(
    current: &NiwParams,
    atoms: &[Arc<GaussianCluster>],
    prior: &PsiPrior,
    rng: &mut RngStream,
) -> (NiwParams, bool) {
    let proposal = sample_psi_prior(prior, rng);
    let rho = psi_acceptance_prob(current, &proposal, atoms);
    if rng.uniform() < rho {
        (proposal, true)
    } else {
        (current.clone(), false)
    }
}
