//! Multivariate Gaussian and Normal-Inverse-Wishart primitives, plus the
//! seedable random stream every sampler in the crate draws from.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, chol_logdet, cholesky_jittered, pivoted_cholesky, symmetrize};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Mean and covariance of one mixture component (a cluster value).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianCluster {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianCluster {
    /// Builds a cluster, symmetrizing `cov` and rejecting indefinite input.
    pub fn new(mean: DVector<f64>, mut cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                what: "cluster covariance",
                expected: d,
                got: cov.nrows(),
            });
        }
        if cov.iter().any(|x| !x.is_finite()) || mean.iter().any(|x| !x.is_finite()) {
            return Err(invalid("cluster parameters must be finite"));
        }
        symmetrize(&mut cov);
        if d > 0 && !linalg::is_zero(&cov) {
            let trace: f64 = cov.diagonal().iter().map(|x| x.abs()).sum();
            let min_eig = cov.clone().symmetric_eigenvalues().min();
            if min_eig < -1e-10 * trace {
                return Err(invalid(format!(
                    "cluster covariance is not positive semidefinite (min eigenvalue {min_eig:e})"
                )));
            }
        }
        Ok(Self { mean, cov })
    }

    pub fn scalar(mean: f64, var: f64) -> Result<Self> {
        if var < 0.0 {
            return Err(invalid("variance must be nonnegative"));
        }
        Self::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var))
    }

    /// Point mass at zero in `dim` dimensions.
    pub fn zero(dim: usize) -> Self {
        Self {
            mean: DVector::zeros(dim),
            cov: DMatrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// True for a Dirac atom (all-zero covariance).
    pub fn is_degenerate(&self) -> bool {
        linalg::is_zero(&self.cov)
    }
}

/// Normal-Inverse-Wishart parameters: `Σ⁻¹ ~ W(ν₀, Λ₀⁻¹)`, `μ | Σ ~ N(μ₀, Σ/κ₀)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiwParams {
    pub mu0: DVector<f64>,
    pub kappa0: f64,
    pub nu0: f64,
    pub lambda0: DMatrix<f64>,
}

impl NiwParams {
    pub fn new(mu0: DVector<f64>, kappa0: f64, nu0: f64, mut lambda0: DMatrix<f64>) -> Result<Self> {
        let d = mu0.len();
        if lambda0.nrows() != d || lambda0.ncols() != d {
            return Err(Error::DimensionMismatch {
                what: "NIW scale matrix",
                expected: d,
                got: lambda0.nrows(),
            });
        }
        if !(kappa0 > 0.0) {
            return Err(invalid("kappa0 must be positive"));
        }
        if !(nu0 > d as f64 - 1.0) {
            return Err(invalid("nu0 must exceed dim - 1"));
        }
        symmetrize(&mut lambda0);
        if lambda0.clone().cholesky().is_none() {
            return Err(invalid("lambda0 must be positive definite"));
        }
        Ok(Self {
            mu0,
            kappa0,
            nu0,
            lambda0,
        })
    }

    pub fn scalar(mu0: f64, kappa0: f64, nu0: f64, lambda0: f64) -> Result<Self> {
        Self::new(
            DVector::from_element(1, mu0),
            kappa0,
            nu0,
            DMatrix::from_element(1, 1, lambda0),
        )
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }
}

/// A reproducible random stream identified by `(seed, stream)`.
///
/// Distinct stream ids over the same seed select independent ChaCha
/// keystreams, so per-particle or per-worker streams never overlap.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// `log N(x; μ, Σ)`.
///
/// A zero covariance has no density and is reported as
/// [`Error::DegenerateDensity`]; near-singular covariances get jitter first.
pub fn mvn_logpdf(x: &DVector<f64>, cluster: &GaussianCluster) -> Result<f64> {
    let d = cluster.dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            what: "density argument",
            expected: d,
            got: x.len(),
        });
    }
    if cluster.is_degenerate() {
        return Err(Error::DegenerateDensity);
    }
    let chol = cholesky_jittered(&cluster.cov).ok_or(Error::DegenerateDensity)?;
    let diff = x - &cluster.mean;
    let sol = chol.solve(&diff);
    let quad = diff.dot(&sol);
    Ok(-0.5 * (d as f64 * LN_2PI + chol_logdet(&chol) + quad))
}

/// One draw from `N(μ, Σ)`; a zero covariance returns `μ` exactly.
pub fn sample_mvn(cluster: &GaussianCluster, rng: &mut RngStream) -> DVector<f64> {
    if cluster.is_degenerate() {
        return cluster.mean.clone();
    }
    let factor = pivoted_cholesky(&cluster.cov, 1e-14);
    sample_with_factor(&cluster.mean, &factor, rng)
}

/// `mean + L ε` with `ε` standard normal of dimension `L.ncols()`.
pub(crate) fn sample_with_factor(
    mean: &DVector<f64>,
    factor: &DMatrix<f64>,
    rng: &mut RngStream,
) -> DVector<f64> {
    let eps = DVector::from_fn(factor.ncols(), |_, _| rng.standard_normal());
    mean + factor * eps
}

/// Wishart draw `W(ν, S)` by Bartlett decomposition, given `chol(S)`.
pub(crate) fn sample_wishart(nu: f64, scale_chol: &DMatrix<f64>, rng: &mut RngStream) -> DMatrix<f64> {
    let d = scale_chol.nrows();
    let mut a = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        let chi = ChiSquared::new(nu - i as f64).expect("nu0 > dim - 1 checked at construction");
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.standard_normal();
        }
    }
    let la = scale_chol * a;
    let mut w = &la * la.transpose();
    symmetrize(&mut w);
    w
}

/// One draw `(μ, Σ)` from the Normal-Inverse-Wishart base measure.
pub fn sample_niw(psi: &NiwParams, rng: &mut RngStream) -> GaussianCluster {
    let d = psi.dim();
    let lambda_inv = psi
        .lambda0
        .clone()
        .try_inverse()
        .expect("lambda0 is positive definite");
    let scale_chol = lambda_inv
        .clone()
        .cholesky()
        .map(|c| c.l())
        .unwrap_or_else(|| pivoted_cholesky(&symmetric(lambda_inv), 1e-14));
    let precision = sample_wishart(psi.nu0, &scale_chol, rng);
    let mut cov = precision
        .cholesky()
        .map(|c| c.inverse())
        .unwrap_or_else(|| DMatrix::identity(d, d) * f64::MAX.sqrt());
    symmetrize(&mut cov);
    let mean_factor = pivoted_cholesky(&(&cov / psi.kappa0), 1e-14);
    let mean = sample_with_factor(&psi.mu0, &mean_factor, rng);
    GaussianCluster { mean, cov }
}

fn symmetric(mut m: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&mut m);
    m
}

/// Log multivariate gamma function `ln Γ_d(a)`.
pub fn ln_multigamma(d: usize, a: f64) -> f64 {
    let df = d as f64;
    df * (df - 1.0) / 4.0 * PI.ln() + (1..=d).map(|j| ln_gamma(a + (1.0 - j as f64) / 2.0)).sum::<f64>()
}

/// Log density of a cluster under the NIW base measure.
pub fn niw_logpdf(cluster: &GaussianCluster, psi: &NiwParams) -> Result<f64> {
    let d = psi.dim();
    if cluster.dim() != d {
        return Err(Error::DimensionMismatch {
            what: "NIW argument",
            expected: d,
            got: cluster.dim(),
        });
    }
    let sigma_chol = linalg::cholesky(&cluster.cov).ok_or(Error::DegenerateDensity)?;
    let lambda_chol = linalg::cholesky(&psi.lambda0).ok_or(Error::DegenerateDensity)?;
    let df = d as f64;
    let nu = psi.nu0;
    let logdet_sigma = chol_logdet(&sigma_chol);
    let sigma_inv = sigma_chol.inverse();
    let trace = (&psi.lambda0 * &sigma_inv).trace();
    let log_iw = 0.5 * nu * chol_logdet(&lambda_chol)
        - 0.5 * nu * df * std::f64::consts::LN_2
        - ln_multigamma(d, 0.5 * nu)
        - 0.5 * (nu + df + 1.0) * logdet_sigma
        - 0.5 * trace;
    let diff = &cluster.mean - &psi.mu0;
    let quad = psi.kappa0 * diff.dot(&(&sigma_inv * &diff));
    let log_mean = -0.5 * (df * LN_2PI + logdet_sigma - df * psi.kappa0.ln() + quad);
    Ok(log_mean + log_iw)
}

/// Uniform draw from a categorical distribution given unnormalized weights.
pub(crate) fn sample_categorical(weights: &[f64], rng: &mut RngStream) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.uniform() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights
        .iter()
        .rposition(|&w| w > 0.0)
        .unwrap_or(weights.len() - 1)
}
