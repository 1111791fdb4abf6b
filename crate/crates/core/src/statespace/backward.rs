use nalgebra::{DMatrix, DVector};

use super::{KalmanBelief, LinearGaussianModel, NoisePair};
use crate::error::{Error, Result};
use crate::linalg::{chol_logdet, eigen_factor, pivoted_cholesky, symmetrize, EIGEN_REL_TOL};

/// Information form `(P'⁻¹, P'⁻¹ m')` of a possibly non-normalizable
/// Gaussian likelihood in the state: `exp(-½ xᵀ J x + xᵀ j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardInfo {
    pub info_mat: DMatrix<f64>,
    pub info_vec: DVector<f64>,
}

impl BackwardInfo {
    pub fn zero(n_x: usize) -> Self {
        Self {
            info_mat: DMatrix::zeros(n_x, n_x),
            info_vec: DVector::zeros(n_x),
        }
    }
}

/// Output of the backward information filter.
///
/// `predicted(t)` carries `p(z_{t+1:T} | x_t)` for `t = 0..=T` (zero at `T`);
/// `filtered(t)` carries `p(z_{t:T} | x_t)` for `t = 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardPass {
    predicted: Vec<BackwardInfo>,
    filtered: Vec<BackwardInfo>,
}

impl BackwardPass {
    pub fn horizon(&self) -> usize {
        self.filtered.len()
    }

    pub fn predicted(&self, t: usize) -> &BackwardInfo {
        &self.predicted[t]
    }

    pub fn filtered(&self, t: usize) -> &BackwardInfo {
        &self.filtered[t - 1]
    }
}

fn observation_info(
    model: &LinearGaussianModel,
    t: usize,
    theta: &NoisePair,
    z: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let h = model.h_mat(t);
    let chol = theta
        .w
        .cov
        .clone()
        .cholesky()
        .ok_or(Error::SingularObservationNoise { t })?;
    let ht = h.transpose();
    let rinv_h = chol.solve(h);
    let rinv_r = chol.solve(&(z - &theta.w.mean));
    let mut mat = &ht * rinv_h;
    symmetrize(&mut mat);
    Ok((mat, &ht * rinv_r))
}

/// Backward information filter over `t = T..1` under the cluster sequence.
///
/// With `B(θ_t) = G_t chol(Σ_t^v)` (rank-revealing, so `Σ^v = 0` gives an
/// empty factor and `Δ = I`):
///
/// ```text
/// Δ       = (I + Bᵀ J B)⁻¹
/// J_pred  = Fᵀ J (I − B Δ Bᵀ J) F
/// j_pred  = Fᵀ (I − J B Δ Bᵀ) (j − J u')
/// ```
pub fn backward_info_recursion(
    model: &LinearGaussianModel,
    thetas: &[NoisePair],
    observations: &[DVector<f64>],
) -> Result<BackwardPass> {
    backward_window(model, 0, thetas, observations)
}

/// Backward pass over the window `t0+1..=t0+len`; the returned pass is
/// indexed relative to `t0`.
pub fn backward_window(
    model: &LinearGaussianModel,
    t0: usize,
    thetas: &[NoisePair],
    observations: &[DVector<f64>],
) -> Result<BackwardPass> {
    let big_t = observations.len();
    if thetas.len() != big_t {
        return Err(Error::DimensionMismatch {
            what: "cluster sequence length",
            expected: big_t,
            got: thetas.len(),
        });
    }
    let n_x = model.dims().n_x;
    let mut predicted = vec![BackwardInfo::zero(n_x); big_t + 1];
    let mut filtered = vec![BackwardInfo::zero(n_x); big_t];
    if big_t == 0 {
        return Ok(BackwardPass { predicted, filtered });
    }

    for t in (1..=big_t).rev() {
        let abs_t = t0 + t;
        let (obs_mat, obs_vec) = observation_info(model, abs_t, &thetas[t - 1], &observations[t - 1])?;
        let pred = &predicted[t];
        filtered[t - 1] = BackwardInfo {
            info_mat: &pred.info_mat + obs_mat,
            info_vec: &pred.info_vec + obs_vec,
        };

        let info = &filtered[t - 1];
        let theta = &thetas[t - 1];
        let f = model.f_mat(abs_t);
        let b = model.g_mat(abs_t) * pivoted_cholesky(&theta.v.cov, 1e-14);
        let u = model.shifted_input(abs_t, &theta.v);
        let ju = &info.info_mat * &u;
        let (mat_y, vec_y) = if b.ncols() == 0 {
            (info.info_mat.clone(), &info.info_vec - ju)
        } else {
            let jb = &info.info_mat * &b;
            let mut inner = b.transpose() * &jb;
            for i in 0..inner.nrows() {
                inner[(i, i)] += 1.0;
            }
            let chol = inner.cholesky().ok_or(Error::InvalidParameter(
                "backward recursion: I + BᵀJB is not positive definite".into(),
            ))?;
            // J B Δ Bᵀ
            let jb_delta = chol.solve(&jb.transpose()).transpose();
            let correction = &jb_delta * b.transpose();
            let mat = &info.info_mat - &correction * &info.info_mat;
            let resid = &info.info_vec - ju;
            let vec = &resid - &correction * &resid;
            (mat, vec)
        };
        let mut info_mat = f.transpose() * mat_y * f;
        symmetrize(&mut info_mat);
        predicted[t - 1] = BackwardInfo {
            info_mat,
            info_vec: f.transpose() * vec_y,
        };
    }
    Ok(BackwardPass { predicted, filtered })
}

/// Conditions `x = mean + R a`, `a ~ N(0, I)`, on the backward likelihood
/// `exp(-½ xᵀ J x + xᵀ j)`. Returns the posterior mean and a factor `R L⁻ᵀ`
/// of the posterior covariance, where `L Lᵀ = I + Rᵀ J R`.
pub(crate) fn condition_on_info(
    mean: &DVector<f64>,
    factor: &DMatrix<f64>,
    info: &BackwardInfo,
) -> Option<(DVector<f64>, DMatrix<f64>)> {
    if factor.ncols() == 0 {
        return Some((mean.clone(), factor.clone()));
    }
    let jr = &info.info_mat * factor;
    let mut inner = factor.transpose() * jr;
    symmetrize(&mut inner);
    for i in 0..inner.nrows() {
        inner[(i, i)] += 1.0;
    }
    let l = inner.cholesky()?.l();
    let half = l.solve_lower_triangular(&factor.transpose())?;
    let g = &info.info_vec - &info.info_mat * mean;
    let post_factor = half.transpose();
    let post_mean = mean + &post_factor * (half * g);
    Some((post_mean, post_factor))
}

/// `log p(z_t | θ_{1:t}, z_{1:t−1}) + log ∫ p(z_{t+1:T} | x_t) p(x_t | z_{1:t}, θ_{1:t}) dx_t`,
/// up to a per-t normalization that does not depend on `θ_t`.
///
/// `Σ_{t|t} = Q Π Qᵀ` keeps only eigenvalues above a relative cutoff, so a
/// zero filtered covariance reduces to the backward quadratic at `x̂_{t|t}`.
pub fn combined_loglik_at(forward: &KalmanBelief, backward: &BackwardInfo) -> f64 {
    let j = &backward.info_mat;
    let m = &forward.mean;
    let jm = j * m;
    let point = -0.5 * m.dot(&jm) + m.dot(&backward.info_vec);

    let r = eigen_factor(&forward.cov, EIGEN_REL_TOL);
    if r.ncols() == 0 {
        return forward.loglik_increment + point;
    }
    let jr = j * &r;
    let mut inner = r.transpose() * &jr;
    symmetrize(&mut inner);
    for i in 0..inner.nrows() {
        inner[(i, i)] += 1.0;
    }
    let chol = match inner.cholesky() {
        Some(c) => c,
        None => return f64::NEG_INFINITY,
    };
    let g = &backward.info_vec - jm;
    let rg = r.transpose() * g;
    let spread = rg.dot(&chol.solve(&rg));
    forward.loglik_increment + point - 0.5 * chol_logdet(&chol) + 0.5 * spread
}
