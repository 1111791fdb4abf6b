use nalgebra::{DMatrix, DVector};

use super::backward::condition_on_info;
use super::{backward_info_recursion, backward_window, kalman_filter, BackwardPass, KalmanBelief, LinearGaussianModel, NoisePair};
use crate::error::{Error, Result};
use crate::gaussian::{sample_with_factor, RngStream};
use crate::linalg::{eigen_factor, pinv_psd, pivoted_cholesky, symmetrize, EIGEN_REL_TOL};

const PINV_REL_TOL: f64 = 1e-12;

/// Smoothed moments `(x̂_{t|T}, Σ_{t|T})`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

fn smoother_gain(model: &LinearGaussianModel, t: usize, filtered: &KalmanBelief, next: &KalmanBelief) -> DMatrix<f64> {
    // A generalized inverse keeps the conditioning exact when the one-step
    // prediction covariance is singular.
    let f = model.f_mat(t + 1);
    &filtered.cov * f.transpose() * pinv_psd(&next.pred_cov, PINV_REL_TOL)
}

/// Rauch-Tung-Striebel pass over stored filter output (`beliefs[0]` is the prior).
pub fn rts_smooth(model: &LinearGaussianModel, beliefs: &[KalmanBelief]) -> Vec<SmoothedMoments> {
    rts_window(model, 0, beliefs)
}

fn rts_window(model: &LinearGaussianModel, t0: usize, beliefs: &[KalmanBelief]) -> Vec<SmoothedMoments> {
    let n = beliefs.len();
    let mut out: Vec<SmoothedMoments> = Vec::with_capacity(n);
    let last = &beliefs[n - 1];
    out.push(SmoothedMoments {
        mean: last.mean.clone(),
        cov: last.cov.clone(),
    });
    for t in (0..n - 1).rev() {
        let filt = &beliefs[t];
        let next = &beliefs[t + 1];
        let gain = smoother_gain(model, t0 + t, filt, next);
        let later = out.last().expect("seeded with the final step");
        let mean = &filt.mean + &gain * (&later.mean - &next.pred_mean);
        let mut cov = &filt.cov + &gain * (&later.cov - &next.pred_cov) * gain.transpose();
        symmetrize(&mut cov);
        out.push(SmoothedMoments { mean, cov });
    }
    out.reverse();
    out
}

/// Combines each filtered belief with the backward likelihood of the later
/// observations. Unlike [`rts_smooth`] this never inverts a prediction
/// covariance, so nearly singular dynamics stay accurate.
pub fn two_filter_smooth(beliefs: &[KalmanBelief], backward: &BackwardPass) -> Result<Vec<SmoothedMoments>> {
    beliefs
        .iter()
        .enumerate()
        .map(|(t, b)| {
            let factor = eigen_factor(&b.cov, EIGEN_REL_TOL);
            let (mean, post) = condition_on_info(&b.mean, &factor, backward.predicted(t))
                .ok_or_else(|| Error::InvalidParameter(format!("smoother: indefinite backward information at t = {t}")))?;
            let mut cov = &post * post.transpose();
            symmetrize(&mut cov);
            Ok(SmoothedMoments { mean, cov })
        })
        .collect()
}

/// Smoothed moments of `x_{t0}` given the observations of a window.
///
/// `beliefs[k]` is the filtered belief at `t0 + k` and `thetas[k]`,
/// `observations[k]` belong to time `t0 + k + 1`.
pub fn smooth_window_start(
    model: &LinearGaussianModel,
    t0: usize,
    beliefs: &[KalmanBelief],
    thetas: &[NoisePair],
    observations: &[DVector<f64>],
) -> Result<SmoothedMoments> {
    let first = &beliefs[0];
    if thetas.is_empty() {
        return Ok(SmoothedMoments {
            mean: first.mean.clone(),
            cov: first.cov.clone(),
        });
    }
    match backward_window(model, t0, thetas, observations) {
        Ok(pass) => {
            let factor = eigen_factor(&first.cov, EIGEN_REL_TOL);
            let (mean, post) = condition_on_info(&first.mean, &factor, pass.predicted(0))
                .ok_or_else(|| Error::InvalidParameter(format!("smoother: indefinite backward information at t = {t0}")))?;
            let mut cov = &post * post.transpose();
            symmetrize(&mut cov);
            Ok(SmoothedMoments { mean, cov })
        }
        Err(Error::SingularObservationNoise { .. }) => Ok(rts_window(model, t0, beliefs).swap_remove(0)),
        Err(e) => Err(e),
    }
}

/// Smoothed moments for `t = 0..=T` given the full cluster sequence.
///
/// Uses the two-filter form when every observation-noise covariance is
/// invertible and falls back to the RTS pass otherwise.
pub fn kalman_smoother(
    model: &LinearGaussianModel,
    thetas: &[NoisePair],
    observations: &[DVector<f64>],
) -> Result<Vec<SmoothedMoments>> {
    let beliefs = kalman_filter(model, thetas, observations)?;
    match backward_info_recursion(model, thetas, observations) {
        Ok(pass) => two_filter_smooth(&beliefs, &pass),
        Err(Error::SingularObservationNoise { .. }) => Ok(rts_smooth(model, &beliefs)),
        Err(e) => Err(e),
    }
}

/// Exact draw of `x_{0:T}` from `p(x_{0:T} | θ_{1:T}, z_{1:T})`.
///
/// Samples `x_0` from its smoothed law and then each `x_t` given `x_{t−1}`
/// and the backward likelihood of `z_{t:T}`. Falls back to forward
/// filtering, backward sampling when some observation-noise covariance is
/// singular.
pub fn simulation_smoother(
    model: &LinearGaussianModel,
    thetas: &[NoisePair],
    observations: &[DVector<f64>],
    rng: &mut RngStream,
) -> Result<Vec<DVector<f64>>> {
    match backward_info_recursion(model, thetas, observations) {
        Ok(pass) => sample_forward(model, thetas, &pass, rng),
        Err(Error::SingularObservationNoise { .. }) => {
            let beliefs = kalman_filter(model, thetas, observations)?;
            Ok(sample_backward(model, &beliefs, rng))
        }
        Err(e) => Err(e),
    }
}

fn indefinite(t: usize) -> Error {
    Error::InvalidParameter(format!("simulation smoother: indefinite backward information at t = {t}"))
}

fn sample_forward(
    model: &LinearGaussianModel,
    thetas: &[NoisePair],
    pass: &BackwardPass,
    rng: &mut RngStream,
) -> Result<Vec<DVector<f64>>> {
    let init_factor = pivoted_cholesky(model.init_cov(), 1e-14);
    let (m0, f0) = condition_on_info(model.init_mean(), &init_factor, pass.predicted(0)).ok_or_else(|| indefinite(0))?;
    let mut path = Vec::with_capacity(thetas.len() + 1);
    path.push(sample_with_factor(&m0, &f0, rng));
    for (i, theta) in thetas.iter().enumerate() {
        let t = i + 1;
        let centre = model.f_mat(t) * &path[i] + model.shifted_input(t, &theta.v);
        let b = model.g_mat(t) * pivoted_cholesky(&theta.v.cov, 1e-14);
        let (m, f) = condition_on_info(&centre, &b, pass.filtered(t)).ok_or_else(|| indefinite(t))?;
        path.push(sample_with_factor(&m, &f, rng));
    }
    Ok(path)
}

fn sample_backward(model: &LinearGaussianModel, beliefs: &[KalmanBelief], rng: &mut RngStream) -> Vec<DVector<f64>> {
    let n = beliefs.len();
    let mut path = vec![DVector::zeros(0); n];
    let last = &beliefs[n - 1];
    path[n - 1] = sample_with_factor(&last.mean, &pivoted_cholesky(&last.cov, 1e-14), rng);
    for t in (0..n - 1).rev() {
        let filt = &beliefs[t];
        let next = &beliefs[t + 1];
        let gain = smoother_gain(model, t, filt, next);
        let mean = &filt.mean + &gain * (&path[t + 1] - &next.pred_mean);
        let mut cov = &filt.cov - &gain * &next.pred_cov * gain.transpose();
        symmetrize(&mut cov);
        path[t] = sample_with_factor(&mean, &pivoted_cholesky(&cov, 1e-12), rng);
    }
    path
}
