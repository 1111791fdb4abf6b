//! Exact Gaussian inference conditional on a cluster sequence.

mod backward;
mod observability;
mod smoother;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::gaussian::GaussianCluster;
use crate::linalg::{chol_logdet, symmetrize};

pub use backward::{backward_info_recursion, backward_window, combined_loglik_at, BackwardInfo, BackwardPass};
pub use observability::{observability_rank, ObservabilityReport};
pub use smoother::{
    kalman_smoother, rts_smooth, simulation_smoother, smooth_window_start, two_filter_smooth, SmoothedMoments,
};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A system matrix that is either constant or given per time step `t = 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeVarying<T> {
    Constant(T),
    PerStep(Vec<T>),
}

impl<T> TimeVarying<T> {
    /// Value at time `t ≥ 1`. Per-step sequences are indexed from `t = 1`.
    pub fn at(&self, t: usize) -> &T {
        match self {
            TimeVarying::Constant(x) => x,
            TimeVarying::PerStep(v) => &v[t.max(1) - 1],
        }
    }

    fn horizon(&self) -> Option<usize> {
        match self {
            TimeVarying::Constant(_) => None,
            TimeVarying::PerStep(v) => Some(v.len()),
        }
    }

    fn all(&self) -> Box<dyn Iterator<Item = &T> + '_> {
        match self {
            TimeVarying::Constant(x) => Box::new(std::iter::once(x)),
            TimeVarying::PerStep(v) => Box::new(v.iter()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n_x: usize,
    pub n_z: usize,
    pub n_u: usize,
    pub n_v: usize,
}

/// `x_t = F_t x_{t-1} + C_t u_t + G_t v_t`, `z_t = H_t x_t + w_t`, `x_0 ~ N(μ₀, Σ₀)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianModel {
    dims: Dims,
    f: TimeVarying<DMatrix<f64>>,
    g: TimeVarying<DMatrix<f64>>,
    h: TimeVarying<DMatrix<f64>>,
    c: Option<TimeVarying<DMatrix<f64>>>,
    inputs: Option<Vec<DVector<f64>>>,
    init_mean: DVector<f64>,
    init_cov: DMatrix<f64>,
}

fn check_shape(what: &'static str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows {
        return Err(Error::DimensionMismatch {
            what,
            expected: rows,
            got: m.nrows(),
        });
    }
    if m.ncols() != cols {
        return Err(Error::DimensionMismatch {
            what,
            expected: cols,
            got: m.ncols(),
        });
    }
    Ok(())
}

impl LinearGaussianModel {
    pub fn new(
        f: TimeVarying<DMatrix<f64>>,
        g: TimeVarying<DMatrix<f64>>,
        h: TimeVarying<DMatrix<f64>>,
        init_mean: DVector<f64>,
        mut init_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let n_x = init_mean.len();
        let n_v = g.at(1).ncols();
        let n_z = h.at(1).nrows();
        for m in f.all() {
            check_shape("state transition", m, n_x, n_x)?;
        }
        for m in g.all() {
            check_shape("noise transfer", m, n_x, n_v)?;
        }
        for m in h.all() {
            check_shape("observation matrix", m, n_z, n_x)?;
        }
        check_shape("initial covariance", &init_cov, n_x, n_x)?;
        symmetrize(&mut init_cov);
        GaussianCluster::new(init_mean.clone(), init_cov.clone())?;
        let model = Self {
            dims: Dims {
                n_x,
                n_z,
                n_u: 0,
                n_v,
            },
            f,
            g,
            h,
            c: None,
            inputs: None,
            init_mean,
            init_cov,
        };
        model.check_horizons()?;
        Ok(model)
    }

    pub fn time_invariant(
        f: DMatrix<f64>,
        g: DMatrix<f64>,
        h: DMatrix<f64>,
        init_mean: DVector<f64>,
        init_cov: DMatrix<f64>,
    ) -> Result<Self> {
        Self::new(
            TimeVarying::Constant(f),
            TimeVarying::Constant(g),
            TimeVarying::Constant(h),
            init_mean,
            init_cov,
        )
    }

    /// Adds the known input term `C_t u_t`.
    pub fn with_inputs(mut self, c: TimeVarying<DMatrix<f64>>, inputs: Vec<DVector<f64>>) -> Result<Self> {
        let n_u = c.at(1).ncols();
        for m in c.all() {
            check_shape("input matrix", m, self.dims.n_x, n_u)?;
        }
        for u in &inputs {
            if u.len() != n_u {
                return Err(Error::DimensionMismatch {
                    what: "input vector",
                    expected: n_u,
                    got: u.len(),
                });
            }
        }
        self.dims.n_u = n_u;
        self.c = Some(c);
        self.inputs = Some(inputs);
        self.check_horizons()?;
        Ok(self)
    }

    fn check_horizons(&self) -> Result<()> {
        let mut horizons = vec![self.f.horizon(), self.g.horizon(), self.h.horizon()];
        if let Some(c) = &self.c {
            horizons.push(c.horizon());
        }
        if let Some(u) = &self.inputs {
            horizons.push(Some(u.len()));
        }
        let fixed: Vec<usize> = horizons.into_iter().flatten().collect();
        if fixed.windows(2).any(|w| w[0] != w[1]) {
            return Err(invalid("time-varying system matrices disagree on the horizon"));
        }
        Ok(())
    }

    /// Largest supported horizon, `None` if every matrix is constant.
    pub fn horizon(&self) -> Option<usize> {
        let mut h = [self.f.horizon(), self.g.horizon(), self.h.horizon()]
            .into_iter()
            .flatten()
            .min();
        if let Some(u) = &self.inputs {
            h = Some(h.map_or(u.len(), |x| x.min(u.len())));
        }
        h
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn f_mat(&self, t: usize) -> &DMatrix<f64> {
        self.f.at(t)
    }

    pub fn g_mat(&self, t: usize) -> &DMatrix<f64> {
        self.g.at(t)
    }

    pub fn h_mat(&self, t: usize) -> &DMatrix<f64> {
        self.h.at(t)
    }

    pub fn is_time_invariant(&self) -> bool {
        matches!(self.f, TimeVarying::Constant(_)) && matches!(self.h, TimeVarying::Constant(_))
    }

    /// `C_t u_t`, or `None` for models without inputs.
    pub fn input_term(&self, t: usize) -> Option<DVector<f64>> {
        match (&self.c, &self.inputs) {
            (Some(c), Some(u)) => Some(c.at(t) * &u[t - 1]),
            _ => None,
        }
    }

    pub fn init_mean(&self) -> &DVector<f64> {
        &self.init_mean
    }

    pub fn init_cov(&self) -> &DMatrix<f64> {
        &self.init_cov
    }

    pub fn set_observation_matrix(&mut self, h: TimeVarying<DMatrix<f64>>) -> Result<()> {
        for m in h.all() {
            check_shape("observation matrix", m, self.dims.n_z, self.dims.n_x)?;
        }
        self.h = h;
        self.check_horizons()
    }

    pub fn set_initial(&mut self, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<()> {
        check_shape("initial covariance", &cov, self.dims.n_x, self.dims.n_x)?;
        let c = GaussianCluster::new(mean, cov)?;
        self.init_mean = c.mean;
        self.init_cov = c.cov;
        Ok(())
    }

    /// `u'_t(θ) = C_t u_t + G_t μ^v`.
    pub(crate) fn shifted_input(&self, t: usize, v: &GaussianCluster) -> DVector<f64> {
        let mut u = self.g_mat(t) * &v.mean;
        if let Some(cu) = self.input_term(t) {
            u += cu;
        }
        u
    }
}

/// The cluster pair `θ_t = (θ_t^v, θ_t^w)` driving one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePair {
    pub v: Arc<GaussianCluster>,
    pub w: Arc<GaussianCluster>,
}

impl NoisePair {
    pub fn new(v: GaussianCluster, w: GaussianCluster) -> Self {
        Self {
            v: Arc::new(v),
            w: Arc::new(w),
        }
    }

    pub fn from_arcs(v: Arc<GaussianCluster>, w: Arc<GaussianCluster>) -> Self {
        Self { v, w }
    }
}

/// Filtered moments at time `t` together with the one-step prediction and
/// innovation statistics that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub pred_mean: DVector<f64>,
    pub pred_cov: DMatrix<f64>,
    pub innov_mean: DVector<f64>,
    pub innov_cov: DMatrix<f64>,
    pub loglik_increment: f64,
}

impl KalmanBelief {
    /// Belief at time 0: the state prior, with no innovation.
    pub fn initial(model: &LinearGaussianModel) -> Self {
        Self::from_moments(model.init_mean.clone(), model.init_cov.clone(), model.dims.n_z)
    }

    pub fn from_moments(mean: DVector<f64>, cov: DMatrix<f64>, n_z: usize) -> Self {
        Self {
            pred_mean: mean.clone(),
            pred_cov: cov.clone(),
            mean,
            cov,
            innov_mean: DVector::zeros(n_z),
            innov_cov: DMatrix::zeros(n_z, n_z),
            loglik_increment: 0.0,
        }
    }
}

/// One predict/update step under cluster pair `theta`.
///
/// The covariance update uses the Joseph form and the result is symmetrized.
pub fn kalman_step(
    model: &LinearGaussianModel,
    t: usize,
    prior: &KalmanBelief,
    theta: &NoisePair,
    z: &DVector<f64>,
) -> Result<KalmanBelief> {
    let dims = model.dims;
    if z.len() != dims.n_z {
        return Err(Error::DimensionMismatch {
            what: "observation",
            expected: dims.n_z,
            got: z.len(),
        });
    }
    let f = model.f_mat(t);
    let g = model.g_mat(t);
    let h = model.h_mat(t);

    let pred_mean = f * &prior.mean + model.shifted_input(t, &theta.v);
    let mut pred_cov = f * &prior.cov * f.transpose() + g * &theta.v.cov * g.transpose();
    symmetrize(&mut pred_cov);

    let innov_mean = h * &pred_mean + &theta.w.mean;
    let ph_t = &pred_cov * h.transpose();
    let mut innov_cov = h * &ph_t + &theta.w.cov;
    symmetrize(&mut innov_cov);

    let chol = innov_cov
        .clone()
        .cholesky()
        .ok_or(Error::SingularInnovation { t })?;
    let resid = z - &innov_mean;
    let sol = chol.solve(&resid);
    let loglik_increment =
        -0.5 * (dims.n_z as f64 * LN_2PI + chol_logdet(&chol) + resid.dot(&sol));
    if !loglik_increment.is_finite() {
        return Err(Error::SingularInnovation { t });
    }

    // K = P Hᵀ S⁻¹
    let gain = chol.solve(&ph_t.transpose()).transpose();
    let mean = &pred_mean + &gain * resid;
    let i_kh = DMatrix::identity(dims.n_x, dims.n_x) - &gain * h;
    let mut cov = &i_kh * &pred_cov * i_kh.transpose() + &gain * &theta.w.cov * gain.transpose();
    symmetrize(&mut cov);

    Ok(KalmanBelief {
        mean,
        cov,
        pred_mean,
        pred_cov,
        innov_mean,
        innov_cov,
        loglik_increment,
    })
}

/// Runs the filter over `t = 1..=T`; element 0 of the result is the prior.
pub fn kalman_filter(
    model: &LinearGaussianModel,
    thetas: &[NoisePair],
    observations: &[DVector<f64>],
) -> Result<Vec<KalmanBelief>> {
    if thetas.len() != observations.len() {
        return Err(Error::DimensionMismatch {
            what: "cluster sequence length",
            expected: observations.len(),
            got: thetas.len(),
        });
    }
    let mut out = Vec::with_capacity(observations.len() + 1);
    out.push(KalmanBelief::initial(model));
    for (i, (theta, z)) in thetas.iter().zip(observations).enumerate() {
        let next = kalman_step(model, i + 1, &out[i], theta, z)?;
        out.push(next);
    }
    Ok(out)
}

/// `log p(z_{1:T} | θ_{1:T})` by the prediction-error decomposition.
pub fn kalman_loglik(
    model: &LinearGaussianModel,
    thetas: &[NoisePair],
    observations: &[DVector<f64>],
) -> Result<f64> {
    Ok(kalman_filter(model, thetas, observations)?
        .iter()
        .skip(1)
        .map(|b| b.loglik_increment)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_model(init_var: f64) -> LinearGaussianModel {
        LinearGaussianModel::time_invariant(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
            DMatrix::from_element(1, 1, init_var),
        )
        .unwrap()
    }

    fn pair(qv: f64, rw: f64) -> NoisePair {
        NoisePair::new(
            GaussianCluster::scalar(0.0, qv).unwrap(),
            GaussianCluster::scalar(0.0, rw).unwrap(),
        )
    }

    #[test]
    fn zero_uncertainty_is_preserved() {
        let model = scalar_model(0.0);
        let prior = KalmanBelief::initial(&model);
        let b = kalman_step(&model, 1, &prior, &pair(0.0, 1.0), &DVector::from_element(1, 5.0)).unwrap();
        assert_eq!(b.mean[0], 0.0);
        assert_eq!(b.cov[(0, 0)], 0.0);
        assert_eq!(b.innov_cov[(0, 0)], 1.0);
    }

    #[test]
    fn scalar_update_closed_form() {
        let model = scalar_model(1.0);
        let prior = KalmanBelief::initial(&model);
        let b = kalman_step(&model, 1, &prior, &pair(1.0, 1.0), &DVector::from_element(1, 2.0)).unwrap();
        assert!((b.pred_cov[(0, 0)] - 2.0).abs() < 1e-15);
        assert!((b.innov_cov[(0, 0)] - 3.0).abs() < 1e-15);
        assert!((b.mean[0] - 4.0 / 3.0).abs() < 1e-15);
        assert!((b.cov[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
        let expected = -0.5 * ((2.0 * std::f64::consts::PI * 3.0).ln() + 4.0 / 3.0);
        assert!((b.loglik_increment - expected).abs() < 1e-14);
    }

    #[test]
    fn noise_means_shift_prediction() {
        let model = scalar_model(1.0);
        let prior = KalmanBelief::initial(&model);
        let theta = NoisePair::new(
            GaussianCluster::scalar(2.0, 1.0).unwrap(),
            GaussianCluster::scalar(-1.0, 1.0).unwrap(),
        );
        let b = kalman_step(&model, 1, &prior, &theta, &DVector::from_element(1, 0.0)).unwrap();
        assert_eq!(b.pred_mean[0], 2.0);
        assert_eq!(b.innov_mean[0], 1.0);
    }

    #[test]
    fn singular_innovation_names_time() {
        let model = scalar_model(0.0);
        let prior = KalmanBelief::initial(&model);
        let err = kalman_step(&model, 7, &prior, &pair(0.0, 0.0), &DVector::zeros(1)).unwrap_err();
        assert_eq!(err, Error::SingularInnovation { t: 7 });
    }

    #[test]
    fn shape_validation() {
        let bad = LinearGaussianModel::time_invariant(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 3),
            DVector::zeros(2),
            DMatrix::zeros(2, 2),
        );
        assert!(matches!(bad, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn inputs_enter_prediction() {
        let model = scalar_model(0.0)
            .with_inputs(
                TimeVarying::Constant(DMatrix::from_element(1, 1, 2.0)),
                vec![DVector::from_element(1, 1.5); 3],
            )
            .unwrap();
        let prior = KalmanBelief::initial(&model);
        let b = kalman_step(&model, 2, &prior, &pair(0.0, 1.0), &DVector::zeros(1)).unwrap();
        assert_eq!(b.pred_mean[0], 3.0);
        assert_eq!(model.horizon(), Some(3));
    }
}
