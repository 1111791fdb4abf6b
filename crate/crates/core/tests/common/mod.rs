//! Dense joint-Gaussian reference computations for small state-space models.
#![allow(dead_code)]

pub mod criteria;
pub mod enumerate;

use dpmss::statespace::{LinearGaussianModel, NoisePair, TimeVarying};
use dpmss::{GaussianCluster, RngStream};
use nalgebra::{DMatrix, DVector};

/// A variable written as `offset + coef · e`, where `e` stacks independent
/// zero-mean Gaussian blocks with covariance `noise_cov`.
struct Affine {
    offset: DVector<f64>,
    coef: DMatrix<f64>,
}

/// Affine representation of `(x_s, ..., x_T)` and `(z_{s+1}, ..., z_T)` in
/// terms of `x_s` plus the later noise.
struct Unrolled {
    states: Vec<Affine>,
    obs: Vec<Affine>,
    noise_cov: DMatrix<f64>,
    n_free: usize,
}

/// Starts at time `s` from `x_s = x0_offset + [I 0 ...] e`, where the first
/// `n_x` coordinates of `e` are `x_s` itself with covariance `x0_cov`.
fn unroll(
    model: &LinearGaussianModel,
    thetas: &[NoisePair],
    s: usize,
    x0_offset: DVector<f64>,
    x0_cov: DMatrix<f64>,
) -> Unrolled {
    let dims = model.dims();
    let (nx, nz, nv) = (dims.n_x, dims.n_z, dims.n_v);
    let big_t = thetas.len();
    let steps = big_t - s;
    let n = nx + steps * (nv + nz);
    let mut noise_cov = DMatrix::zeros(n, n);
    noise_cov.view_mut((0, 0), (nx, nx)).copy_from(&x0_cov);
    for k in 0..steps {
        let theta = &thetas[s + k];
        let ov = nx + k * (nv + nz);
        noise_cov.view_mut((ov, ov), (nv, nv)).copy_from(&theta.v.cov);
        noise_cov
            .view_mut((ov + nv, ov + nv), (nz, nz))
            .copy_from(&theta.w.cov);
    }
    let mut coef = DMatrix::zeros(nx, n);
    coef.view_mut((0, 0), (nx, nx)).copy_from(&DMatrix::identity(nx, nx));
    let mut states = vec![Affine {
        offset: x0_offset,
        coef,
    }];
    let mut obs = Vec::new();
    for k in 0..steps {
        let t = s + k + 1;
        let theta = &thetas[t - 1];
        let prev = states.last().unwrap();
        let f = model.f_mat(t);
        let g = model.g_mat(t);
        let h = model.h_mat(t);
        let mut offset = f * &prev.offset + g * &theta.v.mean;
        if let Some(cu) = model.input_term(t) {
            offset += cu;
        }
        let mut c = f * &prev.coef;
        let ov = nx + k * (nv + nz);
        let mut gv = c.view_mut((0, ov), (nx, nv));
        gv += g;
        let x = Affine { offset, coef: c };
        let mut zc = h * &x.coef;
        let mut wv = zc.view_mut((0, ov + nv), (nz, nz));
        wv += DMatrix::<f64>::identity(nz, nz);
        obs.push(Affine {
            offset: h * &x.offset + &theta.w.mean,
            coef: zc,
        });
        states.push(x);
    }
    Unrolled {
        states,
        obs,
        noise_cov,
        n_free: nx,
    }
}

fn stack(parts: &[Affine]) -> Affine {
    let rows: usize = parts.iter().map(|p| p.offset.len()).sum();
    let cols = parts[0].coef.ncols();
    let mut offset = DVector::zeros(rows);
    let mut coef = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for p in parts {
        let k = p.offset.len();
        offset.rows_mut(r, k).copy_from(&p.offset);
        coef.view_mut((r, 0), (k, cols)).copy_from(&p.coef);
        r += k;
    }
    Affine { offset, coef }
}

fn stack_obs(z: &[DVector<f64>]) -> DVector<f64> {
    let mut out = DVector::zeros(z.iter().map(|v| v.len()).sum());
    let mut r = 0;
    for v in z {
        out.rows_mut(r, v.len()).copy_from(v);
        r += v.len();
    }
    out
}

/// `log p(z_{1:T} | θ_{1:T})` from the dense joint covariance.
pub fn dense_loglik(model: &LinearGaussianModel, thetas: &[NoisePair], z: &[DVector<f64>]) -> f64 {
    let u = unroll(model, thetas, 0, model.init_mean().clone(), model.init_cov().clone());
    let zs = stack(&u.obs);
    let cov = &zs.coef * &u.noise_cov * zs.coef.transpose();
    let d = cov.nrows() as f64;
    let chol = cov.cholesky().expect("observation covariance is positive definite");
    let r = stack_obs(z) - zs.offset;
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + logdet + r.dot(&chol.solve(&r)))
}

/// `E(x_t | z_{1:T})` and `cov(x_t | z_{1:T})` for `t = 0..=T`.
pub fn dense_smoother(
    model: &LinearGaussianModel,
    thetas: &[NoisePair],
    z: &[DVector<f64>],
) -> Vec<(DVector<f64>, DMatrix<f64>)> {
    let u = unroll(model, thetas, 0, model.init_mean().clone(), model.init_cov().clone());
    let zs = stack(&u.obs);
    let czz = &zs.coef * &u.noise_cov * zs.coef.transpose();
    let chol = czz.cholesky().expect("observation covariance is positive definite");
    let r = stack_obs(z) - &zs.offset;
    u.states
        .iter()
        .map(|x| {
            let cxz = &x.coef * &u.noise_cov * zs.coef.transpose();
            let cxx = &x.coef * &u.noise_cov * x.coef.transpose();
            let gain = chol.solve(&cxz.transpose()).transpose();
            (&x.offset + &gain * &r, cxx - &gain * cxz.transpose())
        })
        .collect()
}

/// `log p(z_{1:t} | θ_{1:t})` for a prefix, used as the filtering oracle.
pub fn dense_filter(
    model: &LinearGaussianModel,
    thetas: &[NoisePair],
    z: &[DVector<f64>],
) -> (DVector<f64>, DMatrix<f64>) {
    let s = dense_smoother(model, thetas, z);
    s.last().unwrap().clone()
}

/// Information form `(J, j)` of `x ↦ p(z_{s+1:T} | x_s = x)` up to a constant.
pub fn dense_backward_info(
    model: &LinearGaussianModel,
    thetas: &[NoisePair],
    z: &[DVector<f64>],
    s: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    let nx = model.dims().n_x;
    if s == thetas.len() {
        return (DMatrix::zeros(nx, nx), DVector::zeros(nx));
    }
    let u = unroll(model, thetas, s, DVector::zeros(nx), DMatrix::zeros(nx, nx));
    let zs = stack(&u.obs);
    let k = zs.coef.columns(0, u.n_free).into_owned();
    let cov = &zs.coef * &u.noise_cov * zs.coef.transpose();
    let chol = cov.cholesky().expect("future observation covariance is positive definite");
    let r = stack_obs(&z[s..]) - &zs.offset;
    let sk = chol.solve(&k);
    (k.transpose() * sk, k.transpose() * chol.solve(&r))
}

/// Random small model with random noise parameters and data.
pub struct RandomInstance {
    pub model: LinearGaussianModel,
    pub thetas: Vec<NoisePair>,
    pub obs: Vec<DVector<f64>>,
}

fn rand_mat(r: usize, c: usize, scale: f64, rng: &mut RngStream) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * rng.standard_normal())
}

fn rand_vec(n: usize, scale: f64, rng: &mut RngStream) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.standard_normal())
}

/// PSD matrix of the requested rank (`rank = 0` gives zero).
pub fn rand_psd(n: usize, rank: usize, rng: &mut RngStream) -> DMatrix<f64> {
    let a = rand_mat(n, rank, 1.0, rng);
    let mut m = &a * a.transpose();
    let mt = m.transpose();
    m = (m + mt) * 0.5;
    m
}

pub fn random_cluster(n: usize, rank: usize, rng: &mut RngStream) -> GaussianCluster {
    GaussianCluster::new(rand_vec(n, 0.5, rng), rand_psd(n, rank, rng)).unwrap()
}

pub fn random_w_cluster(n: usize, rng: &mut RngStream) -> GaussianCluster {
    let mut cov = rand_psd(n, n, rng);
    for i in 0..n {
        cov[(i, i)] += 0.2;
    }
    GaussianCluster::new(rand_vec(n, 0.5, rng), cov).unwrap()
}

pub fn random_instance(rng: &mut RngStream, max_nx: usize, max_nz: usize, max_t: usize) -> RandomInstance {
    let pick = |rng: &mut RngStream, lo: usize, hi: usize| lo + (rng.uniform() * (hi - lo + 1) as f64) as usize;
    let nx = pick(rng, 1, max_nx);
    let nz = pick(rng, 1, max_nz);
    let nv = pick(rng, 1, nx);
    let big_t = pick(rng, 1, max_t);
    let time_varying = rng.uniform() < 0.3;
    let f = if time_varying {
        TimeVarying::PerStep((0..big_t).map(|_| rand_mat(nx, nx, 0.6, rng)).collect())
    } else {
        TimeVarying::Constant(rand_mat(nx, nx, 0.6, rng))
    };
    let g = TimeVarying::Constant(rand_mat(nx, nv, 1.0, rng));
    let h = if time_varying {
        TimeVarying::PerStep((0..big_t).map(|_| rand_mat(nz, nx, 1.0, rng)).collect())
    } else {
        TimeVarying::Constant(rand_mat(nz, nx, 1.0, rng))
    };
    let init_rank = pick(rng, 0, nx);
    let model = LinearGaussianModel::new(f, g, h, rand_vec(nx, 1.0, rng), rand_psd(nx, init_rank, rng)).unwrap();
    let thetas: Vec<NoisePair> = (0..big_t)
        .map(|_| {
            let rank = pick(rng, 0, nv);
            NoisePair::new(random_cluster(nv, rank, rng), random_w_cluster(nz, rng))
        })
        .collect();
    let obs = (0..big_t).map(|_| rand_vec(nz, 1.5, rng)).collect();
    RandomInstance { model, thetas, obs }
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

pub fn max_abs_diff_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).abs().max()
}

/// Relative-or-absolute closeness for quantities whose scale varies across
/// random instances.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}
