mod common;

use common::*;
use dpmss::statespace::{
    backward_info_recursion, combined_loglik_at, kalman_filter, kalman_loglik, kalman_smoother, kalman_step,
    simulation_smoother, BackwardInfo, KalmanBelief, LinearGaussianModel, NoisePair,
};
use dpmss::{GaussianCluster, RngStream};
use nalgebra::{DMatrix, DVector};

fn scalar_rw(init_var: f64) -> LinearGaussianModel {
    LinearGaussianModel::time_invariant(
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 1.0),
        DVector::zeros(1),
        DMatrix::from_element(1, 1, init_var),
    )
    .unwrap()
}

fn sc(m: f64, v: f64) -> GaussianCluster {
    GaussianCluster::scalar(m, v).unwrap()
}

fn obs(values: &[f64]) -> Vec<DVector<f64>> {
    values.iter().map(|&z| DVector::from_element(1, z)).collect()
}

#[test]
fn filter_and_loglik_match_dense_oracle() {
    let mut rng = RngStream::new(11, 0);
    for _ in 0..40 {
        let inst = random_instance(&mut rng, 3, 2, 10);
        let ll = kalman_loglik(&inst.model, &inst.thetas, &inst.obs).unwrap();
        let dense = dense_loglik(&inst.model, &inst.thetas, &inst.obs);
        assert!(close(ll, dense, 1e-8), "{ll} vs {dense}");

        let filt = kalman_filter(&inst.model, &inst.thetas, &inst.obs).unwrap();
        let (m, p) = dense_filter(&inst.model, &inst.thetas, &inst.obs);
        let last = filt.last().unwrap();
        assert!(max_abs_diff_vec(&last.mean, &m) < 1e-8 * (1.0 + m.amax()));
        assert!(max_abs_diff(&last.cov, &p) < 1e-8 * (1.0 + p.amax()));
    }
}

#[test]
fn smoother_matches_dense_oracle() {
    let mut rng = RngStream::new(12, 0);
    for _ in 0..40 {
        let inst = random_instance(&mut rng, 3, 2, 10);
        let sm = kalman_smoother(&inst.model, &inst.thetas, &inst.obs).unwrap();
        let dense = dense_smoother(&inst.model, &inst.thetas, &inst.obs);
        assert_eq!(sm.len(), dense.len());
        for (s, (m, p)) in sm.iter().zip(&dense) {
            assert!(max_abs_diff_vec(&s.mean, m) < 1e-7 * (1.0 + m.amax()), "{} vs {}", s.mean, m);
            assert!(max_abs_diff(&s.cov, p) < 1e-7 * (1.0 + p.amax()), "{} vs {}", s.cov, p);
        }
    }
}

#[test]
fn smoother_single_step_equals_filter() {
    let model = scalar_rw(1.0);
    let thetas = vec![NoisePair::new(sc(0.0, 1.0), sc(0.0, 1.0))];
    let z = obs(&[2.0]);
    let sm = kalman_smoother(&model, &thetas, &z).unwrap();
    let f = kalman_filter(&model, &thetas, &z).unwrap();
    assert_eq!(sm[1].mean, f[1].mean);
    assert_eq!(sm[1].cov, f[1].cov);
}

#[test]
fn smoother_random_walk_t5() {
    let model = scalar_rw(1.0);
    let mut rng = RngStream::new(3, 0);
    let thetas: Vec<NoisePair> = (0..5)
        .map(|_| NoisePair::new(sc(rng.standard_normal(), 0.5 + rng.uniform()), sc(rng.standard_normal(), 0.5 + rng.uniform())))
        .collect();
    let z = obs(&[0.3, -1.0, 2.0, 0.7, 1.1]);
    let sm = kalman_smoother(&model, &thetas, &z).unwrap();
    let dense = dense_smoother(&model, &thetas, &z);
    for (s, (m, p)) in sm.iter().zip(&dense) {
        assert!((s.mean[0] - m[0]).abs() < 1e-8);
        assert!((s.cov[(0, 0)] - p[(0, 0)]).abs() < 1e-8);
    }
}

#[test]
fn smoother_deterministic_state() {
    let model = scalar_rw(2.0);
    let thetas: Vec<NoisePair> = (0..4).map(|_| NoisePair::new(sc(0.5, 0.0), sc(0.0, 1.0))).collect();
    let z = obs(&[1.0, 0.5, 2.5, 1.0]);
    let sm = kalman_smoother(&model, &thetas, &z).unwrap();
    let dense = dense_smoother(&model, &thetas, &z);
    // x_t = x_0 + 0.5 t, so every smoothed variance equals that of x_0 given all data.
    let v0 = 1.0 / (1.0 / 2.0 + 4.0);
    for (s, (m, p)) in sm.iter().zip(&dense) {
        assert!((s.mean[0] - m[0]).abs() < 1e-8);
        assert!((s.cov[(0, 0)] - p[(0, 0)]).abs() < 1e-8);
        assert!((s.cov[(0, 0)] - v0).abs() < 1e-10);
    }
}

#[test]
fn backward_terminal_example() {
    let model = scalar_rw(1.0);
    let thetas = vec![NoisePair::new(sc(0.0, 1.0), sc(0.0, 2.0))];
    let pass = backward_info_recursion(&model, &thetas, &obs(&[4.0])).unwrap();
    let last = pass.filtered(1);
    assert!((last.info_mat[(0, 0)] - 0.5).abs() < 1e-15);
    assert!((last.info_vec[0] - 2.0).abs() < 1e-15);
    assert_eq!(pass.predicted(1), &BackwardInfo::zero(1));
}

#[test]
fn backward_zero_observation_matrix() {
    let mut model = scalar_rw(1.0);
    model
        .set_observation_matrix(dpmss::TimeVarying::Constant(DMatrix::zeros(1, 1)))
        .unwrap();
    let thetas: Vec<NoisePair> = (0..3).map(|_| NoisePair::new(sc(0.3, 1.0), sc(0.1, 1.0))).collect();
    let pass = backward_info_recursion(&model, &thetas, &obs(&[1.0, 2.0, 3.0])).unwrap();
    for t in 0..=3 {
        assert_eq!(pass.predicted(t).info_mat[(0, 0)], 0.0);
        assert_eq!(pass.predicted(t).info_vec[0], 0.0);
    }
}

#[test]
fn backward_singular_observation_noise() {
    let model = scalar_rw(1.0);
    let thetas = vec![NoisePair::new(sc(0.0, 1.0), sc(0.0, 0.0)), NoisePair::new(sc(0.0, 1.0), sc(0.0, 1.0))];
    let err = backward_info_recursion(&model, &thetas, &obs(&[1.0, 2.0])).unwrap_err();
    assert_eq!(err, dpmss::Error::SingularObservationNoise { t: 1 });
}

#[test]
fn backward_matches_dense_oracle() {
    let mut rng = RngStream::new(13, 0);
    for _ in 0..50 {
        let inst = random_instance(&mut rng, 3, 2, 10);
        let pass = backward_info_recursion(&inst.model, &inst.thetas, &inst.obs).unwrap();
        for s in 0..=inst.obs.len() {
            let (jm, jv) = dense_backward_info(&inst.model, &inst.thetas, &inst.obs, s);
            let got = pass.predicted(s);
            let scale = 1.0 + jm.amax() + jv.amax();
            assert!(max_abs_diff(&got.info_mat, &jm) < 1e-8 * scale, "s={s}: {} vs {}", got.info_mat, jm);
            assert!(max_abs_diff_vec(&got.info_vec, &jv) < 1e-8 * scale, "s={s}: {} vs {}", got.info_vec, jv);
        }
    }
}

fn combined_at(inst: &RandomInstance, t: usize, cand: &NoisePair) -> f64 {
    let mut thetas = inst.thetas.clone();
    thetas[t - 1] = cand.clone();
    let filt = kalman_filter(&inst.model, &thetas[..t - 1], &inst.obs[..t - 1]).unwrap();
    let pass = backward_info_recursion(&inst.model, &thetas, &inst.obs).unwrap();
    let b = kalman_step(&inst.model, t, filt.last().unwrap(), cand, &inst.obs[t - 1]).unwrap();
    combined_loglik_at(&b, pass.predicted(t))
}

#[test]
fn combined_loglik_differences_match_direct_likelihood() {
    let mut rng = RngStream::new(14, 0);
    for _ in 0..50 {
        let inst = random_instance(&mut rng, 3, 2, 10);
        let big_t = inst.obs.len();
        let nv = inst.model.dims().n_v;
        let nz = inst.model.dims().n_z;
        for t in 1..=big_t {
            let r1 = (rng.uniform() * (nv + 1) as f64) as usize;
            let r2 = (rng.uniform() * (nv + 1) as f64) as usize;
            let a = NoisePair::new(random_cluster(nv, r1.min(nv), &mut rng), random_w_cluster(nz, &mut rng));
            let b = NoisePair::new(random_cluster(nv, r2.min(nv), &mut rng), random_w_cluster(nz, &mut rng));
            let diff = combined_at(&inst, t, &a) - combined_at(&inst, t, &b);
            let mut ta = inst.thetas.clone();
            ta[t - 1] = a;
            let mut tb = inst.thetas.clone();
            tb[t - 1] = b;
            let direct = kalman_loglik(&inst.model, &ta, &inst.obs).unwrap()
                - kalman_loglik(&inst.model, &tb, &inst.obs).unwrap();
            assert!(close(diff, direct, 1e-8), "t={t}: {diff} vs {direct}");
        }
    }
}

#[test]
fn combined_loglik_without_future_is_forward_increment() {
    let model = scalar_rw(1.0);
    let theta = NoisePair::new(sc(0.2, 1.0), sc(-0.1, 0.5));
    let b = kalman_step(&model, 1, &KalmanBelief::initial(&model), &theta, &DVector::from_element(1, 0.7)).unwrap();
    assert_eq!(combined_loglik_at(&b, &BackwardInfo::zero(1)), b.loglik_increment);
}

#[test]
fn combined_loglik_degenerate_limit() {
    let back = BackwardInfo {
        info_mat: DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
        info_vec: DVector::from_vec(vec![0.4, -1.2]),
    };
    let mean = DVector::from_vec(vec![0.5, 1.5]);
    let exact = KalmanBelief::from_moments(mean.clone(), DMatrix::zeros(2, 2), 1);
    let near = KalmanBelief::from_moments(mean, DMatrix::identity(2, 2) * 1e-12, 1);
    let a = combined_loglik_at(&exact, &back);
    // εI is above the relative cutoff, so this exercises the full-rank branch.
    let b = combined_loglik_at(&near, &back);
    assert!((a - b).abs() < 1e-9, "{a} vs {b}");
}

#[test]
fn simulation_smoother_deterministic_path() {
    let model = scalar_rw(0.0);
    let thetas: Vec<NoisePair> = (0..4).map(|i| NoisePair::new(sc(i as f64, 0.0), sc(0.0, 1.0))).collect();
    let mut rng = RngStream::new(5, 0);
    let path = simulation_smoother(&model, &thetas, &obs(&[9.0, 9.0, 9.0, 9.0]), &mut rng).unwrap();
    let expected = [0.0, 0.0, 1.0, 3.0, 6.0];
    for (x, e) in path.iter().zip(expected) {
        assert_eq!(x[0], e);
    }
}

#[test]
fn simulation_smoother_moments() {
    let model = scalar_rw(1.0);
    let thetas: Vec<NoisePair> = [(0.1, 0.5), (-0.3, 1.0), (0.0, 0.2), (0.4, 0.7)]
        .iter()
        .map(|&(m, v)| NoisePair::new(sc(m, v), sc(0.0, 0.8)))
        .collect();
    let z = obs(&[0.5, -0.2, 0.3, 1.4]);
    let sm = kalman_smoother(&model, &thetas, &z).unwrap();
    let n = 100_000;
    let mut rng = RngStream::new(6, 0);
    let mut sum = vec![0.0; 5];
    let mut sq = vec![0.0; 5];
    for _ in 0..n {
        let path = simulation_smoother(&model, &thetas, &z, &mut rng).unwrap();
        for t in 0..5 {
            sum[t] += path[t][0];
            sq[t] += path[t][0] * path[t][0];
        }
    }
    for t in 0..5 {
        let mean = sum[t] / n as f64;
        let var = sq[t] / n as f64 - mean * mean;
        let sv = sm[t].cov[(0, 0)];
        assert!((mean - sm[t].mean[0]).abs() < 4.0 * (sv / n as f64).sqrt(), "t={t}");
        assert!((var / sv - 1.0).abs() < 0.05, "t={t}: {var} vs {sv}");
    }
}

#[test]
fn simulated_path_follows_the_dynamics_when_noise_is_degenerate() {
    use dpmss::gaussian::GaussianCluster;
    use dpmss::simulate::simulate_path;
    use dpmss::{NoiseProcess, RngStream};
    use nalgebra::{DMatrix, DVector};

    let f = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
    let g = DMatrix::identity(2, 2);
    let h = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let model = dpmss::LinearGaussianModel::time_invariant(
        f,
        g,
        h,
        DVector::from_vec(vec![1.0, 0.5]),
        DMatrix::zeros(2, 2),
    )
    .unwrap();
    let v = NoiseProcess::fixed(GaussianCluster::zero(2));
    let w = NoiseProcess::fixed(GaussianCluster::scalar(0.25, 0.0).unwrap());
    let path = simulate_path(&model, v, w, 4, &mut RngStream::new(3, 0)).unwrap();
    assert_eq!(path.states.len(), 5);
    for t in 1..=4 {
        assert_eq!(path.states[t][0], 1.0 + 0.5 * t as f64);
        assert_eq!(path.z[t - 1][0], path.states[t][0] + 0.25);
    }
}
