use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use dpmss::mcmc::{gibbs_sweep, UpdateScheme};
use dpmss::rbpf::{rbpf_init, rbpf_step, RbpfConfig};
use dpmss::statespace::{backward_info_recursion, kalman_filter, kalman_smoother};
use dpmss::RngStream;
use dpmss_bench::Fixture;

fn kalman(c: &mut Criterion) {
    let mut group = c.benchmark_group("kalman");
    for horizon in [100, 400] {
        let fx = Fixture::changepoint(horizon, 1);
        let thetas = fx.quiet_thetas();
        group.bench_with_input(BenchmarkId::new("filter", horizon), &horizon, |b, _| {
            b.iter(|| kalman_filter(&fx.model, &thetas, &fx.z).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("smoother", horizon), &horizon, |b, _| {
            b.iter(|| kalman_smoother(&fx.model, &thetas, &fx.z).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("backward", horizon), &horizon, |b, _| {
            b.iter(|| backward_info_recursion(&fx.model, &thetas, &fx.z).unwrap())
        });
    }
    group.finish();
}

fn sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("gibbs_sweep");
    group.sample_size(20);
    for horizon in [100, 200, 400] {
        let fx = Fixture::changepoint(horizon, 2);
        let mut st = fx.chain(3);
        let mut rng = RngStream::new(4, 0);
        group.bench_with_input(BenchmarkId::from_parameter(horizon), &horizon, |b, _| {
            b.iter(|| gibbs_sweep(&mut st, &fx.z, UpdateScheme::Joint, &mut rng).unwrap())
        });
    }
    group.finish();
}

fn particle_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("rbpf_step");
    group.sample_size(20);
    let fx = Fixture::changepoint(60, 5);
    for n in [100, 1000] {
        let mut ens = rbpf_init(&fx.model, fx.v.clone(), fx.w.clone(), &RbpfConfig::new(n, 6)).unwrap();
        for z in &fx.z[..50] {
            rbpf_step(&mut ens, &fx.model, z).unwrap();
        }
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter_batched(
                || ens.clone(),
                |mut e| rbpf_step(&mut e, &fx.model, &fx.z[50]).unwrap(),
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, kalman, sweep, particle_step);
criterion_main!(benches);
