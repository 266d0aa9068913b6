//! Compares the data-parallel inner loops against a sequential baseline.
//!
//! With the default `parallel` feature each workload is measured inside a
//! 1-thread rayon pool and with the machine's default pool, so one run shows
//! the scaling. Building with `--no-default-features` benches the true
//! sequential code path (no rayon in the binary at all).

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use flair_core::{
    calibrate, observe, ode_sample, posterior_ensemble, AnalyticField, Forward, GaussianMixture,
    LinearOperator, RegWeighting, SignalShape, SolverConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Runs `f` inside a single-thread rayon pool when `single` is set.
#[cfg(feature = "parallel")]
fn with_threads<T: Send>(single: bool, f: impl FnOnce() -> T + Send) -> T {
    use std::sync::OnceLock;
    if single {
        static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
        POOL.get_or_init(|| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(1)
                .build()
                .expect("single-thread pool")
        })
        .install(f)
    } else {
        f()
    }
}

#[cfg(not(feature = "parallel"))]
fn with_threads<T>(_single: bool, f: impl FnOnce() -> T) -> T {
    f()
}

fn two_mode_prior(dim: usize) -> GaussianMixture {
    let hi = vec![1.0; dim];
    let lo = vec![-1.0; dim];
    GaussianMixture::new(vec![0.5, 0.5], vec![hi, lo], vec![0.4, 0.4]).unwrap()
}

fn bench_workloads(c: &mut Criterion, label: &str, single: bool) {
    let field1 = AnalyticField::new(two_mode_prior(1));
    c.bench_function(&format!("ode_sample/n2000_steps50/{label}"), |b| {
        b.iter(|| with_threads(single, || ode_sample(black_box(&field1), 2000, 50, 7).unwrap()))
    });

    let prior = two_mode_prior(16);
    let field = AnalyticField::new(prior.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let samples: Vec<Vec<f64>> = (0..32).map(|_| prior.sample(&mut rng)).collect();
    c.bench_function(&format!("calibrate/n32_d16/{label}"), |b| {
        b.iter(|| with_threads(single, || calibrate(black_box(&field), &samples, 11).unwrap()))
    });

    let op = LinearOperator::mask(SignalShape::Flat(16), (0..8).collect()).unwrap();
    let x_true = prior.sample(&mut ChaCha8Rng::seed_from_u64(5));
    let obs = observe(&op, &x_true, 0.05, 1).unwrap();
    let cfg = SolverConfig::new(RegWeighting::RsdOmegaT, 9);
    c.bench_function(&format!("posterior_ensemble/k16_d16/{label}"), |b| {
        b.iter(|| {
            with_threads(single, || {
                posterior_ensemble(&field, &obs, &Forward::Linear(&op), &cfg, 16).unwrap()
            })
        })
    });
}

#[cfg(feature = "parallel")]
fn suite(c: &mut Criterion) {
    bench_workloads(c, "threads1", true);
    bench_workloads(c, "threads_default", false);
}

#[cfg(not(feature = "parallel"))]
fn suite(c: &mut Criterion) {
    bench_workloads(c, "sequential", false);
}

criterion_group!(benches, suite);
criterion_main!(benches);
