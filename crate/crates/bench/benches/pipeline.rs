use criterion::{black_box, criterion_group, criterion_main, Criterion};

use psd_bench::{bench_config, bench_measurements, bench_model};
use psd_core::hyperopt::{joint_log_marginal_likelihood, HyperParams};
use psd_core::pipeline::{self, ConstraintMode, Estimator};

fn bench_kernel_matrix(c: &mut Criterion) {
    let cfg = bench_config();
    let wavelengths = cfg.wavelength_grid().unwrap();
    let sizes = cfg.size_grid().unwrap();
    let optics = cfg.optics.optics_constant().unwrap();
    c.bench_function("mie_kernel_matrix_50x120", |b| {
        b.iter(|| psd_core::kernel_matrix(black_box(&wavelengths), black_box(&sizes), &optics))
    });
}

fn bench_constrained_posterior(c: &mut Criterion) {
    let cfg = bench_config();
    let model = bench_model(&cfg);
    let set = bench_measurements(&cfg, &model);
    c.bench_function("constrained_posterior_q128", |b| {
        b.iter(|| {
            pipeline::invert(
                black_box(&cfg),
                &model,
                &set,
                ConstraintMode::Constrained,
                Estimator::Posterior,
            )
            .unwrap()
        })
    });
}

fn bench_joint_lml(c: &mut Criterion) {
    let cfg = bench_config();
    let model = bench_model(&cfg);
    let set = bench_measurements(&cfg, &model);
    let ctx = model.lml_context();
    let mu = set.mu_vector();
    let params = HyperParams {
        sigma_f: 4.0,
        ell: 0.05,
        sigma_noise: set.sigma_used.unwrap().max(1e-6),
    };
    c.bench_function("joint_lml_eval", |b| {
        b.iter(|| joint_log_marginal_likelihood(black_box(&ctx), &params, &mu).unwrap())
    });
}

criterion_group!(
    benches,
    bench_kernel_matrix,
    bench_constrained_posterior,
    bench_joint_lml
);
criterion_main!(benches);
