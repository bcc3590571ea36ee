use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use lpci_bench::synthetic;
use lpci_core::{
    fit_rbc, h_ce_optimal, plugin_moments, rho_opt, rot_pilot_config, Boundary, Centering, Dgp,
    IntegrationRange, Kernel, LpConfig, McSettings, PipelineSpec,
};

fn config(h: f64) -> LpConfig {
    LpConfig::new(1, 0, h, Kernel::Epanechnikov, 0.1).unwrap()
}

fn bench_fit(c: &mut Criterion) {
    let (xs, ys) = synthetic(500);
    let cfg = config(0.3);
    c.bench_function("fit_rbc_n500", |b| {
        b.iter(|| fit_rbc(black_box(&xs), black_box(&ys), black_box(&cfg)).unwrap())
    });
}

fn bench_plugin_moments(c: &mut Criterion) {
    let (xs, ys) = synthetic(300);
    let cfg = config(0.35);
    c.bench_function("plugin_moments_n300", |b| {
        b.iter(|| plugin_moments(black_box(&xs), black_box(&ys), black_box(&cfg), Centering::Rbc).unwrap())
    });
}

fn bench_ce_bandwidth(c: &mut Criterion) {
    let (xs, ys) = synthetic(300);
    let cfg = config(0.35);
    c.bench_function("h_ce_optimal_n300", |b| {
        b.iter(|| h_ce_optimal(black_box(&xs), black_box(&ys), black_box(&cfg), 0.05).unwrap())
    });
}

fn bench_rho_opt(c: &mut Criterion) {
    c.bench_function("rho_opt_triangular_p1", |b| {
        b.iter(|| {
            rho_opt(black_box(&Kernel::Triangular), 1, 0, IntegrationRange::interior()).unwrap()
        })
    });
}

fn bench_pilot(c: &mut Criterion) {
    let (xs, _) = synthetic(500);
    let cfg = config(0.3).with_boundary(Boundary::Auto);
    c.bench_function("rot_pilot_config_n500", |b| {
        b.iter(|| rot_pilot_config(black_box(&xs), black_box(&cfg)).unwrap())
    });
}

fn bench_mc(c: &mut Criterion) {
    let dgp = Dgp::by_name("null-linear").unwrap();
    let settings = McSettings::default();
    let methods = [PipelineSpec::RbcMse];
    let mut group = c.benchmark_group("harness");
    group.sample_size(10);
    group.bench_function("run_mc_n80_r100", |b| {
        b.iter(|| {
            lpci_core::run_mc(
                black_box(&dgp),
                80,
                100,
                0.05,
                black_box(&methods),
                7,
                black_box(&settings),
            )
            .unwrap()
        })
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_fit,
    bench_plugin_moments,
    bench_ce_bandwidth,
    bench_rho_opt,
    bench_pilot,
    bench_mc
);
criterion_main!(benches);
