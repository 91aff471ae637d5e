use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sitebal_bench::{linear_mode, site, sites, target};
use sitebal_core::estimators::{density_ratio_fit, outcome_model_point};
use sitebal_core::heterogeneity::{estimate_theta, SiteEffectSet};
use sitebal_core::{lambda_sweep, solve_weights, BalanceProblem, FeatureMapSpec, QpSettings};

fn weights(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_weights");
    group.sample_size(10);
    for (n, d) in [(500, 20), (2000, 60)] {
        let s = site(1, "a", n, d);
        let mode = linear_mode(std::slice::from_ref(&s));
        let tgt = target(2, 1000, d);
        for lambda in [1e-4, 0.03] {
            group.bench_with_input(
                BenchmarkId::new(format!("n{n}_d{d}"), lambda),
                &lambda,
                |b, &lambda| {
                    b.iter(|| {
                        let prob = BalanceProblem {
                            site: &s,
                            target: &tgt,
                            mode: &mode,
                            lambda,
                        };
                        black_box(solve_weights(&prob, &QpSettings::default()).unwrap())
                    })
                },
            );
        }
    }
    group.finish();
}

fn sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("lambda_sweep");
    group.sample_size(10);
    let all = sites(3, 4, 500, 20);
    let mode = linear_mode(&all);
    let tgt = target(4, 1000, 20);
    let grid: Vec<f64> = (0..12).map(|k| 10f64.powi(k - 6)).collect();
    group.bench_function("4_sites_n500_12_points", |b| {
        b.iter(|| {
            black_box(lambda_sweep(&all, &tgt, &mode, &grid, &QpSettings::default()).unwrap())
        })
    });
    group.finish();
}

fn estimators(c: &mut Criterion) {
    let s = site(5, "a", 2000, 10);
    let own: Vec<Vec<f64>> = s.covariates().map(<[f64]>::to_vec).collect();
    let tgt = target(6, 2000, 10);
    let sample = tgt.sample().unwrap();
    let map = FeatureMapSpec::standardized().fit(&own).unwrap();
    c.bench_function("density_ratio_fit_n2000_d10", |b| {
        b.iter(|| black_box(density_ratio_fit(&own, sample, &map).unwrap()))
    });
    c.bench_function("outcome_model_n2000_d10", |b| {
        b.iter(|| black_box(outcome_model_point(&s, sample, &map).unwrap()))
    });
    let est: Vec<f64> = (0..50).map(|j| 0.1 * (j as f64).sin()).collect();
    let se: Vec<f64> = (0..50).map(|j| 0.05 + 0.001 * j as f64).collect();
    let effects = SiteEffectSet::new(est, se).unwrap();
    c.bench_function("estimate_theta_j50", |b| {
        b.iter(|| black_box(estimate_theta(&effects, 0.05).unwrap()))
    });
}

criterion_group!(benches, weights, sweep, estimators);
criterion_main!(benches);
