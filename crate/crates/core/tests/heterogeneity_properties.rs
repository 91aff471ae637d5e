use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sitebal_core::heterogeneity::{
    chi_square_cdf, chi_square_quantile, estimate_theta, q_statistic, SiteEffectSet,
};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal as StatNormal};

fn random_effects(rng: &mut ChaCha8Rng) -> SiteEffectSet {
    let j = rng.random_range(2..=15);
    let est = (0..j).map(|_| rng.random_range(-1.0..1.0)).collect();
    let se = (0..j).map(|_| rng.random_range(0.02..0.5)).collect();
    SiteEffectSet::new(est, se).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn q_is_non_increasing(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = random_effects(&mut rng);
        let mut prev = f64::INFINITY;
        for k in 0..200 {
            let theta = 1e-4 * 1.08f64.powi(k) - 1e-4;
            let q = q_statistic(&e, theta).unwrap();
            prop_assert!(q >= 0.0);
            prop_assert!(q <= prev * (1.0 + 1e-12), "Q rose at θ={}: {} > {}", theta, q, prev);
            prev = q;
        }
    }

    #[test]
    fn theta_hat_solves_the_estimating_equation(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = random_effects(&mut rng);
        let r = estimate_theta(&e, 0.05).unwrap();
        prop_assert!(r.theta_hat >= 0.0);
        let target = (e.len() - 1) as f64;
        if r.theta_hat > 0.0 {
            let q = q_statistic(&e, r.theta_hat).unwrap();
            prop_assert!((q - target).abs() <= 1e-6, "Q(θ̂) = {}", q);
        } else {
            prop_assert!(q_statistic(&e, 0.0).unwrap() <= target);
        }
        prop_assert!(r.ci_variance.0 <= r.theta_hat && r.theta_hat <= r.ci_variance.1);
        prop_assert!(r.ci_sd.0 <= r.theta_sd && r.theta_sd <= r.ci_sd.1);
    }

    #[test]
    fn quantile_inverts_an_independent_cdf(df in 1u32..60, p in 0.001..0.999f64) {
        let q = chi_square_quantile(df as f64, p).unwrap();
        let reference = ChiSquared::new(df as f64).unwrap();
        prop_assert!((reference.cdf(q) - p).abs() <= 1e-10, "df {} p {}: cdf {}", df, p, reference.cdf(q));
        let r = reference.inverse_cdf(p);
        prop_assert!((q - r).abs() <= 1e-8 * r.max(1.0), "df {} p {}: {} vs {}", df, p, q, r);
    }

    #[test]
    fn series_and_continued_fraction_agree_at_the_switch(df in 1u32..80, eps in 1e-6..1e-3f64) {
        // the CDF switches evaluation method at x/2 = df/2 + 1
        let x = df as f64 + 2.0;
        let below = chi_square_cdf(df as f64, x - eps);
        let above = chi_square_cdf(df as f64, x + eps);
        let reference = ChiSquared::new(df as f64).unwrap();
        prop_assert!((below - reference.cdf(x - eps)).abs() < 1e-12);
        prop_assert!((above - reference.cdf(x + eps)).abs() < 1e-12);
    }
}

#[test]
fn one_df_quantile_is_a_squared_normal_quantile() {
    let normal = StatNormal::new(0.0, 1.0).unwrap();
    for p in [0.5, 0.9, 0.95, 0.99] {
        let z = normal.inverse_cdf(0.5 + p / 2.0);
        let q = chi_square_quantile(1.0, p).unwrap();
        assert!(
            (q - z * z).abs() < 1e-8 * (z * z),
            "p={p}: {q} vs {}",
            z * z
        );
    }
}

#[test]
fn interval_coverage_is_calibrated() {
    let draws = 500;
    let theta = 0.01f64;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut covered = 0;
    for _ in 0..draws {
        let se: Vec<f64> = (0..12).map(|_| rng.random_range(0.05..0.15)).collect();
        let est = se
            .iter()
            .map(|s| 0.2 + theta.sqrt() * normal.sample(&mut rng) + s * normal.sample(&mut rng))
            .collect();
        let r = estimate_theta(&SiteEffectSet::new(est, se).unwrap(), 0.05).unwrap();
        if r.ci_variance.0 <= theta && theta <= r.ci_variance.1 {
            covered += 1;
        }
    }
    let rate = covered as f64 / draws as f64;
    assert!((0.91..=0.985).contains(&rate), "coverage {rate}");
}
