use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sitebal_core::estimators::{
    augmented_estimate, density_ratio_fit, doubly_robust_point, ipw_estimate, least_squares,
    naive_estimate, outcome_model_estimate, outcome_model_point, weighted_arm_means,
    weighting_estimate, BootstrapOptions, OutcomeModels,
};
use sitebal_core::features::{FeatureMap, FeatureMapSpec};
use sitebal_core::model::{SiteDataset, UnitRecord};

fn make_site(x: Vec<Vec<f64>>, z: Vec<bool>, y: Vec<f64>) -> SiteDataset {
    let units = x
        .into_iter()
        .zip(z)
        .zip(y)
        .enumerate()
        .map(|(row, ((covariates, treated), outcome))| UnitRecord {
            covariates,
            treated,
            outcome,
            site_id: "a".into(),
            row,
        })
        .collect();
    SiteDataset::new("a".into(), units, None).unwrap()
}

/// Site with `n` units, two covariates, half treated, linear outcomes.
fn random_site(rng: &mut ChaCha8Rng, n: usize, noise: f64) -> SiteDataset {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| vec![normal.sample(rng), normal.sample(rng)])
        .collect();
    let z: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let y = x
        .iter()
        .zip(&z)
        .map(|(xi, &zi)| {
            let tau = 1.0 + 0.5 * xi[0];
            0.3 + xi[0] - 0.7 * xi[1] + if zi { tau } else { 0.0 } + noise * normal.sample(rng)
        })
        .collect();
    make_site(x, z, y)
}

fn shifted_target(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|_| vec![0.5 + normal.sample(rng), normal.sample(rng)])
        .collect()
}

fn identity_map(site: &SiteDataset) -> FeatureMap {
    let x: Vec<Vec<f64>> = site.covariates().map(<[f64]>::to_vec).collect();
    FeatureMapSpec::identity().fit(&x).unwrap()
}

/// Random nonnegative weights with `Σ_T γ = n1` and `Σ_C γ = n0`.
fn random_gamma(rng: &mut ChaCha8Rng, site: &SiteDataset) -> Vec<f64> {
    let mut g: Vec<f64> = (0..site.n()).map(|_| rng.random_range(0.0..3.0)).collect();
    for treated in [true, false] {
        let idx: Vec<usize> = (0..site.n())
            .filter(|&i| site.units()[i].treated == treated)
            .collect();
        let s: f64 = idx.iter().map(|&i| g[i]).sum();
        for &i in &idx {
            g[i] *= idx.len() as f64 / s;
        }
    }
    g
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn outcome_shift_leaves_estimates_unchanged(seed in any::<u64>(), c in -50.0..50.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let site = random_site(&mut rng, 40, 1.0);
        let shifted = site.with_outcomes(&site.outcomes().iter().map(|y| y + c).collect::<Vec<_>>());
        let target = shifted_target(&mut rng, 30);
        let map = identity_map(&site);
        let gamma = random_gamma(&mut rng, &site);
        let ratios: Vec<f64> = (0..site.n()).map(|_| rng.random_range(0.1..3.0)).collect();
        let pairs = [
            (weighting_estimate(&site, &gamma).unwrap().estimate, weighting_estimate(&shifted, &gamma).unwrap().estimate),
            (naive_estimate(&site).estimate, naive_estimate(&shifted).estimate),
            (outcome_model_point(&site, &target, &map).unwrap(), outcome_model_point(&shifted, &target, &map).unwrap()),
            (doubly_robust_point(&site, &target, &map, &ratios).unwrap(), doubly_robust_point(&shifted, &target, &map, &ratios).unwrap()),
            (ipw_estimate(&site, &ratios, true).unwrap().estimate, ipw_estimate(&shifted, &ratios, true).unwrap().estimate),
        ];
        for (k, (a, b)) in pairs.into_iter().enumerate() {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + c.abs()), "estimator {}: {} vs {}", k, a, b);
        }
    }

    #[test]
    fn weighted_means_stay_within_arm_ranges(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let site = random_site(&mut rng, 30, 2.0);
        let gamma = random_gamma(&mut rng, &site);
        let (m1, m0) = weighted_arm_means(&site, &gamma).unwrap();
        for (treated, m) in [(true, m1), (false, m0)] {
            let ys: Vec<f64> = site.units().iter().filter(|u| u.treated == treated).map(|u| u.outcome).collect();
            let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(m >= lo - 1e-12 && m <= hi + 1e-12);
        }
    }

    #[test]
    fn standard_errors_are_finite_and_nonnegative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let site = random_site(&mut rng, 30, 1.0);
        let gamma = random_gamma(&mut rng, &site);
        let ratios: Vec<f64> = (0..site.n()).map(|_| rng.random_range(0.0..3.0)).collect();
        for se in [
            weighting_estimate(&site, &gamma).unwrap().std_error,
            naive_estimate(&site).std_error,
            ipw_estimate(&site, &ratios, false).unwrap().std_error,
        ] {
            prop_assert!(se.is_finite() && se >= 0.0);
        }
    }
}

#[test]
fn outcome_model_on_own_sample_is_interacted_regression() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let site = random_site(&mut rng, 80, 1.0);
    let own: Vec<Vec<f64>> = site.covariates().map(<[f64]>::to_vec).collect();
    let map = identity_map(&site);
    let om = outcome_model_point(&site, &own, &map).unwrap();

    // Y on Z, centred X and Z·(centred X): the Z coefficient is the
    // regression-adjusted effect at the sample mean
    let mean: Vec<f64> = (0..2)
        .map(|j| own.iter().map(|x| x[j]).sum::<f64>() / own.len() as f64)
        .collect();
    let design: Vec<Vec<f64>> = site
        .units()
        .iter()
        .map(|u| {
            let c: Vec<f64> = u.covariates.iter().zip(&mean).map(|(x, m)| x - m).collect();
            let z = u.z();
            vec![z, c[0], c[1], z * c[0], z * c[1]]
        })
        .collect();
    let fit = least_squares(&design, &site.outcomes()).unwrap();
    assert!(
        (om - fit.coefficients[1]).abs() < 1e-10,
        "{om} vs {}",
        fit.coefficients[1]
    );
}

#[test]
fn augmented_reductions() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let site = random_site(&mut rng, 60, 1.0);
    let target = shifted_target(&mut rng, 50);
    let map = identity_map(&site);
    let models = OutcomeModels::fit(&site, &map).unwrap();
    let feats = map.apply_all(site.covariates()).unwrap();
    let m1: Vec<f64> = feats.iter().map(|f| models.treated.predict(f)).collect();
    let m0: Vec<f64> = feats.iter().map(|f| models.control.predict(f)).collect();
    let tmean = map.mean(target.iter().map(Vec::as_slice)).unwrap();
    let (t1, t0) = (
        models.treated.predict(&tmean),
        models.control.predict(&tmean),
    );

    // zero ratios: outcome model
    let zero = vec![0.0; site.n()];
    let aug = augmented_estimate(&site, &zero, &m1, &m0, t1, t0).unwrap();
    assert!((aug - outcome_model_point(&site, &target, &map).unwrap()).abs() < 1e-12);
    assert!((doubly_robust_point(&site, &target, &map, &zero).unwrap() - aug).abs() < 1e-12);
}

#[test]
fn doubly_robust_is_exact_under_a_noiseless_linear_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let site = random_site(&mut rng, 60, 0.0);
    let target = shifted_target(&mut rng, 500);
    let map = identity_map(&site);
    let truth = target.iter().map(|x| 1.0 + 0.5 * x[0]).sum::<f64>() / target.len() as f64;
    // arbitrary, even badly wrong, ratios
    let ratios: Vec<f64> = (0..site.n()).map(|_| rng.random_range(0.0..10.0)).collect();
    let dr = doubly_robust_point(&site, &target, &map, &ratios).unwrap();
    assert!((dr - truth).abs() < 1e-9, "{dr} vs {truth}");
}

#[test]
fn ratio_is_flat_for_identically_distributed_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let draw = |rng: &mut ChaCha8Rng, n| -> Vec<Vec<f64>> {
        (0..n).map(|_| vec![normal.sample(rng)]).collect()
    };
    let exp = draw(&mut rng, 20_000);
    let tgt = draw(&mut rng, 20_000);
    let map = FeatureMapSpec::identity().fit(&exp).unwrap();
    let ratio = density_ratio_fit(&exp, &tgt, &map).unwrap();
    for x in draw(&mut rng, 200) {
        let r = ratio.ratio(&x).unwrap();
        assert!((r - 1.0).abs() < 0.05, "ratio {r} at {x:?}");
    }
}

#[test]
fn ratio_recovers_a_mean_shift() {
    // N(0,1) vs N(0.5,1): log ratio is 0.5x − 0.125, which the logistic model contains
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let exp: Vec<Vec<f64>> = (0..40_000).map(|_| vec![normal.sample(&mut rng)]).collect();
    let tgt: Vec<Vec<f64>> = (0..20_000)
        .map(|_| vec![0.5 + normal.sample(&mut rng)])
        .collect();
    let map = FeatureMapSpec::identity().fit(&exp).unwrap();
    let ratio = density_ratio_fit(&exp, &tgt, &map).unwrap();
    for k in -6..=6 {
        let x = k as f64 * 0.25;
        let truth = (0.5 * x - 0.125f64).exp();
        let r = ratio.ratio(&[x]).unwrap();
        assert!((r / truth - 1.0).abs() < 0.1, "x={x}: {r} vs {truth}");
    }
}

#[test]
fn bootstrap_se_tracks_sampling_spread() {
    let reps = 150;
    let mut estimates = Vec::with_capacity(reps);
    let mut ses = Vec::with_capacity(reps);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let target = shifted_target(&mut rng, 400);
    for r in 0..reps {
        let site = random_site(&mut rng, 120, 1.0);
        let map = identity_map(&site);
        let est = outcome_model_estimate(
            &site,
            &target,
            &map,
            &BootstrapOptions {
                replicates: 200,
                seed: r as u64,
            },
        )
        .unwrap();
        estimates.push(est.estimate);
        ses.push(est.std_error);
    }
    let mean = estimates.iter().sum::<f64>() / reps as f64;
    let sd =
        (estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0)).sqrt();
    let mean_se = ses.iter().sum::<f64>() / reps as f64;
    assert!(
        (mean_se / sd - 1.0).abs() < 0.25,
        "bootstrap {mean_se} vs monte carlo {sd}"
    );
}

#[test]
fn constant_outcomes_give_the_arm_gap_for_any_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let base = random_site(&mut rng, 40, 1.0);
    let y: Vec<f64> = base
        .units()
        .iter()
        .map(|u| if u.treated { 5.0 } else { 3.0 })
        .collect();
    let site = base.with_outcomes(&y);
    let map = identity_map(&site);
    for shift in [-3.0, 0.0, 4.0] {
        let target: Vec<Vec<f64>> = (0..30)
            .map(|_| {
                vec![
                    shift + rng.random_range(-1.0..1.0),
                    rng.random_range(-5.0..5.0),
                ]
            })
            .collect();
        let om = outcome_model_point(&site, &target, &map).unwrap();
        assert!((om - 2.0).abs() < 1e-10, "{om}");
    }
}

#[test]
fn noiseless_linear_outcome_model_is_exact_and_dr_agrees() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let site = random_site(&mut rng, 80, 0.0);
    let target = shifted_target(&mut rng, 300);
    let map = identity_map(&site);
    let truth = target.iter().map(|x| 1.0 + 0.5 * x[0]).sum::<f64>() / target.len() as f64;
    let om = outcome_model_estimate(
        &site,
        &target,
        &map,
        &BootstrapOptions {
            replicates: 20,
            seed: 1,
        },
    )
    .unwrap();
    assert!(
        (om.estimate - truth).abs() < 1e-8,
        "{} vs {truth}",
        om.estimate
    );
    // correctly specified ratio for the mean shift of 0.5 in the first covariate
    let ratio = density_ratio_fit(
        &site.covariates().map(<[f64]>::to_vec).collect::<Vec<_>>(),
        &target,
        &map,
    )
    .unwrap();
    let r = ratio.ratios_for(&site).unwrap();
    let dr = doubly_robust_point(&site, &target, &map, &r.values).unwrap();
    assert!((dr - om.estimate).abs() < 1e-6, "{dr} vs {}", om.estimate);
}

#[test]
fn extreme_ratio_is_finite_and_reported() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let site = random_site(&mut rng, 20, 1.0);
    let mut ratios = vec![1.0; site.n()];
    ratios[3] = 1e6;
    let e = ipw_estimate(&site, &ratios, false).unwrap();
    assert!(e.estimate.is_finite() && e.std_error.is_finite());
    assert_eq!(e.max_ratio, Some(1e6));
}
