//! Synthetic fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sitebal_core::{BalanceMode, FeatureMapSpec, SiteDataset, TargetSpec, UnitRecord};

/// One site of `n` units with `d` covariates, alternating continuous and
/// binary, half treated.
pub fn site(seed: u64, id: &str, n: usize, d: usize) -> SiteDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let units = (0..n)
        .map(|row| {
            let covariates: Vec<f64> = (0..d)
                .map(|j| {
                    if j % 2 == 0 {
                        normal.sample(&mut rng)
                    } else {
                        rng.random_bool(0.4) as u8 as f64
                    }
                })
                .collect();
            let outcome = covariates.iter().sum::<f64>() + normal.sample(&mut rng);
            UnitRecord {
                covariates,
                treated: row % 2 == 0,
                outcome,
                site_id: id.into(),
                row,
            }
        })
        .collect();
    SiteDataset::new(id.into(), units, None).expect("both arms present")
}

/// `count` sites of equal size.
pub fn sites(seed: u64, count: usize, n: usize, d: usize) -> Vec<SiteDataset> {
    (0..count)
        .map(|k| site(seed.wrapping_add(k as u64), &format!("s{k}"), n, d))
        .collect()
}

/// A target sample shifted by 0.2 in the continuous covariates and with
/// binary prevalence 0.5.
pub fn target(seed: u64, m: usize, d: usize) -> TargetSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    TargetSpec::Sample(
        (0..m)
            .map(|_| {
                (0..d)
                    .map(|j| {
                        if j % 2 == 0 {
                            0.2 + normal.sample(&mut rng)
                        } else {
                            rng.random_bool(0.5) as u8 as f64
                        }
                    })
                    .collect()
            })
            .collect(),
    )
}

/// Linear mode with the same standardized map for both terms.
pub fn linear_mode(sites: &[SiteDataset]) -> BalanceMode {
    let pooled: Vec<Vec<f64>> = sites
        .iter()
        .flat_map(|s| s.covariates().map(<[f64]>::to_vec))
        .collect();
    let map = FeatureMapSpec::standardized()
        .fit(&pooled)
        .expect("nonempty sample");
    BalanceMode::linear(map.clone(), map)
}
