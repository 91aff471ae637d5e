//! Transporting every site to a common target, and the exact
//! decomposition of a weighting estimator's error.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::balance::{solve_weights, BalanceError, BalanceMode, BalanceProblem, WeightSolution};
use crate::estimators::{
    density_ratio_fit, doubly_robust_estimate, ipw_estimate, naive_estimate,
    outcome_model_estimate, weighting_estimate, BootstrapOptions, EstimatorError, Method,
    TransportEstimate,
};
use crate::features::{FeatureError, FeatureMap, FeatureMapSpec, KernelSpec};
use crate::model::{pooled_covariates, PotentialOutcomeOracle, SiteDataset, SiteId, TargetSpec};
use crate::qp::QpSettings;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MultisiteError {
    #[error("no sites to transport")]
    NoSites,
    #[error("every site failed; first failure: {0}")]
    AllSitesFailed(String),
    #[error("invalid lambda {0}")]
    InvalidLambda(f64),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Balance(#[from] BalanceError),
    #[error("{0} per-unit values for {1} units")]
    LengthMismatch(usize, usize),
}

/// Balancing geometry as written in a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModeConfig {
    #[default]
    Linear,
    Kernel {
        k_tau: KernelSpec,
        k_0: KernelSpec,
    },
}

impl ModeConfig {
    pub fn build(
        &self,
        map: &FeatureMap,
        pooled: &[Vec<f64>],
    ) -> Result<BalanceMode, BalanceError> {
        match self {
            ModeConfig::Linear => Ok(BalanceMode::linear(map.clone(), map.clone())),
            ModeConfig::Kernel { k_tau, k_0 } => {
                BalanceMode::kernel(map.clone(), *k_tau, *k_0, pooled)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportConfig {
    pub lambda: f64,
    pub features: FeatureMapSpec,
    pub mode: ModeConfig,
    pub estimators: Vec<Method>,
    /// Normalize IPW within each arm.
    pub hajek: bool,
    pub bootstrap: BootstrapOptions,
    pub solver: QpSettings,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            lambda: 0.03,
            features: FeatureMapSpec::standardized(),
            mode: ModeConfig::Linear,
            estimators: Method::ALL.to_vec(),
            hajek: false,
            bootstrap: BootstrapOptions::default(),
            solver: QpSettings::default(),
        }
    }
}

impl TransportConfig {
    pub fn enabled(&self, m: Method) -> bool {
        self.estimators.contains(&m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteFailure {
    pub site_id: SiteId,
    pub method: Method,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportReport {
    /// Ordered by site, then by method.
    pub estimates: Vec<TransportEstimate>,
    pub weights: Vec<WeightSolution>,
    pub failures: Vec<SiteFailure>,
    pub feature_map: FeatureMap,
}

impl TransportReport {
    pub fn estimate(&self, site: &SiteId, method: Method) -> Option<&TransportEstimate> {
        self.estimates
            .iter()
            .find(|e| &e.site_id == site && e.method == method)
    }

    pub fn by_method(&self, method: Method) -> Vec<&TransportEstimate> {
        self.estimates
            .iter()
            .filter(|e| e.method == method)
            .collect()
    }
}

/// The union of all sites' units, as a target sample.
pub fn overall_target(sites: &[SiteDataset]) -> TargetSpec {
    TargetSpec::Sample(pooled_covariates(sites))
}

#[derive(Default)]
struct SiteOutcome {
    estimates: Vec<TransportEstimate>,
    weights: Option<WeightSolution>,
    failures: Vec<SiteFailure>,
}

impl SiteOutcome {
    fn record<E: std::fmt::Display>(
        &mut self,
        site: &SiteDataset,
        method: Method,
        r: Result<TransportEstimate, E>,
    ) {
        match r {
            Ok(e) => self.estimates.push(e),
            Err(e) => self.fail(site, method, e.to_string()),
        }
    }

    fn fail(&mut self, site: &SiteDataset, method: Method, message: String) {
        self.failures.push(SiteFailure {
            site_id: site.site_id().clone(),
            method,
            message,
        });
    }
}

/// Runs every enabled estimator on every site against one target. The
/// feature map is fit on the pooled experimental covariates. Failures are
/// recorded per site and method; only a run with no estimate at all is an
/// error.
pub fn transport_all(
    sites: &[SiteDataset],
    target: &TargetSpec,
    config: &TransportConfig,
) -> Result<TransportReport, MultisiteError> {
    if sites.is_empty() {
        return Err(MultisiteError::NoSites);
    }
    if !(config.lambda.is_finite() && config.lambda > 0.0) {
        return Err(MultisiteError::InvalidLambda(config.lambda));
    }
    let pooled = pooled_covariates(sites);
    let map = config.features.fit(&pooled)?;
    let mode = config.mode.build(&map, &pooled)?;

    let outcomes: Vec<SiteOutcome> = sites
        .par_iter()
        .enumerate()
        .map(|(k, site)| {
            let mut out = SiteOutcome::default();
            let boot = BootstrapOptions {
                seed: config.bootstrap.seed.wrapping_add(k as u64),
                ..config.bootstrap
            };
            if config.enabled(Method::Weighting) {
                let prob = BalanceProblem {
                    site,
                    target,
                    mode: &mode,
                    lambda: config.lambda,
                };
                match solve_weights(&prob, &config.solver) {
                    Ok(w) => {
                        out.record(site, Method::Weighting, weighting_estimate(site, &w.gamma));
                        out.weights = Some(w);
                    }
                    Err(e) => out.fail(site, Method::Weighting, e.to_string()),
                }
            }
            if config.enabled(Method::Naive) {
                out.estimates.push(naive_estimate(site));
            }
            let sample = target.sample();
            let needs_sample = [Method::OutcomeModel, Method::Ipw, Method::DoublyRobust];
            let Some(sample) = sample else {
                for m in needs_sample.into_iter().filter(|&m| config.enabled(m)) {
                    out.fail(
                        site,
                        m,
                        "this estimator needs a unit-level target sample".into(),
                    );
                }
                return out;
            };
            if config.enabled(Method::OutcomeModel) {
                out.record(
                    site,
                    Method::OutcomeModel,
                    outcome_model_estimate(site, sample, &map, &boot),
                );
            }
            if config.enabled(Method::Ipw) || config.enabled(Method::DoublyRobust) {
                let own: Vec<Vec<f64>> = site.covariates().map(<[f64]>::to_vec).collect();
                let ratios = density_ratio_fit(&own, sample, &map).and_then(|r| r.ratios_for(site));
                match ratios {
                    Ok(set) => {
                        let tag = |r: Result<TransportEstimate, EstimatorError>| {
                            r.map(|mut e| {
                                e.clip_rate = Some(set.clip_rate);
                                e
                            })
                        };
                        if config.enabled(Method::Ipw) {
                            out.record(
                                site,
                                Method::Ipw,
                                tag(ipw_estimate(site, &set.values, config.hajek)),
                            );
                        }
                        if config.enabled(Method::DoublyRobust) {
                            let dr = doubly_robust_estimate(site, sample, &map, &set.values, &boot);
                            out.record(site, Method::DoublyRobust, tag(dr));
                        }
                    }
                    Err(e) => {
                        for m in [Method::Ipw, Method::DoublyRobust]
                            .into_iter()
                            .filter(|&m| config.enabled(m))
                        {
                            out.fail(site, m, e.to_string());
                        }
                    }
                }
            }
            out
        })
        .collect();

    let mut report = TransportReport {
        estimates: Vec::new(),
        weights: Vec::new(),
        failures: Vec::new(),
        feature_map: map,
    };
    for mut o in outcomes {
        o.estimates.sort_by_key(|e| e.method);
        report.estimates.extend(o.estimates);
        report.weights.extend(o.weights);
        report.failures.extend(o.failures);
    }
    if report.estimates.is_empty() {
        let first = report
            .failures
            .first()
            .map_or_else(String::new, |f| format!("{}: {}", f.site_id, f.message));
        return Err(MultisiteError::AllSitesFailed(first));
    }
    Ok(report)
}

/// The three error terms of a weighting estimator against a known model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorDecomposition {
    pub imbalance_m0: f64,
    pub imbalance_tau: f64,
    pub noise: f64,
    pub total: f64,
}

fn contrast(site: &SiteDataset, i: usize) -> f64 {
    let pi = site.propensity();
    (site.units()[i].z() - pi) / (pi * (1.0 - pi))
}

/// `(1/n) Σ γᵢ (Zᵢ−π)/(π(1−π)) Yᵢ`, the weighting estimator in its
/// contrast form.
pub fn contrast_estimate(site: &SiteDataset, gamma: &[f64]) -> Result<f64, MultisiteError> {
    if gamma.len() != site.n() {
        return Err(MultisiteError::LengthMismatch(gamma.len(), site.n()));
    }
    let n = site.n() as f64;
    Ok((0..site.n())
        .map(|i| gamma[i] * contrast(site, i) * site.units()[i].outcome)
        .sum::<f64>()
        / n)
}

/// Splits `τ̂* − τ*` into control-outcome imbalance, effect imbalance and
/// noise, using the true `m₀` and `τ` and the site's realized outcomes.
pub fn decompose_error(
    site: &SiteDataset,
    gamma: &[f64],
    target: &[Vec<f64>],
    oracle: &PotentialOutcomeOracle,
) -> Result<ErrorDecomposition, MultisiteError> {
    if gamma.len() != site.n() {
        return Err(MultisiteError::LengthMismatch(gamma.len(), site.n()));
    }
    if target.is_empty() {
        return Err(MultisiteError::Feature(FeatureError::EmptySample));
    }
    let n = site.n() as f64;
    let pi = site.propensity();
    let (mut m0_term, mut tau_term, mut noise) = (0.0, 0.0, 0.0);
    for (i, u) in site.units().iter().enumerate() {
        let c = gamma[i] * contrast(site, i);
        let m0 = oracle.m0(&u.covariates);
        let tau = oracle.tau(&u.covariates);
        m0_term += c * m0;
        tau_term += gamma[i] * u.z() * tau;
        noise += c * (u.outcome - m0 - u.z() * tau);
    }
    let truth = target.iter().map(|x| oracle.tau(x)).sum::<f64>() / target.len() as f64;
    let imbalance_m0 = m0_term / n;
    let imbalance_tau = tau_term / (n * pi) - truth;
    let noise = noise / n;
    Ok(ErrorDecomposition {
        imbalance_m0,
        imbalance_tau,
        noise,
        total: imbalance_m0 + imbalance_tau + noise,
    })
}

/// Worst-case error over linear models `m₀ = a + β·φ₀(x)` with `‖β‖ ≤ b0`
/// and `τ = c + δ·φ_τ(x)` with `‖δ‖ ≤ b_tau`, plus the realized noise term.
/// Intercepts drop out under the weight sum constraints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBound {
    pub m0_term: f64,
    pub tau_term: f64,
    pub noise_term: f64,
    pub total: f64,
}

pub struct LinearClass<'a> {
    pub map: &'a FeatureMap,
    pub norm_bound: f64,
}

pub fn error_bound(
    site: &SiteDataset,
    gamma: &[f64],
    target: &[Vec<f64>],
    noise: &[f64],
    class_0: LinearClass,
    class_tau: LinearClass,
) -> Result<ErrorBound, MultisiteError> {
    for len in [gamma.len(), noise.len()] {
        if len != site.n() {
            return Err(MultisiteError::LengthMismatch(len, site.n()));
        }
    }
    let n = site.n() as f64;
    let pi = site.propensity();
    let mut d0 = vec![0.0; class_0.map.dim()];
    let mut dt = vec![0.0; class_tau.map.dim()];
    let mut noise_sum = 0.0;
    for (i, u) in site.units().iter().enumerate() {
        let c = gamma[i] * contrast(site, i);
        for (a, v) in d0.iter_mut().zip(class_0.map.apply(&u.covariates)?) {
            *a += c * v / n;
        }
        if u.treated {
            for (a, v) in dt.iter_mut().zip(class_tau.map.apply(&u.covariates)?) {
                *a += gamma[i] * v / (n * pi);
            }
        }
        noise_sum += c * noise[i];
    }
    let tmean = class_tau.map.mean(target.iter().map(Vec::as_slice))?;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = dt.iter().zip(&tmean).map(|(a, b)| a - b).collect();
    let m0_term = class_0.norm_bound * norm(&d0);
    let tau_term = class_tau.norm_bound * norm(&diff);
    let noise_term = (noise_sum / n).abs();
    Ok(ErrorBound {
        m0_term,
        tau_term,
        noise_term,
        total: m0_term + tau_term + noise_term,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::UnitRecord;

    fn site(id: &str, z: &[bool], x: &[f64], y: &[f64]) -> SiteDataset {
        let units = (0..z.len())
            .map(|i| UnitRecord {
                covariates: vec![x[i]],
                treated: z[i],
                outcome: y[i],
                site_id: id.into(),
                row: i,
            })
            .collect();
        SiteDataset::new(id.into(), units, None).unwrap()
    }

    fn toy(id: &str) -> SiteDataset {
        let z = [
            true, false, true, false, true, false, true, false, true, false,
        ];
        let x = [0.1, 0.4, 0.9, 1.3, 1.2, 0.2, 0.7, 0.8, 1.9, 1.5];
        let y: Vec<f64> = x
            .iter()
            .zip(z)
            .map(|(x, t)| x + if t { 1.0 + x } else { 0.0 })
            .collect();
        site(id, &z, &x, &y)
    }

    fn config(lambda: f64) -> TransportConfig {
        TransportConfig {
            lambda,
            bootstrap: BootstrapOptions {
                replicates: 20,
                seed: 1,
            },
            ..Default::default()
        }
    }

    #[test]
    fn self_target_with_large_lambda_is_naive() {
        let s = toy("a");
        let target = overall_target(std::slice::from_ref(&s));
        let r = transport_all(std::slice::from_ref(&s), &target, &config(1e6)).unwrap();
        let w = r.estimate(s.site_id(), Method::Weighting).unwrap().estimate;
        let n = r.estimate(s.site_id(), Method::Naive).unwrap().estimate;
        assert!((w - n).abs() < 1e-3);
        assert!(r.failures.is_empty(), "{:?}", r.failures);
        assert_eq!(r.estimates.len(), 5);
    }

    #[test]
    fn identical_sites_get_identical_estimates() {
        let sites = vec![toy("a"), toy("b")];
        let target = TargetSpec::Sample(vec![vec![0.5], vec![1.0], vec![1.5]]);
        let r = transport_all(&sites, &target, &config(0.1)).unwrap();
        for m in [
            Method::Weighting,
            Method::Naive,
            Method::OutcomeModel,
            Method::Ipw,
            Method::DoublyRobust,
        ] {
            let a = r.estimate(&"a".into(), m).unwrap().estimate;
            let b = r.estimate(&"b".into(), m).unwrap().estimate;
            assert!((a - b).abs() < 1e-6, "{m}: {a} vs {b}");
        }
    }

    #[test]
    fn moments_target_records_sample_only_failures() {
        let sites = vec![toy("a")];
        let target = TargetSpec::Moments(vec![1.0]);
        let r = transport_all(&sites, &target, &config(1.0)).unwrap();
        assert_eq!(r.estimates.len(), 2);
        assert_eq!(r.failures.len(), 3);
    }

    #[test]
    fn all_failures_are_an_error() {
        let sites = vec![toy("a")];
        let target = TargetSpec::Moments(vec![1.0, 2.0]);
        let cfg = TransportConfig {
            estimators: vec![Method::Weighting],
            ..config(1.0)
        };
        assert!(matches!(
            transport_all(&sites, &target, &cfg),
            Err(MultisiteError::AllSitesFailed(_))
        ));
        assert_eq!(
            transport_all(&[], &target, &cfg),
            Err(MultisiteError::NoSites)
        );
    }

    #[test]
    fn noiseless_data_has_no_noise_term() {
        let s = toy("a");
        let oracle = PotentialOutcomeOracle::linear(0.0, vec![1.0], 1.0, vec![1.0]);
        let gamma = vec![1.0; s.n()];
        let d = decompose_error(&s, &gamma, &[vec![1.0]], &oracle).unwrap();
        assert_eq!(d.noise, 0.0);
    }

    #[test]
    fn constant_effect_is_balanced_by_uniform_weights() {
        let s = toy("a");
        let oracle = PotentialOutcomeOracle::linear(0.0, vec![1.0], 2.5, vec![0.0]);
        let d = decompose_error(&s, &[1.0; 10], &[vec![7.0], vec![-3.0]], &oracle).unwrap();
        assert!(d.imbalance_tau.abs() < 1e-14);
    }
}
