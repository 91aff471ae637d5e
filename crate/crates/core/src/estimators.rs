//! Point estimators of a transported site effect and their standard errors.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::balance::kish_ess;
use crate::features::{FeatureError, FeatureMap};
use crate::model::{SiteDataset, SiteId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("{arm} weights sum to {sum}, expected {expected}")]
    ConstraintViolation {
        arm: &'static str,
        sum: f64,
        expected: f64,
    },
    #[error("expected {expected} per-unit values, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("{arm} arm has {n} units; the outcome model needs at least {needed}")]
    InsufficientArm {
        arm: &'static str,
        n: usize,
        needed: usize,
    },
    #[error(
        "logistic regression diverged after {iterations} iterations: samples are (quasi-)separable"
    )]
    SeparableData { iterations: usize },
    #[error("sample is empty")]
    EmptySample,
    #[error("density ratios are zero on an entire arm")]
    DegenerateRatios,
    #[error("regression design has no usable columns")]
    EmptyDesign,
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Weighting,
    Naive,
    OutcomeModel,
    Ipw,
    DoublyRobust,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Weighting,
        Method::Naive,
        Method::OutcomeModel,
        Method::Ipw,
        Method::DoublyRobust,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Weighting => "weighting",
            Method::Naive => "naive",
            Method::OutcomeModel => "outcome_model",
            Method::Ipw => "ipw",
            Method::DoublyRobust => "doubly_robust",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown estimator `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportEstimate {
    pub site_id: SiteId,
    pub method: Method,
    pub estimate: f64,
    pub std_error: f64,
    pub ess_treated: f64,
    pub ess_control: f64,
    /// Largest density ratio used, for estimators that use one.
    pub max_ratio: Option<f64>,
    /// Share of density ratios that hit a clipping bound.
    pub clip_rate: Option<f64>,
}

fn check_len(expected: usize, found: usize) -> Result<(), EstimatorError> {
    if expected == found {
        Ok(())
    } else {
        Err(EstimatorError::LengthMismatch { expected, found })
    }
}

/// Weighted arm means `μ̂₁ = Σ ZγY / n1` and `μ̂₀ = Σ (1−Z)γY / n0`.
pub fn weighted_arm_means(site: &SiteDataset, gamma: &[f64]) -> Result<(f64, f64), EstimatorError> {
    check_len(site.n(), gamma.len())?;
    let (n1, n0) = (site.n1() as f64, site.n0() as f64);
    let (mut s1, mut s0, mut g1, mut g0) = (0.0, 0.0, 0.0, 0.0);
    for (u, &g) in site.units().iter().zip(gamma) {
        if u.treated {
            s1 += g * u.outcome;
            g1 += g;
        } else {
            s0 += g * u.outcome;
            g0 += g;
        }
    }
    for (arm, sum, expected) in [("treated", g1, n1), ("control", g0, n0)] {
        if (sum - expected).abs() > 1e-4 * expected {
            return Err(EstimatorError::ConstraintViolation { arm, sum, expected });
        }
    }
    Ok((s1 / n1, s0 / n0))
}

/// `τ̂ = μ̂₁ − μ̂₀` with the heteroskedasticity-robust variance
/// `Σ_T γ²(Y−μ̂₁)²/(n1(n1−1)) + Σ_C γ²(Y−μ̂₀)²/(n0(n0−1))`, which reduces to
/// `s₁²/n1 + s₀²/n0` under uniform weights. A single-unit arm contributes
/// no variance.
pub fn weighting_estimate(
    site: &SiteDataset,
    gamma: &[f64],
) -> Result<TransportEstimate, EstimatorError> {
    let (mu1, mu0) = weighted_arm_means(site, gamma)?;
    let (n1, n0) = (site.n1() as f64, site.n0() as f64);
    let (mut v1, mut v0) = (0.0, 0.0);
    let mut gt = Vec::with_capacity(site.n1());
    let mut gc = Vec::with_capacity(site.n0());
    for (u, &g) in site.units().iter().zip(gamma) {
        if u.treated {
            v1 += g * g * (u.outcome - mu1).powi(2);
            gt.push(g);
        } else {
            v0 += g * g * (u.outcome - mu0).powi(2);
            gc.push(g);
        }
    }
    let arm_var = |v: f64, n: f64| if n > 1.0 { v / (n * (n - 1.0)) } else { 0.0 };
    Ok(TransportEstimate {
        site_id: site.site_id().clone(),
        method: Method::Weighting,
        estimate: mu1 - mu0,
        std_error: (arm_var(v1, n1) + arm_var(v0, n0)).sqrt(),
        ess_treated: kish_ess(&gt).unwrap_or(0.0),
        ess_control: kish_ess(&gc).unwrap_or(0.0),
        max_ratio: None,
        clip_rate: None,
    })
}

/// Difference in arm means with the two-sample heteroskedastic variance.
pub fn naive_estimate(site: &SiteDataset) -> TransportEstimate {
    let ones = vec![1.0; site.n()];
    let mut est =
        weighting_estimate(site, &ones).expect("uniform weights meet the sum constraints");
    est.method = Method::Naive;
    est
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegressionKind {
    LeastSquares,
    Logistic,
}

/// Coefficients are `[intercept, features...]`; dropped columns carry 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub coefficients: Vec<f64>,
    pub kind: RegressionKind,
    pub converged: bool,
    /// Design columns (0 = intercept) dropped as collinear.
    pub dropped: Vec<usize>,
    pub iterations: usize,
}

impl RegressionFit {
    /// Linear predictor at a feature vector.
    pub fn linear_predictor(&self, features: &[f64]) -> f64 {
        self.coefficients[0]
            + self.coefficients[1..]
                .iter()
                .zip(features)
                .map(|(b, x)| b * x)
                .sum::<f64>()
    }

    /// Fitted mean: the linear predictor, or its logistic transform.
    pub fn predict(&self, features: &[f64]) -> f64 {
        let eta = self.linear_predictor(features);
        match self.kind {
            RegressionKind::LeastSquares => eta,
            RegressionKind::Logistic => logistic_fn(eta),
        }
    }
}

fn logistic_fn(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

const COLLINEAR_TOL: f64 = 1e-9;

/// Thin QR by modified Gram-Schmidt with reorthogonalization, in column
/// order. Columns whose residual norm is negligible relative to their own
/// norm are dropped, so earlier columns take precedence.
struct Qr {
    q: Vec<Vec<f64>>,
    /// `r[k]` holds row k of R over the kept columns.
    r: Vec<Vec<f64>>,
    kept: Vec<usize>,
}

impl Qr {
    fn new(columns: &[Vec<f64>]) -> Self {
        let mut q: Vec<Vec<f64>> = Vec::new();
        let mut r: Vec<Vec<f64>> = Vec::new();
        let mut kept = Vec::new();
        for (j, col) in columns.iter().enumerate() {
            let orig = norm(col);
            let mut v = col.clone();
            let mut coef = vec![0.0; q.len()];
            for _ in 0..2 {
                for (k, qk) in q.iter().enumerate() {
                    let c = dot(qk, &v);
                    coef[k] += c;
                    v.iter_mut().zip(qk).for_each(|(vi, qi)| *vi -= c * qi);
                }
            }
            let rest = norm(&v);
            if orig == 0.0 || rest <= COLLINEAR_TOL * orig {
                continue;
            }
            for (k, c) in coef.into_iter().enumerate() {
                r[k].push(c);
            }
            v.iter_mut().for_each(|vi| *vi /= rest);
            q.push(v);
            let mut row = vec![0.0; kept.len()];
            row.push(rest);
            r.push(row);
            kept.push(j);
        }
        Self { q, r, kept }
    }

    /// Least-squares coefficients for the kept columns.
    fn solve(&self, y: &[f64]) -> Vec<f64> {
        let k = self.kept.len();
        let qty: Vec<f64> = self.q.iter().map(|qk| dot(qk, y)).collect();
        let mut b = vec![0.0; k];
        for i in (0..k).rev() {
            let mut acc = qty[i];
            for c in i + 1..k {
                acc -= self.r[i][c] * b[c];
            }
            b[i] = acc / self.r[i][i];
        }
        b
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Columns `[1, x_·1, …, x_·k]` of a design with intercept.
fn design_columns(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = x.first().map_or(0, Vec::len);
    let mut cols = vec![vec![1.0; x.len()]];
    cols.extend((0..k).map(|j| x.iter().map(|r| r[j]).collect()));
    cols
}

fn expand(ncols: usize, kept: &[usize], b: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut full = vec![0.0; ncols];
    for (&j, &v) in kept.iter().zip(b) {
        full[j] = v;
    }
    let dropped = (0..ncols).filter(|j| !kept.contains(j)).collect();
    (full, dropped)
}

/// Ordinary least squares with intercept; collinear columns are dropped.
pub fn least_squares(x: &[Vec<f64>], y: &[f64]) -> Result<RegressionFit, EstimatorError> {
    if x.is_empty() {
        return Err(EstimatorError::EmptySample);
    }
    check_len(x.len(), y.len())?;
    let cols = design_columns(x);
    let qr = Qr::new(&cols);
    if qr.kept.is_empty() {
        return Err(EstimatorError::EmptyDesign);
    }
    let (coefficients, dropped) = expand(cols.len(), &qr.kept, &qr.solve(y));
    Ok(RegressionFit {
        coefficients,
        kind: RegressionKind::LeastSquares,
        converged: true,
        dropped,
        iterations: 1,
    })
}

const IRLS_MAX_ITER: usize = 100;
const IRLS_GRAD_TOL: f64 = 1e-8;
const SEPARATION_ETA: f64 = 35.0;
const SEPARATION_GAP: f64 = 1e-7;

/// Logistic regression with intercept by iteratively reweighted least
/// squares. Divergence of the linear predictor signals separation.
pub fn logistic_regression(x: &[Vec<f64>], y: &[f64]) -> Result<RegressionFit, EstimatorError> {
    if x.is_empty() {
        return Err(EstimatorError::EmptySample);
    }
    check_len(x.len(), y.len())?;
    let cols = design_columns(x);
    let base = Qr::new(&cols);
    let kept = base.kept.clone();
    if kept.is_empty() {
        return Err(EstimatorError::EmptyDesign);
    }
    let n = x.len();
    let xk: Vec<&Vec<f64>> = kept.iter().map(|&j| &cols[j]).collect();
    let mut beta = vec![0.0; kept.len()];
    let eta_of = |b: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| xk.iter().zip(b).map(|(c, bj)| c[i] * bj).sum())
            .collect()
    };
    for iter in 1..=IRLS_MAX_ITER {
        let eta = eta_of(&beta);
        if eta.iter().any(|e| e.abs() > SEPARATION_ETA) {
            return Err(EstimatorError::SeparableData { iterations: iter });
        }
        let p: Vec<f64> = eta.iter().map(|&e| logistic_fn(e)).collect();
        let grad = xk
            .iter()
            .map(|c| (0..n).map(|i| c[i] * (y[i] - p[i])).sum::<f64>().abs())
            .fold(0.0, f64::max);
        if grad <= IRLS_GRAD_TOL {
            // a fitted probability numerically equal to its label means the
            // likelihood only converged by sending coefficients off to infinity
            if y.iter()
                .zip(&p)
                .any(|(yi, pi)| (yi - pi).abs() < SEPARATION_GAP)
            {
                return Err(EstimatorError::SeparableData { iterations: iter });
            }
            let (coefficients, dropped) = expand(cols.len(), &kept, &beta);
            return Ok(RegressionFit {
                coefficients,
                kind: RegressionKind::Logistic,
                converged: true,
                dropped,
                iterations: iter,
            });
        }
        let sw: Vec<f64> = p.iter().map(|pi| (pi * (1.0 - pi)).sqrt()).collect();
        let wcols: Vec<Vec<f64>> = xk
            .iter()
            .map(|c| (0..n).map(|i| c[i] * sw[i]).collect())
            .collect();
        let wz: Vec<f64> = (0..n)
            .map(|i| sw[i] * eta[i] + (y[i] - p[i]) / sw[i])
            .collect();
        let wqr = Qr::new(&wcols);
        if wqr.kept.len() < kept.len() {
            return Err(EstimatorError::SeparableData { iterations: iter });
        }
        beta = wqr.solve(&wz);
    }
    Err(EstimatorError::SeparableData {
        iterations: IRLS_MAX_ITER,
    })
}

pub const RATIO_CLIP: (f64, f64) = (1e-6, 1e6);

/// Fitted change of measure `x ↦ (p̂/(1−p̂))·(n_exp/n_target)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityRatio {
    fit: RegressionFit,
    map: FeatureMap,
    prior: f64,
}

/// Density ratios at a set of units, with clipping diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioSet {
    pub values: Vec<f64>,
    pub clip_rate: f64,
    pub max: f64,
}

impl DensityRatio {
    pub fn fit(&self) -> &RegressionFit {
        &self.fit
    }

    pub fn ratio_unclipped(&self, x: &[f64]) -> Result<f64, EstimatorError> {
        let eta = self.fit.linear_predictor(&self.map.apply(x)?);
        Ok(eta.exp() * self.prior)
    }

    pub fn ratio(&self, x: &[f64]) -> Result<f64, EstimatorError> {
        Ok(self.ratio_unclipped(x)?.clamp(RATIO_CLIP.0, RATIO_CLIP.1))
    }

    pub fn ratios_for(&self, site: &SiteDataset) -> Result<RatioSet, EstimatorError> {
        let mut clipped = 0usize;
        let values = site
            .covariates()
            .map(|x| {
                let r = self.ratio_unclipped(x)?;
                if !(RATIO_CLIP.0..=RATIO_CLIP.1).contains(&r) {
                    clipped += 1;
                }
                Ok(r.clamp(RATIO_CLIP.0, RATIO_CLIP.1))
            })
            .collect::<Result<Vec<f64>, EstimatorError>>()?;
        let max = values.iter().copied().fold(0.0, f64::max);
        Ok(RatioSet {
            clip_rate: clipped as f64 / values.len() as f64,
            values,
            max,
        })
    }
}

/// Fits one logistic regression of target membership (1) against
/// experimental membership (0) on the mapped pooled sample.
pub fn density_ratio_fit(
    experimental: &[Vec<f64>],
    target: &[Vec<f64>],
    map: &FeatureMap,
) -> Result<DensityRatio, EstimatorError> {
    if experimental.is_empty() || target.is_empty() {
        return Err(EstimatorError::EmptySample);
    }
    let mut x = Vec::with_capacity(experimental.len() + target.len());
    let mut y = Vec::with_capacity(x.capacity());
    for (rows, label) in [(experimental, 0.0), (target, 1.0)] {
        for r in rows {
            x.push(map.apply(r)?);
            y.push(label);
        }
    }
    let fit = logistic_regression(&x, &y)?;
    Ok(DensityRatio {
        fit,
        map: map.clone(),
        prior: experimental.len() as f64 / target.len() as f64,
    })
}

/// Inverse-probability weighting with per-unit density ratios:
/// `(1/n) Σ rᵢ (ZᵢYᵢ/π − (1−Zᵢ)Yᵢ/(1−π))`, or with `hajek` each arm's
/// weighted sum normalized by its total weight.
pub fn ipw_estimate(
    site: &SiteDataset,
    ratios: &[f64],
    hajek: bool,
) -> Result<TransportEstimate, EstimatorError> {
    check_len(site.n(), ratios.len())?;
    let pi = site.propensity();
    let n = site.n() as f64;
    let (mut s1, mut s0, mut w1, mut w0) = (0.0, 0.0, 0.0, 0.0);
    let mut rt = Vec::with_capacity(site.n1());
    let mut rc = Vec::with_capacity(site.n0());
    for (u, &r) in site.units().iter().zip(ratios) {
        if u.treated {
            s1 += r * u.outcome / pi;
            w1 += r / pi;
            rt.push(r);
        } else {
            s0 += r * u.outcome / (1.0 - pi);
            w0 += r / (1.0 - pi);
            rc.push(r);
        }
    }
    let (estimate, std_error) = if hajek {
        if w1 == 0.0 || w0 == 0.0 {
            return Err(EstimatorError::DegenerateRatios);
        }
        let (m1, m0) = (s1 / w1, s0 / w0);
        let (mut v1, mut v0) = (0.0, 0.0);
        for (u, &r) in site.units().iter().zip(ratios) {
            if u.treated {
                v1 += (r / pi * (u.outcome - m1)).powi(2);
            } else {
                v0 += (r / (1.0 - pi) * (u.outcome - m0)).powi(2);
            }
        }
        (m1 - m0, (v1 / (w1 * w1) + v0 / (w0 * w0)).sqrt())
    } else {
        let est = (s1 - s0) / n;
        let ss: f64 = site
            .units()
            .iter()
            .zip(ratios)
            .map(|(u, &r)| {
                let psi = if u.treated {
                    r * u.outcome / pi
                } else {
                    -r * u.outcome / (1.0 - pi)
                };
                (psi - est).powi(2)
            })
            .sum();
        (est, (ss / (n * (n - 1.0))).sqrt())
    };
    Ok(TransportEstimate {
        site_id: site.site_id().clone(),
        method: Method::Ipw,
        estimate,
        std_error,
        ess_treated: kish_ess(&rt).unwrap_or(0.0),
        ess_control: kish_ess(&rc).unwrap_or(0.0),
        max_ratio: Some(ratios.iter().copied().fold(0.0, f64::max)),
        clip_rate: None,
    })
}

/// Per-arm outcome regressions on mapped features.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeModels {
    pub treated: RegressionFit,
    pub control: RegressionFit,
}

impl OutcomeModels {
    pub fn fit(site: &SiteDataset, map: &FeatureMap) -> Result<Self, EstimatorError> {
        let feats = map.apply_all(site.covariates())?;
        let idx: Vec<usize> = (0..site.n()).collect();
        fit_models(site, &feats, &idx)
    }
}

fn fit_models(
    site: &SiteDataset,
    feats: &[Vec<f64>],
    idx: &[usize],
) -> Result<OutcomeModels, EstimatorError> {
    let needed = feats.first().map_or(0, Vec::len) + 1;
    let units = site.units();
    let mut out = Vec::with_capacity(2);
    for (arm, treated) in [("treated", true), ("control", false)] {
        let rows: Vec<usize> = idx
            .iter()
            .copied()
            .filter(|&i| units[i].treated == treated)
            .collect();
        if rows.len() < needed {
            return Err(EstimatorError::InsufficientArm {
                arm,
                n: rows.len(),
                needed,
            });
        }
        let x: Vec<Vec<f64>> = rows.iter().map(|&i| feats[i].clone()).collect();
        let y: Vec<f64> = rows.iter().map(|&i| units[i].outcome).collect();
        out.push(least_squares(&x, &y)?);
    }
    let control = out.pop().expect("two fits");
    let treated = out.pop().expect("two fits");
    Ok(OutcomeModels { treated, control })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            replicates: 200,
            seed: 0,
        }
    }
}

/// Resamples unit indices within each arm. Replicate `b` uses its own
/// stream of a seeded ChaCha generator, so results do not depend on
/// scheduling.
fn stratified_resample(site: &SiteDataset, seed: u64, b: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    let (t, c): (Vec<usize>, Vec<usize>) = (0..site.n()).partition(|&i| site.units()[i].treated);
    let mut out = Vec::with_capacity(site.n());
    for arm in [&t, &c] {
        out.extend((0..arm.len()).map(|_| arm[rng.random_range(0..arm.len())]));
    }
    out
}

fn sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn bootstrap_se(
    site: &SiteDataset,
    opts: &BootstrapOptions,
    stat: impl Fn(&[usize]) -> Result<f64, EstimatorError> + Sync,
) -> Result<f64, EstimatorError> {
    let reps: Vec<f64> = (0..opts.replicates)
        .into_par_iter()
        .map(|b| stat(&stratified_resample(site, opts.seed, b)))
        .collect::<Result<_, _>>()?;
    Ok(sd(&reps))
}

fn target_feature_mean(target: &[Vec<f64>], map: &FeatureMap) -> Result<Vec<f64>, EstimatorError> {
    if target.is_empty() {
        return Err(EstimatorError::EmptySample);
    }
    Ok(map.mean(target.iter().map(Vec::as_slice))?)
}

fn om_from(models: &OutcomeModels, tmean: &[f64]) -> f64 {
    // models are linear, so the target average of predictions is the
    // prediction at the target feature mean
    models.treated.predict(tmean) - models.control.predict(tmean)
}

/// `E*{m̂₁(X) − m̂₀(X)}` without a standard error.
pub fn outcome_model_point(
    site: &SiteDataset,
    target: &[Vec<f64>],
    map: &FeatureMap,
) -> Result<f64, EstimatorError> {
    let tmean = target_feature_mean(target, map)?;
    Ok(om_from(&OutcomeModels::fit(site, map)?, &tmean))
}

/// Outcome-model estimate with a stratified bootstrap standard error.
pub fn outcome_model_estimate(
    site: &SiteDataset,
    target: &[Vec<f64>],
    map: &FeatureMap,
    bootstrap: &BootstrapOptions,
) -> Result<TransportEstimate, EstimatorError> {
    let tmean = target_feature_mean(target, map)?;
    let feats = map.apply_all(site.covariates())?;
    let all: Vec<usize> = (0..site.n()).collect();
    let estimate = om_from(&fit_models(site, &feats, &all)?, &tmean);
    let std_error = bootstrap_se(site, bootstrap, |idx| {
        Ok(om_from(&fit_models(site, &feats, idx)?, &tmean))
    })?;
    Ok(TransportEstimate {
        site_id: site.site_id().clone(),
        method: Method::OutcomeModel,
        estimate,
        std_error,
        ess_treated: site.n1() as f64,
        ess_control: site.n0() as f64,
        max_ratio: None,
        clip_rate: None,
    })
}

/// The augmented estimator over units `idx` (repeats allowed):
/// `[(1/n)Σ rZ(Y−m̂₁)/π + E*m̂₁] − [(1/n)Σ r(1−Z)(Y−m̂₀)/(1−π) + E*m̂₀]`,
/// given per-unit predictions and target means of both models.
pub fn augmented_estimate(
    site: &SiteDataset,
    ratios: &[f64],
    m1_pred: &[f64],
    m0_pred: &[f64],
    m1_target: f64,
    m0_target: f64,
) -> Result<f64, EstimatorError> {
    for v in [ratios, m1_pred, m0_pred] {
        check_len(site.n(), v.len())?;
    }
    let idx: Vec<usize> = (0..site.n()).collect();
    Ok(augmented_over(
        site, &idx, ratios, m1_pred, m0_pred, m1_target, m0_target,
    ))
}

fn augmented_over(
    site: &SiteDataset,
    idx: &[usize],
    ratios: &[f64],
    m1_pred: &[f64],
    m0_pred: &[f64],
    m1_target: f64,
    m0_target: f64,
) -> f64 {
    let pi = site.propensity();
    let n = idx.len() as f64;
    let units = site.units();
    let (mut a1, mut a0) = (0.0, 0.0);
    for &i in idx {
        let u = &units[i];
        if u.treated {
            a1 += ratios[i] * (u.outcome - m1_pred[i]) / pi;
        } else {
            a0 += ratios[i] * (u.outcome - m0_pred[i]) / (1.0 - pi);
        }
    }
    (a1 / n + m1_target) - (a0 / n + m0_target)
}

fn dr_from(
    site: &SiteDataset,
    feats: &[Vec<f64>],
    idx: &[usize],
    ratios: &[f64],
    tmean: &[f64],
) -> Result<f64, EstimatorError> {
    let models = fit_models(site, feats, idx)?;
    let m1: Vec<f64> = feats.iter().map(|f| models.treated.predict(f)).collect();
    let m0: Vec<f64> = feats.iter().map(|f| models.control.predict(f)).collect();
    Ok(augmented_over(
        site,
        idx,
        ratios,
        &m1,
        &m0,
        models.treated.predict(tmean),
        models.control.predict(tmean),
    ))
}

/// Doubly robust point estimate without a standard error.
pub fn doubly_robust_point(
    site: &SiteDataset,
    target: &[Vec<f64>],
    map: &FeatureMap,
    ratios: &[f64],
) -> Result<f64, EstimatorError> {
    check_len(site.n(), ratios.len())?;
    let tmean = target_feature_mean(target, map)?;
    let feats = map.apply_all(site.covariates())?;
    let all: Vec<usize> = (0..site.n()).collect();
    dr_from(site, &feats, &all, ratios, &tmean)
}

/// Doubly robust estimate with a stratified bootstrap standard error.
/// Outcome models are refit per replicate; density ratios stay fixed.
pub fn doubly_robust_estimate(
    site: &SiteDataset,
    target: &[Vec<f64>],
    map: &FeatureMap,
    ratios: &[f64],
    bootstrap: &BootstrapOptions,
) -> Result<TransportEstimate, EstimatorError> {
    check_len(site.n(), ratios.len())?;
    let tmean = target_feature_mean(target, map)?;
    let feats = map.apply_all(site.covariates())?;
    let all: Vec<usize> = (0..site.n()).collect();
    let estimate = dr_from(site, &feats, &all, ratios, &tmean)?;
    let std_error = bootstrap_se(site, bootstrap, |idx| {
        dr_from(site, &feats, idx, ratios, &tmean)
    })?;
    let (rt, rc): (Vec<f64>, Vec<f64>) = {
        let mut rt = Vec::new();
        let mut rc = Vec::new();
        for (u, &r) in site.units().iter().zip(ratios) {
            if u.treated {
                rt.push(r)
            } else {
                rc.push(r)
            }
        }
        (rt, rc)
    };
    Ok(TransportEstimate {
        site_id: site.site_id().clone(),
        method: Method::DoublyRobust,
        estimate,
        std_error,
        ess_treated: kish_ess(&rt).unwrap_or(0.0),
        ess_control: kish_ess(&rc).unwrap_or(0.0),
        max_ratio: Some(ratios.iter().copied().fold(0.0, f64::max)),
        clip_rate: None,
    })
}
