//! Desk-scale simulation: bootstrap replicates of a synthetic multisite
//! population, scored by RMSE and mean absolute bias across a λ grid.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::balance::{lambda_sweep, BalanceError, BalanceMode};
use crate::estimators::{
    density_ratio_fit, doubly_robust_point, ipw_estimate, naive_estimate, outcome_model_point,
    weighted_arm_means, Method,
};
use crate::features::{FeatureError, FeatureMapSpec};
use crate::model::{pooled_covariates, SiteDataset, SiteId, TargetSpec, UnitRecord};
use crate::qp::QpSettings;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Balance(#[from] BalanceError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub sites: usize,
    /// Experiment groups; site `j` belongs to group `j % groups`.
    pub groups: usize,
    pub n_min: usize,
    pub n_max: usize,
    /// Binary covariates; one log-normal covariate is appended.
    pub binary_covariates: usize,
    /// Site prevalence of binary covariate `k` is `(1−s)·p_k + s·b_jk` with
    /// `p_k` shared and `b_jk` site-specific, both Beta(2,2); `s = 1` gives
    /// fully independent sites.
    pub prevalence_spread: f64,
    pub treated_fraction: f64,
    /// Nonzero CATE slopes as `(covariate index, coefficient)`.
    pub cate_coefficients: Vec<(usize, f64)>,
    /// CATE intercept of each experiment group.
    pub experiment_intercepts: Vec<f64>,
    /// Slopes of the control outcome on every covariate.
    pub prognostic_coefficients: Vec<f64>,
    /// SD of the fixed unit-level component of the control outcome.
    pub base_residual_sd: f64,
    pub noise_sd: f64,
    pub reps: usize,
    pub lambda_grid: Vec<f64>,
    /// Group whose pooled units form the target in every replicate.
    pub target_group: usize,
    pub features: FeatureMapSpec,
    pub seed: u64,
    /// Keep every per-replicate estimate in the report.
    pub audit: bool,
    pub solver: QpSettings,
}

impl Default for SimConfig {
    fn default() -> Self {
        let d = 23;
        let prognostic = (0..d)
            .map(|k| {
                if k == d - 1 {
                    0.5
                } else {
                    0.4 * (1.0 - 2.0 * (k % 2) as f64)
                }
            })
            .collect();
        Self {
            sites: 12,
            groups: 3,
            n_min: 150,
            n_max: 600,
            binary_covariates: 22,
            prevalence_spread: 0.35,
            treated_fraction: 0.5,
            cate_coefficients: vec![(0, 0.6), (1, -0.5), (2, 0.4), (3, -0.3)],
            experiment_intercepts: vec![0.2, 0.0, -0.2],
            prognostic_coefficients: prognostic,
            base_residual_sd: 0.0,
            noise_sd: 0.5,
            reps: 120,
            lambda_grid: default_lambda_grid(),
            target_group: 0,
            features: FeatureMapSpec::standardized(),
            seed: 20_231_001,
            audit: false,
            solver: QpSettings::default(),
        }
    }
}

/// One point per decade from 1e−5 to 1e6. Below 1e−5 the weights sit at
/// the exact-balance limit for desk-scale sites; 1e6 reproduces uniform
/// weights.
pub fn default_lambda_grid() -> Vec<f64> {
    (-5..=6).map(|k| 10f64.powi(k)).collect()
}

impl SimConfig {
    pub fn dim(&self) -> usize {
        self.binary_covariates + 1
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if self.sites == 0 || self.groups == 0 {
            return bad("sites and groups must be positive");
        }
        if self.experiment_intercepts.len() != self.groups {
            return bad("experiment_intercepts needs one value per group");
        }
        if self.target_group >= self.groups || self.target_group >= self.sites {
            return bad("target_group must name a group with at least one site");
        }
        if self.n_min < 4 || self.n_min > self.n_max {
            return bad("need 4 <= n_min <= n_max");
        }
        if !(0.0..=1.0).contains(&self.prevalence_spread) {
            return bad("prevalence_spread must lie in [0, 1]");
        }
        if !(self.treated_fraction > 0.0 && self.treated_fraction < 1.0) {
            return bad("treated_fraction must lie in (0, 1)");
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return bad("noise_sd must be positive");
        }
        if !(self.base_residual_sd >= 0.0) {
            return bad("base_residual_sd must be nonnegative");
        }
        if self.reps == 0 {
            return bad("reps must be at least 1");
        }
        if self.lambda_grid.is_empty()
            || self
                .lambda_grid
                .iter()
                .any(|l| !(l.is_finite() && *l > 0.0))
        {
            return bad("lambda_grid must be nonempty and positive");
        }
        if self.prognostic_coefficients.len() != self.dim() {
            return bad("prognostic_coefficients needs one value per covariate");
        }
        if self.cate_coefficients.iter().any(|&(k, _)| k >= self.dim()) {
            return bad("cate_coefficients index out of range");
        }
        Ok(())
    }

    pub fn group_of(&self, site: usize) -> usize {
        site % self.groups
    }

    pub fn cate(&self, site: usize, x: &[f64]) -> f64 {
        self.experiment_intercepts[self.group_of(site)]
            + self
                .cate_coefficients
                .iter()
                .map(|&(k, c)| c * x[k])
                .sum::<f64>()
    }
}

struct BaseUnit {
    x: Vec<f64>,
    treated: bool,
    base: f64,
}

/// Synthetic base population drawn once from the config seed.
pub struct SimDesign {
    config: SimConfig,
    sites: Vec<Vec<BaseUnit>>,
}

/// One bootstrap replicate.
#[derive(Debug, Clone)]
pub struct RepData {
    pub sites: Vec<SiteDataset>,
    pub target: TargetSpec,
    /// `τ*_j`: site `j`'s CATE averaged over the target sample.
    pub truth: Vec<f64>,
}

fn site_name(j: usize) -> SiteId {
    SiteId(format!("site{:02}", j + 1))
}

impl SimDesign {
    pub fn new(config: &SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let prevalence = Beta::new(2.0, 2.0).expect("valid beta");
        let normal = Normal::new(0.0, 1.0).expect("valid normal");
        let shared: Vec<f64> = (0..config.binary_covariates)
            .map(|_| prevalence.sample(&mut rng))
            .collect();
        let spread = config.prevalence_spread;
        let sites = (0..config.sites)
            .map(|_| {
                let n = rng.random_range(config.n_min..=config.n_max);
                let p: Vec<f64> = shared
                    .iter()
                    .map(|pk| (1.0 - spread) * pk + spread * prevalence.sample(&mut rng))
                    .collect();
                let earnings =
                    LogNormal::new(rng.random_range(-0.5..0.5), 0.5).expect("valid log-normal");
                let n1 = ((n as f64) * config.treated_fraction)
                    .round()
                    .clamp(1.0, (n - 1) as f64) as usize;
                let mut treated: Vec<bool> = (0..n).map(|i| i < n1).collect();
                treated.shuffle(&mut rng);
                treated
                    .into_iter()
                    .map(|t| {
                        let mut x: Vec<f64> = p
                            .iter()
                            .map(|&pk| f64::from(u8::from(rng.random_bool(pk))))
                            .collect();
                        x.push(earnings.sample(&mut rng));
                        let base = config
                            .prognostic_coefficients
                            .iter()
                            .zip(&x)
                            .map(|(b, v)| b * v)
                            .sum::<f64>()
                            + config.base_residual_sd * normal.sample(&mut rng);
                        BaseUnit {
                            x,
                            treated: t,
                            base,
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            sites,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Replicate `rep`: each site resampled within arms, fresh outcome
    /// noise, target = the pooled resampled units of the target group.
    pub fn generate_rep(&self, rep: u64) -> RepData {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(rep + 1);
        let noise = Normal::new(0.0, cfg.noise_sd).expect("validated sd");
        let sites: Vec<SiteDataset> = self
            .sites
            .iter()
            .enumerate()
            .map(|(j, base)| {
                let (t, c): (Vec<&BaseUnit>, Vec<&BaseUnit>) = base.iter().partition(|u| u.treated);
                let mut drawn = Vec::with_capacity(base.len());
                for arm in [t, c] {
                    drawn.extend((0..arm.len()).map(|_| arm[rng.random_range(0..arm.len())]));
                }
                let units = drawn
                    .into_iter()
                    .enumerate()
                    .map(|(row, u)| {
                        let y0 = u.base + noise.sample(&mut rng);
                        let y1 = y0 + cfg.cate(j, &u.x) + noise.sample(&mut rng);
                        UnitRecord {
                            covariates: u.x.clone(),
                            treated: u.treated,
                            outcome: if u.treated { y1 } else { y0 },
                            site_id: site_name(j),
                            row,
                        }
                    })
                    .collect();
                SiteDataset::new(site_name(j), units, None)
                    .expect("both arms nonempty by construction")
            })
            .collect();
        let target: Vec<Vec<f64>> = sites
            .iter()
            .enumerate()
            .filter(|(j, _)| cfg.group_of(*j) == cfg.target_group)
            .flat_map(|(_, s)| s.covariates().map(<[f64]>::to_vec).collect::<Vec<_>>())
            .collect();
        let truth = (0..sites.len())
            .map(|j| target.iter().map(|x| cfg.cate(j, x)).sum::<f64>() / target.len() as f64)
            .collect();
        RepData {
            sites,
            target: TargetSpec::Sample(target),
            truth,
        }
    }
}

pub fn generate_rep(config: &SimConfig, rep: u64) -> Result<RepData, SimError> {
    Ok(SimDesign::new(config)?.generate_rep(rep))
}

/// One estimator configuration: a method, plus λ for weighting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorKey {
    pub method: Method,
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub method: Method,
    pub lambda: Option<f64>,
    pub rmse: f64,
    pub mean_abs_bias: f64,
    pub mean_ess: Option<f64>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub rep: usize,
    pub site_id: SiteId,
    pub method: Method,
    pub lambda: Option<f64>,
    pub estimate: Option<f64>,
    pub truth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    /// Weighting rows in ascending λ, then naive, outcome model, IPW and DR.
    pub rows: Vec<SimRow>,
    pub audit: Option<Vec<AuditRecord>>,
}

impl SimReport {
    pub fn row(&self, method: Method, lambda: Option<f64>) -> Option<&SimRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.lambda == lambda)
    }

    pub fn weighting_rows(&self) -> Vec<&SimRow> {
        self.rows
            .iter()
            .filter(|r| r.method == Method::Weighting)
            .collect()
    }
}

/// Per-replicate estimates: `cells[k][j]` for estimator `k` and site `j`.
struct RepResult {
    cells: Vec<Vec<Option<f64>>>,
    ess: Vec<Vec<Option<f64>>>,
    truth: Vec<f64>,
}

/// Scores `errors[r][j]` (estimate minus truth, `None` for a failed cell).
/// Bias is averaged over replicates per site, and mean absolute bias over
/// sites; RMSE is taken across sites within a replicate, then averaged
/// over replicates.
pub fn score(errors: &[Vec<Option<f64>>]) -> (f64, f64) {
    let sites = errors.first().map_or(0, Vec::len);
    let mut rmse_sum = 0.0;
    let mut rmse_n = 0usize;
    for rep in errors {
        let ok: Vec<f64> = rep.iter().flatten().copied().collect();
        if !ok.is_empty() {
            rmse_sum += (ok.iter().map(|e| e * e).sum::<f64>() / ok.len() as f64).sqrt();
            rmse_n += 1;
        }
    }
    let mut bias_sum = 0.0;
    let mut bias_n = 0usize;
    for j in 0..sites {
        let ok: Vec<f64> = errors.iter().filter_map(|rep| rep[j]).collect();
        if !ok.is_empty() {
            bias_sum += (ok.iter().sum::<f64>() / ok.len() as f64).abs();
            bias_n += 1;
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
    (mean(rmse_sum, rmse_n), mean(bias_sum, bias_n))
}

fn sorted_grid(grid: &[f64]) -> Vec<f64> {
    let mut g = grid.to_vec();
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

fn keys(grid: &[f64]) -> Vec<EstimatorKey> {
    let mut k: Vec<EstimatorKey> = grid
        .iter()
        .map(|&l| EstimatorKey {
            method: Method::Weighting,
            lambda: Some(l),
        })
        .collect();
    k.extend(
        [
            Method::Naive,
            Method::OutcomeModel,
            Method::Ipw,
            Method::DoublyRobust,
        ]
        .into_iter()
        .map(|method| EstimatorKey {
            method,
            lambda: None,
        }),
    );
    k
}

fn run_rep(design: &SimDesign, rep: usize, grid: &[f64]) -> Result<RepResult, SimError> {
    let cfg = design.config();
    let data = design.generate_rep(rep as u64);
    let pooled = pooled_covariates(&data.sites);
    let map = cfg.features.fit(&pooled)?;
    let mode = BalanceMode::linear(map.clone(), map.clone());
    let sample = data.target.sample().expect("sample target");
    let j = data.sites.len();
    let mut cells = vec![vec![None; j]; grid.len() + 4];
    let mut ess = vec![vec![None; j]; grid.len()];

    // sweep rows come back in descending λ
    let sweep = lambda_sweep(&data.sites, &data.target, &mode, grid, &cfg.solver)?;
    for row in &sweep {
        let k = grid
            .iter()
            .position(|&l| l == row.lambda)
            .expect("grid point");
        for (s, cell) in row.cells.iter().enumerate() {
            if let Ok(w) = &cell.result {
                if let Ok((m1, m0)) = weighted_arm_means(&data.sites[s], &w.gamma) {
                    cells[k][s] = Some(m1 - m0);
                    ess[k][s] = Some(w.ess);
                }
            }
        }
    }
    let g = grid.len();
    for (s, site) in data.sites.iter().enumerate() {
        cells[g][s] = Some(naive_estimate(site).estimate);
        cells[g + 1][s] = outcome_model_point(site, sample, &map).ok();
        let own: Vec<Vec<f64>> = site.covariates().map(<[f64]>::to_vec).collect();
        if let Ok(ratios) = density_ratio_fit(&own, sample, &map).and_then(|r| r.ratios_for(site)) {
            cells[g + 2][s] = ipw_estimate(site, &ratios.values, false)
                .ok()
                .map(|e| e.estimate);
            cells[g + 3][s] = doubly_robust_point(site, sample, &map, &ratios.values).ok();
        }
    }
    Ok(RepResult {
        cells,
        ess,
        truth: data.truth,
    })
}

/// Runs every replicate and scores each estimator. Deterministic given the
/// seed: replicate `r` draws from its own random stream, and results are
/// reduced in replicate order.
pub fn run_simulation(config: &SimConfig) -> Result<SimReport, SimError> {
    let design = SimDesign::new(config)?;
    let grid = sorted_grid(&config.lambda_grid);
    let results: Vec<RepResult> = (0..config.reps)
        .into_par_iter()
        .map(|r| run_rep(&design, r, &grid))
        .collect::<Result<_, _>>()?;
    let keys = keys(&grid);
    let mut rows = Vec::with_capacity(keys.len());
    for (k, key) in keys.iter().enumerate() {
        let errors: Vec<Vec<Option<f64>>> = results
            .iter()
            .map(|r| {
                r.cells[k]
                    .iter()
                    .zip(&r.truth)
                    .map(|(e, t)| e.map(|e| e - t))
                    .collect()
            })
            .collect();
        let (rmse, mean_abs_bias) = score(&errors);
        let failures = errors.iter().flatten().filter(|e| e.is_none()).count();
        let mean_ess = (k < grid.len()).then(|| {
            let v: Vec<f64> = results
                .iter()
                .flat_map(|r| r.ess[k].iter().flatten().copied())
                .collect();
            v.iter().sum::<f64>() / v.len().max(1) as f64
        });
        rows.push(SimRow {
            method: key.method,
            lambda: key.lambda,
            rmse,
            mean_abs_bias,
            mean_ess,
            failures,
        });
    }
    let audit = config.audit.then(|| {
        results
            .iter()
            .enumerate()
            .flat_map(|(rep, r)| {
                keys.iter().enumerate().flat_map(move |(k, key)| {
                    r.cells[k]
                        .iter()
                        .enumerate()
                        .map(move |(j, e)| AuditRecord {
                            rep,
                            site_id: site_name(j),
                            method: key.method,
                            lambda: key.lambda,
                            estimate: *e,
                            truth: r.truth[j],
                        })
                })
            })
            .collect()
    });
    Ok(SimReport { rows, audit })
}
