//! Feature maps and kernels for the balancing programs.
//!
//! A [`FeatureMapSpec`] is fitted once on the pooled experimental and
//! target covariates; the fitted [`FeatureMap`] is then applied to every
//! unit so that all sites and the target live in one feature space.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("cannot fit a feature map on an empty sample")]
    EmptySample,
    #[error("interaction ({0}, {1}) refers to a covariate beyond dimension {2}")]
    InteractionOutOfRange(usize, usize, usize),
    #[error("expected a vector of length {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("all points are identical; no bandwidth can be derived")]
    AllPointsIdentical,
    #[error("kernel bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),
    #[error("RBF bandwidth has not been resolved")]
    UnresolvedBandwidth,
}

/// Which transformations of the raw covariates to use.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureMapSpec {
    /// Pairs of raw covariate indices whose products are appended.
    pub interactions: Vec<(usize, usize)>,
    /// Divide every feature by its pooled population standard deviation.
    pub standardize: bool,
}

impl FeatureMapSpec {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn standardized() -> Self {
        Self {
            interactions: Vec::new(),
            standardize: true,
        }
    }

    pub fn fit(&self, pooled: &[Vec<f64>]) -> Result<FeatureMap, FeatureError> {
        fit_feature_map(self, pooled)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum Column {
    Base(usize),
    Product(usize, usize),
}

impl Column {
    fn eval(self, x: &[f64]) -> f64 {
        match self {
            Column::Base(i) => x[i],
            Column::Product(i, j) => x[i] * x[j],
        }
    }

    fn name(self) -> String {
        match self {
            Column::Base(i) => format!("x{}", i + 1),
            Column::Product(i, j) => format!("x{}:x{}", i + 1, j + 1),
        }
    }
}

/// A feature map fitted to a pooled sample. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    spec: FeatureMapSpec,
    input_dim: usize,
    columns: Vec<Column>,
    scale: Vec<f64>,
    dropped: Vec<String>,
}

/// Fits scales on `pooled` and drops features that are constant there.
pub fn fit_feature_map(
    spec: &FeatureMapSpec,
    pooled: &[Vec<f64>],
) -> Result<FeatureMap, FeatureError> {
    let first = pooled.first().ok_or(FeatureError::EmptySample)?;
    let d = first.len();
    if let Some(row) = pooled.iter().find(|r| r.len() != d) {
        return Err(FeatureError::DimensionMismatch {
            expected: d,
            found: row.len(),
        });
    }
    if let Some(&(i, j)) = spec.interactions.iter().find(|&&(i, j)| i >= d || j >= d) {
        return Err(FeatureError::InteractionOutOfRange(i, j, d));
    }
    let candidates = (0..d).map(Column::Base).chain(
        spec.interactions
            .iter()
            .map(|&(i, j)| Column::Product(i, j)),
    );
    let mut columns = Vec::new();
    let mut scale = Vec::new();
    let mut dropped = Vec::new();
    for col in candidates {
        let sd = population_sd(pooled.iter().map(|x| col.eval(x)));
        let magnitude = pooled.iter().map(|x| col.eval(x).abs()).fold(0.0, f64::max);
        if sd <= 1e-12 * (1.0 + magnitude) {
            dropped.push(col.name());
            continue;
        }
        columns.push(col);
        scale.push(if spec.standardize { sd } else { 1.0 });
    }
    Ok(FeatureMap {
        spec: spec.clone(),
        input_dim: d,
        columns,
        scale,
        dropped,
    })
}

fn population_sd(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for v in values {
        n += 1.0;
        let delta = v - mean;
        mean += delta / n;
        m2 += delta * (v - mean);
    }
    (m2 / n).sqrt()
}

impl FeatureMap {
    /// A map with no output features. As a control-side map it switches
    /// off the treated/control balance term.
    pub fn empty(input_dim: usize) -> Self {
        Self {
            spec: FeatureMapSpec::identity(),
            input_dim,
            columns: Vec::new(),
            scale: Vec::new(),
            dropped: Vec::new(),
        }
    }

    pub fn spec(&self) -> &FeatureMapSpec {
        &self.spec
    }

    /// Number of raw covariates the map expects.
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Number of output features.
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    /// Per-feature divisors (all ones when not standardizing).
    pub fn scales(&self) -> &[f64] {
        &self.scale
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name()).collect()
    }

    /// Names of features dropped for having zero variance.
    pub fn dropped(&self) -> &[String] {
        &self.dropped
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>, FeatureError> {
        if x.len() != self.input_dim {
            return Err(FeatureError::DimensionMismatch {
                expected: self.input_dim,
                found: x.len(),
            });
        }
        Ok(self
            .columns
            .iter()
            .zip(&self.scale)
            .map(|(c, s)| c.eval(x) / s)
            .collect())
    }

    pub fn apply_all<'a>(
        &self,
        rows: impl IntoIterator<Item = &'a [f64]>,
    ) -> Result<Vec<Vec<f64>>, FeatureError> {
        rows.into_iter().map(|x| self.apply(x)).collect()
    }

    /// Mean feature vector over a sample.
    pub fn mean<'a>(
        &self,
        rows: impl IntoIterator<Item = &'a [f64]>,
    ) -> Result<Vec<f64>, FeatureError> {
        let mut acc = vec![0.0; self.dim()];
        let mut count = 0usize;
        for x in rows {
            for (a, v) in acc.iter_mut().zip(self.apply(x)?) {
                *a += v;
            }
            count += 1;
        }
        if count == 0 {
            return Err(FeatureError::EmptySample);
        }
        Ok(acc.into_iter().map(|a| a / count as f64).collect())
    }
}

pub fn apply_feature_map(map: &FeatureMap, x: &[f64]) -> Result<Vec<f64>, FeatureError> {
    map.apply(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Fixed(f64),
    MedianHeuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum KernelSpec {
    Linear,
    /// `exp(-‖x-y‖² / (2σ²))`.
    Rbf {
        bandwidth: Bandwidth,
    },
}

impl KernelSpec {
    pub fn rbf(sigma: f64) -> Self {
        KernelSpec::Rbf {
            bandwidth: Bandwidth::Fixed(sigma),
        }
    }

    /// Fixes a median-heuristic bandwidth from `sample`; other kernels are
    /// returned unchanged after validation.
    pub fn resolve(self, sample: &[Vec<f64>]) -> Result<Self, FeatureError> {
        match self {
            KernelSpec::Linear => Ok(self),
            KernelSpec::Rbf {
                bandwidth: Bandwidth::Fixed(s),
            } => {
                if s > 0.0 && s.is_finite() {
                    Ok(self)
                } else {
                    Err(FeatureError::InvalidBandwidth(s))
                }
            }
            KernelSpec::Rbf {
                bandwidth: Bandwidth::MedianHeuristic,
            } => Ok(KernelSpec::rbf(resolve_bandwidth(sample)?)),
        }
    }

    pub fn is_resolved(&self) -> bool {
        !matches!(
            self,
            KernelSpec::Rbf {
                bandwidth: Bandwidth::MedianHeuristic
            }
        )
    }

    /// Kernel value without length or resolution checks.
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => x.iter().zip(y).map(|(a, b)| a * b).sum(),
            KernelSpec::Rbf {
                bandwidth: Bandwidth::Fixed(s),
            } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * s * s)).exp()
            }
            KernelSpec::Rbf {
                bandwidth: Bandwidth::MedianHeuristic,
            } => f64::NAN,
        }
    }
}

pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64, FeatureError> {
    if x.len() != y.len() {
        return Err(FeatureError::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if !spec.is_resolved() {
        return Err(FeatureError::UnresolvedBandwidth);
    }
    Ok(spec.eval_unchecked(x, y))
}

/// Dense Gram matrix `K[i][j] = k(xs[i], xs[j])`.
pub fn gram(spec: &KernelSpec, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, FeatureError> {
    let n = xs.len();
    let mut k = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let v = kernel_eval(spec, &xs[i], &xs[j])?;
            k[i][j] = v;
            k[j][i] = v;
        }
    }
    Ok(k)
}

const BANDWIDTH_SUBSAMPLE: usize = 2000;

/// Median pairwise Euclidean distance, on an evenly strided subsample of
/// at most 2000 points. Falls back to the median nonzero distance when
/// more than half the pairs coincide.
pub fn resolve_bandwidth(sample: &[Vec<f64>]) -> Result<f64, FeatureError> {
    let n = sample.len();
    let distinct = sample.iter().any(|x| x != &sample[0]);
    if n < 2 || !distinct {
        return Err(FeatureError::AllPointsIdentical);
    }
    let m = n.min(BANDWIDTH_SUBSAMPLE);
    let sub: Vec<&[f64]> = (0..m).map(|k| sample[k * n / m].as_slice()).collect();
    let mut dists = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in 0..i {
            dists.push(euclidean(sub[i], sub[j]));
        }
    }
    let med = median(&mut dists);
    if med > 0.0 {
        return Ok(med);
    }
    let mut nonzero: Vec<f64> = dists.into_iter().filter(|&d| d > 0.0).collect();
    if nonzero.is_empty() {
        // every subsampled point coincides; use distances to the first point
        nonzero = sample
            .iter()
            .map(|x| euclidean(x, &sample[0]))
            .filter(|&d| d > 0.0)
            .collect();
    }
    Ok(median(&mut nonzero))
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn median(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (_, &mut hi, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        hi
    } else {
        let lo = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}
