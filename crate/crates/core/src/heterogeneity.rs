//! Cross-site variation of effects: Q-statistic profile, point estimate
//! and test-inversion interval for the between-site variance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeterogeneityError {
    #[error("need at least 2 sites, found {0}")]
    TooFewSites(usize),
    #[error("{estimates} estimates but {std_errors} standard errors")]
    LengthMismatch { estimates: usize, std_errors: usize },
    #[error("site {index}: standard error must be positive and finite, found {value}")]
    InvalidStdError { index: usize, value: f64 },
    #[error("site {index}: estimate is not finite")]
    NonFiniteEstimate { index: usize },
    #[error("theta must be nonnegative and finite, found {0}")]
    InvalidTheta(f64),
    #[error("alpha must lie in (0, 1), found {0}")]
    InvalidAlpha(f64),
    #[error("probability must lie in (0, 1), found {0}")]
    InvalidProbability(f64),
    #[error("degrees of freedom must be positive")]
    InvalidDf,
    #[error("untransported heterogeneity is zero, so the pseudo-R² is undefined")]
    ZeroBaseline,
}

/// Per-site effect estimates with their standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteEffectSet {
    estimates: Vec<f64>,
    std_errors: Vec<f64>,
}

impl SiteEffectSet {
    pub fn new(estimates: Vec<f64>, std_errors: Vec<f64>) -> Result<Self, HeterogeneityError> {
        if estimates.len() != std_errors.len() {
            return Err(HeterogeneityError::LengthMismatch {
                estimates: estimates.len(),
                std_errors: std_errors.len(),
            });
        }
        if estimates.len() < 2 {
            return Err(HeterogeneityError::TooFewSites(estimates.len()));
        }
        if let Some(index) = estimates.iter().position(|e| !e.is_finite()) {
            return Err(HeterogeneityError::NonFiniteEstimate { index });
        }
        if let Some(index) = std_errors.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(HeterogeneityError::InvalidStdError {
                index,
                value: std_errors[index],
            });
        }
        Ok(Self {
            estimates,
            std_errors,
        })
    }

    pub fn estimates(&self) -> &[f64] {
        &self.estimates
    }

    pub fn std_errors(&self) -> &[f64] {
        &self.std_errors
    }

    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }

    /// Precision-weighted mean with weights `1/(se² + θ)`.
    pub fn weighted_mean(&self, theta: f64) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (t, s) in self.estimates.iter().zip(&self.std_errors) {
            let w = 1.0 / (s * s + theta);
            num += w * t;
            den += w;
        }
        num / den
    }
}

/// `Q(θ) = Σ (τ̂ⱼ − τ̄(θ))² / (seⱼ² + θ)`.
pub fn q_statistic(effects: &SiteEffectSet, theta: f64) -> Result<f64, HeterogeneityError> {
    if !(theta.is_finite() && theta >= 0.0) {
        return Err(HeterogeneityError::InvalidTheta(theta));
    }
    Ok(q_unchecked(effects, theta))
}

fn q_unchecked(effects: &SiteEffectSet, theta: f64) -> f64 {
    let bar = effects.weighted_mean(theta);
    effects
        .estimates
        .iter()
        .zip(&effects.std_errors)
        .map(|(t, s)| (t - bar).powi(2) / (s * s + theta))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityReport {
    pub sites: usize,
    pub alpha: f64,
    /// Between-site variance estimate.
    pub theta_hat: f64,
    /// `sqrt(theta_hat)`.
    pub theta_sd: f64,
    /// Interval for the between-site variance.
    pub ci_variance: (f64, f64),
    /// Interval on the standard-deviation scale.
    pub ci_sd: (f64, f64),
    pub q_at_zero: f64,
    /// Set when every estimate is identical, so the profile is flat at 0.
    pub degenerate: bool,
}

/// Smallest `θ ≥ 0` with `Q(θ) ≤ level`, by bisection on a geometrically
/// grown bracket.
fn invert_profile(effects: &SiteEffectSet, level: f64) -> f64 {
    if q_unchecked(effects, 0.0) <= level {
        return 0.0;
    }
    let spread = {
        let m = effects.estimates.iter().sum::<f64>() / effects.len() as f64;
        effects
            .estimates
            .iter()
            .map(|t| (t - m).powi(2))
            .sum::<f64>()
    };
    let mut hi = spread.max(f64::MIN_POSITIVE);
    while q_unchecked(effects, hi) > level {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if q_unchecked(effects, mid) > level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Point estimate solving `Q(θ) = J − 1` and the interval from inverting
/// `Q(θ₀) ~ χ²_{J−1}` at level `1 − alpha`, truncated at zero.
pub fn estimate_theta(
    effects: &SiteEffectSet,
    alpha: f64,
) -> Result<HeterogeneityReport, HeterogeneityError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(HeterogeneityError::InvalidAlpha(alpha));
    }
    let j = effects.len();
    let df = (j - 1) as f64;
    let first = effects.estimates[0];
    let degenerate = effects.estimates.iter().all(|&t| t == first);
    let theta_hat = invert_profile(effects, df);
    let lower = invert_profile(effects, chi_square_quantile(df, 1.0 - alpha / 2.0)?);
    let upper = invert_profile(effects, chi_square_quantile(df, alpha / 2.0)?);
    Ok(HeterogeneityReport {
        sites: j,
        alpha,
        theta_hat,
        theta_sd: theta_hat.sqrt(),
        ci_variance: (lower, upper),
        ci_sd: (lower.sqrt(), upper.sqrt()),
        q_at_zero: q_unchecked(effects, 0.0),
        degenerate,
    })
}

/// `1 − (θ*/θ)²` with both arguments on the standard-deviation scale.
pub fn pseudo_r2(
    theta_sd_untransported: f64,
    theta_sd_transported: f64,
) -> Result<f64, HeterogeneityError> {
    if !(theta_sd_untransported > 0.0) {
        return Err(HeterogeneityError::ZeroBaseline);
    }
    Ok(1.0 - (theta_sd_transported / theta_sd_untransported).powi(2))
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` by the Lanczos approximation.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma `P(a, x)`: power series below
/// `a + 1`, continued fraction (modified Lentz) above.
pub fn regularized_gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let log_prefix = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..10_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        (sum.ln() + log_prefix).exp().min(1.0)
    } else {
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (1.0 - (log_prefix.exp() * h)).max(0.0)
    }
}

pub fn chi_square_cdf(df: f64, x: f64) -> f64 {
    regularized_gamma_p(0.5 * df, 0.5 * x)
}

/// Inverse χ² CDF by bisection on the incomplete gamma function.
pub fn chi_square_quantile(df: f64, p: f64) -> Result<f64, HeterogeneityError> {
    if !(df > 0.0 && df.is_finite()) {
        return Err(HeterogeneityError::InvalidDf);
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(HeterogeneityError::InvalidProbability(p));
    }
    let mut hi = df.max(1.0);
    while chi_square_cdf(df, hi) < p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if chi_square_cdf(df, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
