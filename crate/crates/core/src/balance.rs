//! Approximate balancing weights for one site against a target.
//!
//! The weights minimize
//!
//! ```text
//! ‖(1/(nπ)) Σ γᵢZᵢφ_τ(Xᵢ) − E*φ_τ‖² + ‖(1/n) Σ γᵢwᵢφ₀(Xᵢ)‖² + λ Σ γᵢ²dᵢ
//! ```
//!
//! with `wᵢ = (Zᵢ−π)/(π(1−π))` and `dᵢ = Zᵢ/π + (1−Zᵢ)/(1−π)`, subject to
//! the treated weights summing to `n1`, the control weights to `n0`, and
//! `γ ≥ 0`. In kernel mode the two norms are RKHS norms evaluated through
//! Gram matrices.
//!
//! Linear mode is solved in a lifted form with the imbalance vectors as
//! auxiliary variables, which keeps the KKT system sparse: its factor has
//! about `n·(k+2)` nonzeros instead of `n²`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureError, FeatureMap, KernelSpec};
use crate::model::{SiteDataset, SiteId, TargetSpec};
use crate::qp::{
    assemble_sparse, solve_qp, CscMatrix, QpError, QpSettings, QpStatus, QuadraticProgram,
    WarmStart,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BalanceError {
    #[error("mode mismatch: {0}")]
    ModeMismatch(&'static str),
    #[error("target moments have length {found}, feature map has {expected} outputs")]
    TargetDimension { expected: usize, found: usize },
    #[error("target sample is empty")]
    EmptyTarget,
    #[error("weights have length {found}, site has {expected} units")]
    WeightLength { expected: usize, found: usize },
    #[error("lambda must be finite and nonnegative, got {0}")]
    InvalidLambda(f64),
    #[error("lambda grid is empty")]
    EmptyGrid,
    #[error("all weights are zero")]
    AllZeroWeights,
    #[error("solver stopped with status {status} after {iterations} iterations")]
    SolverFailed { status: QpStatus, iterations: usize },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Qp(#[from] QpError),
}

/// How the two imbalance terms are measured.
#[derive(Debug, Clone, PartialEq)]
pub enum BalanceMode {
    /// Explicit feature maps for the effect and control-outcome terms.
    Linear {
        phi_tau: FeatureMap,
        phi_0: FeatureMap,
    },
    /// Kernels evaluated on the output of `map`. Bandwidths must already
    /// be resolved.
    Kernel {
        map: FeatureMap,
        k_tau: KernelSpec,
        k_0: KernelSpec,
    },
}

impl BalanceMode {
    pub fn linear(phi_tau: FeatureMap, phi_0: FeatureMap) -> Self {
        BalanceMode::Linear { phi_tau, phi_0 }
    }

    /// Kernel mode, resolving median-heuristic bandwidths on the mapped
    /// pooled sample.
    pub fn kernel(
        map: FeatureMap,
        k_tau: KernelSpec,
        k_0: KernelSpec,
        pooled: &[Vec<f64>],
    ) -> Result<Self, BalanceError> {
        let need = !(k_tau.is_resolved() && k_0.is_resolved());
        let mapped = if need {
            map.apply_all(pooled.iter().map(Vec::as_slice))?
        } else {
            Vec::new()
        };
        Ok(BalanceMode::Kernel {
            k_tau: k_tau.resolve(&mapped)?,
            k_0: k_0.resolve(&mapped)?,
            map,
        })
    }
}

/// One site's balancing program at a given `lambda`.
#[derive(Debug, Clone, Copy)]
pub struct BalanceProblem<'a> {
    pub site: &'a SiteDataset,
    pub target: &'a TargetSpec,
    pub mode: &'a BalanceMode,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub status: QpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub polished: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightFlag {
    /// Kish effective sample size below a tenth of the site size.
    LowEss,
    /// One arm has a single unit, so its weight is forced.
    SingletonArm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSolution {
    pub site_id: SiteId,
    pub gamma: Vec<f64>,
    pub lambda: f64,
    pub solver: SolverSummary,
    /// Balancing objective including the constant target term.
    pub objective: f64,
    pub imbalance_tau: f64,
    pub imbalance_0: f64,
    pub ess: f64,
    pub ess_treated: f64,
    pub ess_control: f64,
    pub flags: Vec<WeightFlag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceReport {
    pub imbalance_tau: f64,
    pub imbalance_0: f64,
    /// Signed per-feature imbalances; absent in kernel mode.
    pub per_feature_tau: Option<Vec<f64>>,
    pub per_feature_0: Option<Vec<f64>>,
}

/// Kish effective sample size `(Σγ)²/Σγ²`.
pub fn kish_ess(gamma: &[f64]) -> Result<f64, BalanceError> {
    let s: f64 = gamma.iter().sum();
    let s2: f64 = gamma.iter().map(|g| g * g).sum();
    if s2 == 0.0 {
        return Err(BalanceError::AllZeroWeights);
    }
    Ok(s * s / s2)
}

/// Problem data that does not depend on `lambda`.
struct Design {
    site_id: SiteId,
    n: usize,
    n1: usize,
    n0: usize,
    treated: Vec<bool>,
    dpen: Vec<f64>,
    kind: DesignKind,
}

enum DesignKind {
    Linear {
        /// Column i of `B_τᵀ`: `φ_τ(Xᵢ)/(nπ)` for treated units.
        tau_cols: Vec<Option<Vec<f64>>>,
        /// Column i of `B_0ᵀ`: `wᵢφ₀(Xᵢ)/n`.
        zero_cols: Vec<Vec<f64>>,
        target: Vec<f64>,
    },
    Kernel {
        /// Row-major `n×n` blocks of the two quadratic forms.
        m_tau: Vec<f64>,
        m_0: Vec<f64>,
        /// Cross term with the target: `Zᵢ Σ_ℓ k_τ(Xᵢ, X̃_ℓ)/(nπm)`.
        cross: Vec<f64>,
        /// Target self term `Σ_ℓℓ' k_τ(X̃_ℓ, X̃_ℓ')/m²`.
        self_term: f64,
    },
}

impl Design {
    fn new(
        site: &SiteDataset,
        target: &TargetSpec,
        mode: &BalanceMode,
    ) -> Result<Self, BalanceError> {
        let n = site.n();
        let nf = n as f64;
        let pi = site.propensity();
        let treated: Vec<bool> = site.units().iter().map(|u| u.treated).collect();
        let dpen = treated
            .iter()
            .map(|&t| if t { 1.0 / pi } else { 1.0 / (1.0 - pi) })
            .collect();
        let w: Vec<f64> = treated
            .iter()
            .map(|&t| ((t as u8 as f64) - pi) / (pi * (1.0 - pi)))
            .collect();
        if let TargetSpec::Sample(s) = target {
            if s.is_empty() {
                return Err(BalanceError::EmptyTarget);
            }
        }
        let kind = match mode {
            BalanceMode::Linear { phi_tau, phi_0 } => {
                let t = match target {
                    TargetSpec::Sample(s) => phi_tau.mean(s.iter().map(Vec::as_slice))?,
                    TargetSpec::Moments(m) => {
                        if m.len() != phi_tau.dim() {
                            return Err(BalanceError::TargetDimension {
                                expected: phi_tau.dim(),
                                found: m.len(),
                            });
                        }
                        m.clone()
                    }
                };
                let mut tau_cols = Vec::with_capacity(n);
                let mut zero_cols = Vec::with_capacity(n);
                for (u, wi) in site.units().iter().zip(&w) {
                    tau_cols.push(if u.treated {
                        Some(
                            phi_tau
                                .apply(&u.covariates)?
                                .into_iter()
                                .map(|v| v / (nf * pi))
                                .collect(),
                        )
                    } else {
                        None
                    });
                    zero_cols.push(
                        phi_0
                            .apply(&u.covariates)?
                            .into_iter()
                            .map(|v| wi * v / nf)
                            .collect(),
                    );
                }
                DesignKind::Linear {
                    tau_cols,
                    zero_cols,
                    target: t,
                }
            }
            BalanceMode::Kernel { map, k_tau, k_0 } => {
                let sample = target.sample().ok_or(BalanceError::ModeMismatch(
                    "kernel mode needs a unit-level target sample",
                ))?;
                if !(k_tau.is_resolved() && k_0.is_resolved()) {
                    return Err(FeatureError::UnresolvedBandwidth.into());
                }
                let xs = map.apply_all(site.covariates())?;
                let ts = map.apply_all(sample.iter().map(Vec::as_slice))?;
                let m = ts.len() as f64;
                let mut m_tau = vec![0.0; n * n];
                let mut m_0 = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..=i {
                        let k0 = w[i] * w[j] * k_0.eval_unchecked(&xs[i], &xs[j]) / (nf * nf);
                        m_0[i * n + j] = k0;
                        m_0[j * n + i] = k0;
                        if treated[i] && treated[j] {
                            let kt = k_tau.eval_unchecked(&xs[i], &xs[j]) / (nf * pi * nf * pi);
                            m_tau[i * n + j] = kt;
                            m_tau[j * n + i] = kt;
                        }
                    }
                }
                let (cross, self_term) = match k_tau {
                    KernelSpec::Linear => {
                        let mean = column_mean(&ts);
                        let cross = (0..n)
                            .map(|i| {
                                if treated[i] {
                                    dot(&xs[i], &mean) / (nf * pi)
                                } else {
                                    0.0
                                }
                            })
                            .collect();
                        (cross, dot(&mean, &mean))
                    }
                    _ => {
                        let cross = (0..n)
                            .map(|i| {
                                if treated[i] {
                                    ts.iter()
                                        .map(|t| k_tau.eval_unchecked(&xs[i], t))
                                        .sum::<f64>()
                                        / (nf * pi * m)
                                } else {
                                    0.0
                                }
                            })
                            .collect();
                        let mut s = 0.0;
                        for a in 0..ts.len() {
                            s += 1.0;
                            for b in 0..a {
                                s += 2.0 * k_tau.eval_unchecked(&ts[a], &ts[b]);
                            }
                        }
                        (cross, s / (m * m))
                    }
                };
                DesignKind::Kernel {
                    m_tau,
                    m_0,
                    cross,
                    self_term,
                }
            }
        };
        Ok(Self {
            site_id: site.site_id().clone(),
            n,
            n1: site.n1(),
            n0: site.n0(),
            treated,
            dpen,
            kind,
        })
    }

    fn sum_rows(&self) -> CscMatrix {
        let trip: Vec<_> = self
            .treated
            .iter()
            .enumerate()
            .map(|(i, &t)| (if t { 0 } else { 1 }, i, 1.0))
            .collect();
        CscMatrix::from_triplets(2, self.n, &trip).expect("in range")
    }

    fn sum_bounds(&self) -> [f64; 2] {
        [self.n1 as f64, self.n0 as f64]
    }

    /// The program actually handed to the solver: lifted in linear mode,
    /// dense in kernel mode.
    fn solver_qp(&self, lambda: f64) -> Result<QuadraticProgram, BalanceError> {
        match &self.kind {
            DesignKind::Linear {
                tau_cols,
                zero_cols,
                target,
            } => self.lifted_qp(lambda, tau_cols, zero_cols, target),
            DesignKind::Kernel {
                m_tau, m_0, cross, ..
            } => {
                let n = self.n;
                let p: Vec<Vec<f64>> = (0..n)
                    .map(|i| {
                        (0..n)
                            .map(|j| {
                                let diag = if i == j { lambda * self.dpen[i] } else { 0.0 };
                                2.0 * (m_tau[i * n + j] + m_0[i * n + j] + diag)
                            })
                            .collect()
                    })
                    .collect();
                let q: Vec<f64> = cross.iter().map(|c| -2.0 * c).collect();
                self.with_constraints(CscMatrix::from_dense_rows(&p)?, q)
            }
        }
    }

    fn with_constraints(
        &self,
        p: CscMatrix,
        q: Vec<f64>,
    ) -> Result<QuadraticProgram, BalanceError> {
        let n = self.n;
        let (_, a) = assemble_sparse(
            &[CscMatrix::zeros(n, n)],
            &[
                vec![Some(self.sum_rows())],
                vec![Some(CscMatrix::identity(n))],
            ],
        )?;
        let [s1, s0] = self.sum_bounds();
        let mut l = vec![s1, s0];
        let mut u = vec![s1, s0];
        l.extend(std::iter::repeat_n(0.0, n));
        u.extend(std::iter::repeat_n(f64::INFINITY, n));
        Ok(QuadraticProgram::new(p, q, a, l, u)?)
    }

    fn lifted_qp(
        &self,
        lambda: f64,
        tau_cols: &[Option<Vec<f64>>],
        zero_cols: &[Vec<f64>],
        target: &[f64],
    ) -> Result<QuadraticProgram, BalanceError> {
        let n = self.n;
        let kt = target.len();
        let k0 = zero_cols.first().map_or(0, Vec::len);
        let mut bt = Vec::new();
        let mut b0 = Vec::new();
        for i in 0..n {
            if let Some(col) = &tau_cols[i] {
                bt.extend(
                    col.iter()
                        .enumerate()
                        .filter(|(_, v)| **v != 0.0)
                        .map(|(r, &v)| (r, i, v)),
                );
            }
            b0.extend(
                zero_cols[i]
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(r, &v)| (r, i, v)),
            );
        }
        let pen: Vec<f64> = self.dpen.iter().map(|d| 2.0 * lambda * d).collect();
        let mut p_blocks = vec![CscMatrix::diagonal(&pen)];
        let mut a_rows: Vec<Vec<Option<CscMatrix>>> = Vec::new();
        let mut l = Vec::new();
        let mut u = Vec::new();
        let blocks = [(kt, bt, target.to_vec()), (k0, b0, vec![0.0; k0])];
        let used: Vec<_> = blocks.into_iter().filter(|(k, _, _)| *k > 0).collect();
        for (b, (k, trip, rhs)) in used.iter().enumerate() {
            p_blocks.push(CscMatrix::diagonal(&vec![2.0; *k]));
            let mut row: Vec<Option<CscMatrix>> = vec![None; used.len() + 1];
            row[0] = Some(CscMatrix::from_triplets(*k, n, trip)?);
            row[b + 1] = Some(CscMatrix::diagonal(&vec![-1.0; *k]));
            a_rows.push(row);
            l.extend_from_slice(rhs);
            u.extend_from_slice(rhs);
        }
        let mut sums: Vec<Option<CscMatrix>> = vec![None; used.len() + 1];
        sums[0] = Some(self.sum_rows());
        a_rows.push(sums);
        let [s1, s0] = self.sum_bounds();
        l.extend([s1, s0]);
        u.extend([s1, s0]);
        let mut nonneg: Vec<Option<CscMatrix>> = vec![None; used.len() + 1];
        nonneg[0] = Some(CscMatrix::identity(n));
        a_rows.push(nonneg);
        l.extend(std::iter::repeat_n(0.0, n));
        u.extend(std::iter::repeat_n(f64::INFINITY, n));
        let (p, a) = assemble_sparse(&p_blocks, &a_rows)?;
        let nv = p.ncols();
        Ok(QuadraticProgram::new(p, vec![0.0; nv], a, l, u)?)
    }

    fn imbalance(&self, gamma: &[f64]) -> ImbalanceReport {
        match &self.kind {
            DesignKind::Linear {
                tau_cols,
                zero_cols,
                target,
            } => {
                let mut vt: Vec<f64> = target.iter().map(|t| -t).collect();
                let mut v0 = vec![0.0; zero_cols.first().map_or(0, Vec::len)];
                for (i, &g) in gamma.iter().enumerate() {
                    if let Some(col) = &tau_cols[i] {
                        axpy(g, col, &mut vt);
                    }
                    axpy(g, &zero_cols[i], &mut v0);
                }
                ImbalanceReport {
                    imbalance_tau: norm(&vt),
                    imbalance_0: norm(&v0),
                    per_feature_tau: Some(vt),
                    per_feature_0: Some(v0),
                }
            }
            DesignKind::Kernel {
                m_tau,
                m_0,
                cross,
                self_term,
            } => {
                let quad = |m: &[f64]| {
                    let n = self.n;
                    (0..n)
                        .map(|i| gamma[i] * dot(&m[i * n..(i + 1) * n], gamma))
                        .sum::<f64>()
                };
                let tau2 = quad(m_tau) - 2.0 * dot(cross, gamma) + self_term;
                ImbalanceReport {
                    imbalance_tau: tau2.max(0.0).sqrt(),
                    imbalance_0: quad(m_0).max(0.0).sqrt(),
                    per_feature_tau: None,
                    per_feature_0: None,
                }
            }
        }
    }

    fn solve(
        &self,
        lambda: f64,
        settings: &QpSettings,
        warm: Option<WarmStart>,
    ) -> Result<(WeightSolution, WarmStart), BalanceError> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(BalanceError::InvalidLambda(lambda));
        }
        let qp = self.solver_qp(lambda)?;
        let mut settings = settings.clone();
        settings.warm_start = warm;
        let sol = solve_qp(&qp, &settings)?;
        if !sol.is_solved() {
            return Err(BalanceError::SolverFailed {
                status: sol.status,
                iterations: sol.iterations,
            });
        }
        // project onto the feasible set: clear solver-tolerance negatives,
        // then restore each arm's exact sum
        let mut gamma: Vec<f64> = sol.x[..self.n].iter().map(|g| g.max(0.0)).collect();
        for (arm, size) in [(true, self.n1), (false, self.n0)] {
            let sum: f64 = gamma
                .iter()
                .zip(&self.treated)
                .filter(|(_, &t)| t == arm)
                .map(|(g, _)| g)
                .sum();
            if sum > 0.0 {
                let f = size as f64 / sum;
                gamma
                    .iter_mut()
                    .zip(&self.treated)
                    .filter(|(_, &t)| t == arm)
                    .for_each(|(g, _)| *g *= f);
            }
        }
        let report = self.imbalance(&gamma);
        let penalty: f64 = gamma.iter().zip(&self.dpen).map(|(g, d)| d * g * g).sum();
        let (gt, gc): (Vec<f64>, Vec<f64>) = {
            let mut gt = Vec::with_capacity(self.n1);
            let mut gc = Vec::with_capacity(self.n0);
            for (&g, &t) in gamma.iter().zip(&self.treated) {
                if t {
                    gt.push(g)
                } else {
                    gc.push(g)
                }
            }
            (gt, gc)
        };
        let ess = kish_ess(&gamma)?;
        let mut flags = Vec::new();
        if ess < 0.1 * self.n as f64 {
            flags.push(WeightFlag::LowEss);
        }
        if self.n1 == 1 || self.n0 == 1 {
            flags.push(WeightFlag::SingletonArm);
        }
        let solution = WeightSolution {
            site_id: self.site_id.clone(),
            objective: report.imbalance_tau.powi(2) + report.imbalance_0.powi(2) + lambda * penalty,
            imbalance_tau: report.imbalance_tau,
            imbalance_0: report.imbalance_0,
            ess,
            ess_treated: kish_ess(&gt).unwrap_or(0.0),
            ess_control: kish_ess(&gc).unwrap_or(0.0),
            gamma,
            lambda,
            solver: SolverSummary {
                status: sol.status,
                iterations: sol.iterations,
                primal_residual: sol.primal_residual,
                dual_residual: sol.dual_residual,
                polished: sol.polished,
            },
            flags,
        };
        Ok((solution, WarmStart { x: sol.x, y: sol.y }))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn column_mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut acc = vec![0.0; rows.first().map_or(0, Vec::len)];
    for r in rows {
        axpy(1.0, r, &mut acc);
    }
    acc.iter().map(|a| a / rows.len() as f64).collect()
}

/// The linear-mode program in condensed form over `γ` alone:
/// `P = 2(B_τB_τᵀ + B_0B_0ᵀ + λD)`, `q = −2B_τt`, where row i of `B_τ` is
/// `Zᵢφ_τ(Xᵢ)/(nπ)` and row i of `B_0` is `wᵢφ₀(Xᵢ)/n`. The constant
/// `tᵀt` is dropped. Dense in `n`; [`solve_weights`] uses an equivalent
/// sparse form.
pub fn build_linear_qp(prob: &BalanceProblem) -> Result<QuadraticProgram, BalanceError> {
    if !matches!(prob.mode, BalanceMode::Linear { .. }) {
        return Err(BalanceError::ModeMismatch("expected linear mode"));
    }
    check_lambda(prob.lambda)?;
    let design = Design::new(prob.site, prob.target, prob.mode)?;
    let DesignKind::Linear {
        tau_cols,
        zero_cols,
        target,
    } = &design.kind
    else {
        unreachable!("linear mode builds a linear design")
    };
    let n = design.n;
    let empty = Vec::new();
    let tc: Vec<&Vec<f64>> = tau_cols
        .iter()
        .map(|c| c.as_ref().unwrap_or(&empty))
        .collect();
    let p: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let diag = if i == j {
                        prob.lambda * design.dpen[i]
                    } else {
                        0.0
                    };
                    2.0 * (dot(tc[i], tc[j]) + dot(&zero_cols[i], &zero_cols[j]) + diag)
                })
                .collect()
        })
        .collect();
    let q: Vec<f64> = tc.iter().map(|c| -2.0 * dot(c, target)).collect();
    design.with_constraints(CscMatrix::from_dense_rows(&p)?, q)
}

/// Sparse linear-mode program over `[γ, u_τ, u_0]` with
/// `u_τ = B_τᵀγ − t` and `u_0 = B_0ᵀγ` as equality rows. Its objective
/// equals the balancing objective exactly, constant included.
pub fn build_lifted_linear_qp(prob: &BalanceProblem) -> Result<QuadraticProgram, BalanceError> {
    if !matches!(prob.mode, BalanceMode::Linear { .. }) {
        return Err(BalanceError::ModeMismatch("expected linear mode"));
    }
    check_lambda(prob.lambda)?;
    Design::new(prob.site, prob.target, prob.mode)?.solver_qp(prob.lambda)
}

/// The kernel-mode program over `γ`. The constant target self term is
/// dropped.
pub fn build_kernel_qp(prob: &BalanceProblem) -> Result<QuadraticProgram, BalanceError> {
    if !matches!(prob.mode, BalanceMode::Kernel { .. }) {
        return Err(BalanceError::ModeMismatch("expected kernel mode"));
    }
    check_lambda(prob.lambda)?;
    Design::new(prob.site, prob.target, prob.mode)?.solver_qp(prob.lambda)
}

fn check_lambda(lambda: f64) -> Result<(), BalanceError> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(BalanceError::InvalidLambda(lambda))
    }
}

pub fn solve_weights(
    prob: &BalanceProblem,
    settings: &QpSettings,
) -> Result<WeightSolution, BalanceError> {
    check_lambda(prob.lambda)?;
    let design = Design::new(prob.site, prob.target, prob.mode)?;
    design.solve(prob.lambda, settings, None).map(|(w, _)| w)
}

/// Imbalance of arbitrary weights. Kernel mode reports RKHS-norm
/// imbalances without per-feature vectors.
pub fn imbalance_report(
    site: &SiteDataset,
    gamma: &[f64],
    prob: &BalanceProblem,
) -> Result<ImbalanceReport, BalanceError> {
    if gamma.len() != site.n() {
        return Err(BalanceError::WeightLength {
            expected: site.n(),
            found: gamma.len(),
        });
    }
    Ok(Design::new(site, prob.target, prob.mode)?.imbalance(gamma))
}

/// One site at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub site_id: SiteId,
    pub result: Result<WeightSolution, BalanceError>,
}

/// Cross-site averages at one grid point, over sites that solved.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub imbalance_tau: f64,
    pub imbalance_0: f64,
    pub ess: f64,
    pub solved: usize,
    pub failed: usize,
    pub cells: Vec<SweepCell>,
}

/// Solves every site along a λ grid, from the largest λ down, warm
/// starting each solve from the previous one. Rows come back in
/// descending λ order. Failed cells are recorded, not fatal.
pub fn lambda_sweep(
    sites: &[SiteDataset],
    target: &TargetSpec,
    mode: &BalanceMode,
    lambdas: &[f64],
    settings: &QpSettings,
) -> Result<Vec<SweepRow>, BalanceError> {
    if lambdas.is_empty() {
        return Err(BalanceError::EmptyGrid);
    }
    for &l in lambdas {
        check_lambda(l)?;
    }
    let mut grid = lambdas.to_vec();
    grid.sort_by(|a, b| b.total_cmp(a));
    let per_site: Vec<Vec<Result<WeightSolution, BalanceError>>> = sites
        .par_iter()
        .map(|site| match Design::new(site, target, mode) {
            Err(e) => vec![Err(e); grid.len()],
            Ok(design) => {
                let mut warm = None;
                grid.iter()
                    .map(|&l| {
                        // a warm start from a distant λ can stall; retry cold
                        let out = match warm.take() {
                            Some(ws) => design.solve(l, settings, Some(ws)).or_else(|e| match e {
                                BalanceError::SolverFailed { .. } => {
                                    design.solve(l, settings, None)
                                }
                                other => Err(other),
                            }),
                            None => design.solve(l, settings, None),
                        };
                        out.map(|(w, ws)| {
                            warm = Some(ws);
                            w
                        })
                    })
                    .collect()
            }
        })
        .collect();
    Ok(grid
        .iter()
        .enumerate()
        .map(|(g, &lambda)| {
            let cells: Vec<SweepCell> = sites
                .iter()
                .zip(&per_site)
                .map(|(s, res)| SweepCell {
                    site_id: s.site_id().clone(),
                    result: res[g].clone(),
                })
                .collect();
            let ok: Vec<&WeightSolution> = cells
                .iter()
                .filter_map(|c| c.result.as_ref().ok())
                .collect();
            let avg = |f: fn(&WeightSolution) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|w| f(w)).sum::<f64>() / ok.len() as f64
                }
            };
            SweepRow {
                lambda,
                imbalance_tau: avg(|w| w.imbalance_tau),
                imbalance_0: avg(|w| w.imbalance_0),
                ess: avg(|w| w.ess),
                solved: ok.len(),
                failed: cells.len() - ok.len(),
                cells,
            }
        })
        .collect())
}
