//! Convex quadratic programming by operator splitting.
//!
//! Solves
//!
//! ```text
//! minimize    ½ xᵀPx + qᵀx
//! subject to  l ≤ Ax ≤ u
//! ```
//!
//! with an ADMM scheme: one quasi-definite KKT factorization is reused
//! across iterations and refreshed only when the step size `rho` adapts.
//! Converged iterates are polished by solving the equality-constrained
//! problem on the guessed active set.

mod admm;
mod csc;
pub(crate) mod ldl;

pub use admm::solve_qp;
pub use csc::CscMatrix;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty program: no variable blocks")]
    EmptyProgram,
    #[error("P is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("infeasible bounds at row {0}: l > u")]
    InvalidBounds(usize),
    #[error("non-finite problem data: {0}")]
    NonFinite(&'static str),
    #[error("P is not positive semidefinite")]
    NonConvex,
    #[error("KKT factorization failed at pivot {0}")]
    Factorization(usize),
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
}

/// `minimize ½xᵀPx + qᵀx  s.t.  l ≤ Ax ≤ u`.
///
/// `P` is stored in full (both triangles). Equalities are rows with
/// `l == u`; one-sided rows use `±∞`.
#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    pub p: CscMatrix,
    pub q: Vec<f64>,
    pub a: CscMatrix,
    pub l: Vec<f64>,
    pub u: Vec<f64>,
}

impl QuadraticProgram {
    pub fn new(
        p: CscMatrix,
        q: Vec<f64>,
        a: CscMatrix,
        l: Vec<f64>,
        u: Vec<f64>,
    ) -> Result<Self, QpError> {
        let n = q.len();
        if p.nrows() != n || p.ncols() != n {
            return Err(QpError::DimensionMismatch(format!(
                "P is {}x{}, q has length {n}",
                p.nrows(),
                p.ncols()
            )));
        }
        if a.ncols() != n {
            return Err(QpError::DimensionMismatch(format!(
                "A has {} columns, expected {n}",
                a.ncols()
            )));
        }
        let m = a.nrows();
        if l.len() != m || u.len() != m {
            return Err(QpError::DimensionMismatch(format!(
                "bounds have lengths {}/{}, A has {m} rows",
                l.len(),
                u.len()
            )));
        }
        if p.nzval()
            .iter()
            .chain(&q)
            .chain(a.nzval())
            .any(|v| !v.is_finite())
        {
            return Err(QpError::NonFinite("P, q and A must be finite"));
        }
        if l.iter().chain(&u).any(|v| v.is_nan()) {
            return Err(QpError::NonFinite("bounds must not be NaN"));
        }
        if let Some(i) = (0..m).find(|&i| l[i] > u[i]) {
            return Err(QpError::InvalidBounds(i));
        }
        let asym = p.asymmetry();
        if asym > 1e-10 {
            return Err(QpError::NotSymmetric(asym));
        }
        Ok(Self { p, q, a, l, u })
    }

    /// Convenience constructor from dense row-major data.
    pub fn from_dense(
        p: &[Vec<f64>],
        q: &[f64],
        a: &[Vec<f64>],
        l: &[f64],
        u: &[f64],
    ) -> Result<Self, QpError> {
        let pm = if p.is_empty() {
            CscMatrix::zeros(q.len(), q.len())
        } else {
            CscMatrix::from_dense_rows(p)?
        };
        let am = if a.is_empty() {
            CscMatrix::zeros(0, q.len())
        } else {
            CscMatrix::from_dense_rows(a)?
        };
        Self::new(pm, q.to_vec(), am, l.to_vec(), u.to_vec())
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.a.nrows()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut px = vec![0.0; x.len()];
        self.p.mul_vec(x, &mut px);
        x.iter().zip(&px).map(|(a, b)| 0.5 * a * b).sum::<f64>()
            + x.iter().zip(&self.q).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Assembles a program's matrices from blocks: `P` is block-diagonal in
/// `p_blocks` (each square), and `A` is a grid of block rows whose block
/// columns line up with the `P` blocks. Zero blocks are never densified.
pub fn assemble_sparse(
    p_blocks: &[CscMatrix],
    a_blocks: &[Vec<Option<CscMatrix>>],
) -> Result<(CscMatrix, CscMatrix), QpError> {
    if p_blocks.is_empty() {
        return Err(QpError::EmptyProgram);
    }
    let widths: Vec<usize> = p_blocks
        .iter()
        .enumerate()
        .map(|(k, b)| {
            if b.nrows() == b.ncols() {
                Ok(b.ncols())
            } else {
                Err(QpError::DimensionMismatch(format!(
                    "P block {k} is {}x{}, expected square",
                    b.nrows(),
                    b.ncols()
                )))
            }
        })
        .collect::<Result<_, _>>()?;
    let nb = p_blocks.len();
    let p_grid: Vec<Vec<Option<&CscMatrix>>> = (0..nb)
        .map(|r| (0..nb).map(|c| (r == c).then(|| &p_blocks[r])).collect())
        .collect();
    let p = CscMatrix::from_blocks(&p_grid, &widths, &widths)?;

    let mut heights = Vec::with_capacity(a_blocks.len());
    for (r, row) in a_blocks.iter().enumerate() {
        let h = row
            .iter()
            .flatten()
            .map(CscMatrix::nrows)
            .next()
            .ok_or_else(|| {
                QpError::DimensionMismatch(format!("constraint block row {r} is entirely empty"))
            })?;
        heights.push(h);
    }
    let a_grid: Vec<Vec<Option<&CscMatrix>>> = a_blocks
        .iter()
        .map(|row| row.iter().map(Option::as_ref).collect())
        .collect();
    let a = CscMatrix::from_blocks(&a_grid, &heights, &widths)?;
    Ok((p, a))
}

/// Starting iterate for the solver, in the problem's own (unscaled) units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStart {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QpSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eps_prim_inf: f64,
    pub eps_dual_inf: f64,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub max_iter: usize,
    /// Iterations between step-size adaptations; 0 disables adaptation.
    pub adaptive_rho_interval: usize,
    pub scaling_iters: usize,
    pub polish: bool,
    #[serde(skip)]
    pub warm_start: Option<WarmStart>,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            eps_prim_inf: 1e-4,
            eps_dual_inf: 1e-4,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            max_iter: 20_000,
            adaptive_rho_interval: 25,
            scaling_iters: 10,
            polish: true,
            warm_start: None,
        }
    }
}

impl QpSettings {
    fn validate(&self) -> Result<(), QpError> {
        let bad = |s: &str| Err(QpError::InvalidSettings(s.to_string()));
        if !(self.eps_abs >= 0.0 && self.eps_rel >= 0.0) || self.eps_abs + self.eps_rel == 0.0 {
            return bad("tolerances must be nonnegative and not both zero");
        }
        if !(self.rho > 0.0 && self.sigma > 0.0) {
            return bad("rho and sigma must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return bad("alpha must lie in (0, 2)");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Solved,
    MaxIterations,
    PrimalInfeasible,
    DualInfeasible,
}

impl std::fmt::Display for QpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            QpStatus::Solved => "solved",
            QpStatus::MaxIterations => "max_iterations",
            QpStatus::PrimalInfeasible => "primal_infeasible",
            QpStatus::DualInfeasible => "dual_infeasible",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub status: QpStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Tolerances the residuals were held to at termination.
    pub primal_tolerance: f64,
    pub dual_tolerance: f64,
    pub iterations: usize,
    pub objective: f64,
    pub polished: bool,
    pub factorizations: usize,
}

impl QpSolution {
    pub fn is_solved(&self) -> bool {
        self.status == QpStatus::Solved
    }
}
