//! Up-looking sparse LDLᵀ factorization for quasi-definite systems.
//!
//! Quasi-definite matrices admit an LDLᵀ factorization for any symmetric
//! permutation, so no numerical pivoting is done: the ordering is fixed
//! once from the sparsity pattern and reused for every refactorization.

use super::csc::CscMatrix;

const NONE: usize = usize::MAX;

/// Fill-reducing ordering by ascending initial degree of the symmetric
/// pattern. Ties keep the natural order.
///
/// For the balancing programs this eliminates bound rows, then weights,
/// then the small dense block of balance constraints, which is the
/// low-fill order.
pub fn degree_ordering(upper: &CscMatrix) -> Vec<usize> {
    let n = upper.ncols();
    let mut degree = vec![0usize; n];
    for j in 0..n {
        for (i, _) in upper.col(j) {
            if i != j {
                degree[i] += 1;
                degree[j] += 1;
            }
        }
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.sort_by_key(|&k| (degree[k], k));
    perm
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut pinv = vec![0; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        pinv[p] = k;
    }
    pinv
}

/// Symbolic analysis of an upper-triangular pattern: elimination tree and
/// column counts of `L`.
#[derive(Debug, Clone)]
pub struct Symbolic {
    n: usize,
    parent: Vec<usize>,
    lp: Vec<usize>,
}

impl Symbolic {
    pub fn analyze(upper: &CscMatrix) -> Self {
        let n = upper.ncols();
        let mut parent = vec![NONE; n];
        let mut flag = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let (ap, ai) = (upper.colptr(), upper.rowval());
        for k in 0..n {
            flag[k] = k;
            for &row in &ai[ap[k]..ap[k + 1]] {
                let mut i = row;
                if i < k {
                    while flag[i] != k {
                        if parent[i] == NONE {
                            parent[i] = k;
                        }
                        lnz[i] += 1;
                        flag[i] = k;
                        i = parent[i];
                    }
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + lnz[k];
        }
        Self { n, parent, lp }
    }

    pub fn factor_nnz(&self) -> usize {
        self.lp[self.n]
    }
}

/// Numeric factor `A = L D Lᵀ` with unit lower-triangular `L`.
#[derive(Debug, Clone)]
pub struct LdlFactor {
    symbolic: Symbolic,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    // workspaces
    y: Vec<f64>,
    pattern: Vec<usize>,
    flag: Vec<usize>,
    lnz: Vec<usize>,
}

/// The factorization hit an exactly zero pivot at the given column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZeroPivot(pub usize);

impl LdlFactor {
    pub fn new(symbolic: Symbolic) -> Self {
        let n = symbolic.n;
        let nnz = symbolic.factor_nnz();
        Self {
            symbolic,
            li: vec![0; nnz],
            lx: vec![0.0; nnz],
            d: vec![0.0; n],
            y: vec![0.0; n],
            pattern: vec![0; n],
            flag: vec![NONE; n],
            lnz: vec![0; n],
        }
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.d
    }

    /// Numeric factorization of `upper`, which must share the pattern the
    /// symbolic analysis was computed from.
    pub fn factor(&mut self, upper: &CscMatrix) -> Result<(), ZeroPivot> {
        let n = self.symbolic.n;
        let (ap, ai, ax) = (upper.colptr(), upper.rowval(), upper.nzval());
        let lp = &self.symbolic.lp;
        let parent = &self.symbolic.parent;
        for k in 0..n {
            self.y[k] = 0.0;
            let mut top = n;
            self.flag[k] = k;
            self.lnz[k] = 0;
            for p in ap[k]..ap[k + 1] {
                let mut i = ai[p];
                if i > k {
                    continue;
                }
                self.y[i] += ax[p];
                let mut len = 0;
                while self.flag[i] != k {
                    self.pattern[len] = i;
                    len += 1;
                    self.flag[i] = k;
                    i = parent[i];
                }
                while len > 0 {
                    top -= 1;
                    len -= 1;
                    self.pattern[top] = self.pattern[len];
                }
            }
            self.d[k] = self.y[k];
            self.y[k] = 0.0;
            while top < n {
                let i = self.pattern[top];
                top += 1;
                let yi = self.y[i];
                self.y[i] = 0.0;
                let start = lp[i];
                let end = start + self.lnz[i];
                for p in start..end {
                    self.y[self.li[p]] -= self.lx[p] * yi;
                }
                let l_ki = yi / self.d[i];
                self.d[k] -= l_ki * yi;
                self.li[end] = k;
                self.lx[end] = l_ki;
                self.lnz[i] += 1;
            }
            if self.d[k] == 0.0 || !self.d[k].is_finite() {
                return Err(ZeroPivot(k));
            }
        }
        Ok(())
    }

    /// Solves `L D Lᵀ x = b` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.symbolic.n;
        let lp = &self.symbolic.lp;
        for j in 0..n {
            let xj = x[j];
            if xj != 0.0 {
                for p in lp[j]..lp[j + 1] {
                    x[self.li[p]] -= self.lx[p] * xj;
                }
            }
        }
        for j in 0..n {
            x[j] /= self.d[j];
        }
        for j in (0..n).rev() {
            let mut acc = x[j];
            for p in lp[j]..lp[j + 1] {
                acc -= self.lx[p] * x[self.li[p]];
            }
            x[j] = acc;
        }
    }
}

/// Symmetric permutation `C = P A Pᵀ` of a full or upper-stored square
/// matrix, returned as upper-triangular CSC.
pub fn permute_upper(a: &CscMatrix, pinv: &[usize]) -> CscMatrix {
    let mut trip = Vec::with_capacity(a.nnz());
    for j in 0..a.ncols() {
        for (i, v) in a.col(j) {
            if i <= j {
                let (pi, pj) = (pinv[i], pinv[j]);
                trip.push((pi.min(pj), pi.max(pj), v));
            }
        }
    }
    CscMatrix::from_triplets(a.nrows(), a.ncols(), &trip).expect("permutation preserves shape")
}

/// Counts the strictly positive entries of `D` when factoring the given
/// upper-stored symmetric matrix; `None` on a zero pivot.
pub fn positive_pivots(upper: &CscMatrix) -> Option<usize> {
    let perm = degree_ordering(upper);
    let pinv = inverse_permutation(&perm);
    let c = permute_upper(upper, &pinv);
    let mut f = LdlFactor::new(Symbolic::analyze(&c));
    f.factor(&c).ok()?;
    Some(f.diagonal().iter().filter(|&&d| d > 0.0).count())
}
