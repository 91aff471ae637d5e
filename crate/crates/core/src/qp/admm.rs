use super::csc::CscMatrix;
use super::ldl::{
    degree_ordering, inverse_permutation, permute_upper, positive_pivots, LdlFactor, Symbolic,
};
use super::{QpError, QpSettings, QpSolution, QpStatus, QuadraticProgram};

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_SCALE: f64 = 1e3;
const RHO_ADAPT_TOL: f64 = 5.0;
const MIN_SCALING: f64 = 1e-4;
const MAX_SCALING: f64 = 1e4;
const DIV_TOL: f64 = 1e-20;
const POLISH_DELTA: f64 = 1e-6;
const POLISH_REFINE: usize = 3;
const POLISH_PASSES: usize = 4;

/// Solves a convex QP. Returns `Err` only for malformed or non-convex
/// input; infeasibility and iteration limits are reported via the status.
pub fn solve_qp(prob: &QuadraticProgram, settings: &QpSettings) -> Result<QpSolution, QpError> {
    settings.validate()?;
    if prob.num_vars() == 0 {
        return Err(QpError::EmptyProgram);
    }
    check_convexity(&prob.p)?;
    let mut solver = Admm::setup(prob, settings)?;
    solver.run(prob)
}

/// Rejects `P` with an eigenvalue below `-1e-8·|trace(P)|` by factoring
/// `P + δI` and counting positive pivots.
fn check_convexity(p: &CscMatrix) -> Result<(), QpError> {
    let n = p.ncols();
    let delta = 1e-8 * p.trace().abs() + 1e-14;
    let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(p.nnz() / 2 + n);
    for j in 0..n {
        for (i, v) in p.col(j) {
            if i <= j {
                trip.push((i, j, v));
            }
        }
        trip.push((j, j, delta));
    }
    let shifted = CscMatrix::from_triplets(n, n, &trip)?;
    match positive_pivots(&shifted) {
        Some(k) if k == n => Ok(()),
        _ => Err(QpError::NonConvex),
    }
}

#[derive(Debug, Clone)]
struct Scaling {
    d: Vec<f64>,
    dinv: Vec<f64>,
    e: Vec<f64>,
    einv: Vec<f64>,
    c: f64,
    cinv: f64,
}

fn limit_scaling(v: f64) -> f64 {
    if v < MIN_SCALING {
        1.0
    } else {
        v.min(MAX_SCALING)
    }
}

/// Ruiz equilibration of the KKT matrix followed by cost scaling.
fn equilibrate(p: &mut CscMatrix, q: &mut [f64], a: &mut CscMatrix, iters: usize) -> Scaling {
    let (n, m) = (q.len(), a.nrows());
    let mut d = vec![1.0; n];
    let mut e = vec![1.0; m];
    let mut c = 1.0;
    for _ in 0..iters {
        let pn = p.col_inf_norms();
        let an = a.col_inf_norms();
        let dx: Vec<f64> = (0..n)
            .map(|j| 1.0 / limit_scaling(pn[j].max(an[j])).sqrt())
            .collect();
        let dc: Vec<f64> = a
            .row_inf_norms()
            .into_iter()
            .map(|r| 1.0 / limit_scaling(r).sqrt())
            .collect();
        p.scale(&dx, &dx);
        a.scale(&dc, &dx);
        for j in 0..n {
            q[j] *= dx[j];
            d[j] *= dx[j];
        }
        for i in 0..m {
            e[i] *= dc[i];
        }
        let pn = p.col_inf_norms();
        let mean_p = if n > 0 {
            pn.iter().sum::<f64>() / n as f64
        } else {
            0.0
        };
        let q_norm = q.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let ct = 1.0 / limit_scaling(mean_p.max(q_norm));
        p.scale_all(ct);
        q.iter_mut().for_each(|v| *v *= ct);
        c *= ct;
    }
    Scaling {
        dinv: d.iter().map(|v| 1.0 / v).collect(),
        einv: e.iter().map(|v| 1.0 / v).collect(),
        d,
        e,
        c,
        cinv: 1.0 / c,
    }
}

/// The permuted quasi-definite system `[[P + σI, Aᵀ], [A, -diag(1/ρ)]]`.
struct Kkt {
    perm: Vec<usize>,
    mat: CscMatrix,
    ydiag_pos: Vec<usize>,
    factor: LdlFactor,
    work: Vec<f64>,
}

impl Kkt {
    fn new(p: &CscMatrix, a: &CscMatrix, sigma: f64, rho: &[f64]) -> Result<Self, QpError> {
        let (n, m) = (p.ncols(), a.nrows());
        let mut trip = Vec::with_capacity(p.nnz() / 2 + n + a.nnz() + m);
        for j in 0..n {
            for (i, v) in p.col(j) {
                if i <= j {
                    trip.push((i, j, v));
                }
            }
            trip.push((j, j, sigma));
            for (i, v) in a.col(j) {
                trip.push((j, n + i, v));
            }
        }
        for (i, r) in rho.iter().enumerate() {
            trip.push((n + i, n + i, -1.0 / r));
        }
        let upper = CscMatrix::from_triplets(n + m, n + m, &trip)?;
        let perm = degree_ordering(&upper);
        let pinv = inverse_permutation(&perm);
        let mat = permute_upper(&upper, &pinv);
        let ydiag_pos = (0..m).map(|i| mat.colptr()[pinv[n + i] + 1] - 1).collect();
        let mut factor = LdlFactor::new(Symbolic::analyze(&mat));
        factor
            .factor(&mat)
            .map_err(|z| QpError::Factorization(z.0))?;
        Ok(Self {
            perm,
            mat,
            ydiag_pos,
            factor,
            work: vec![0.0; n + m],
        })
    }

    fn update_rho(&mut self, rho: &[f64]) -> Result<(), QpError> {
        for (pos, r) in self.ydiag_pos.iter().zip(rho) {
            self.mat.nzval_mut()[*pos] = -1.0 / r;
        }
        self.factor
            .factor(&self.mat)
            .map_err(|z| QpError::Factorization(z.0))
    }

    fn solve(&mut self, rhs: &mut [f64]) {
        for (k, &p) in self.perm.iter().enumerate() {
            self.work[k] = rhs[p];
        }
        self.factor.solve_in_place(&mut self.work);
        for (k, &p) in self.perm.iter().enumerate() {
            rhs[p] = self.work[k];
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Residuals {
    prim: f64,
    dual: f64,
    eps_prim: f64,
    eps_dual: f64,
    // normalisers used by the step-size heuristic
    prim_scale: f64,
    dual_scale: f64,
}

impl Residuals {
    fn converged(&self) -> bool {
        self.prim <= self.eps_prim && self.dual <= self.eps_dual
    }

    fn merit(&self) -> f64 {
        (self.prim / self.eps_prim).max(self.dual / self.eps_dual)
    }
}

struct Admm<'s> {
    settings: &'s QpSettings,
    n: usize,
    m: usize,
    p: CscMatrix,
    q: Vec<f64>,
    a: CscMatrix,
    l: Vec<f64>,
    u: Vec<f64>,
    scaling: Scaling,
    rho: f64,
    rho_vec: Vec<f64>,
    kkt: Kkt,
    factorizations: usize,
    x: Vec<f64>,
    z: Vec<f64>,
    y: Vec<f64>,
    x_prev: Vec<f64>,
    y_prev: Vec<f64>,
    rhs: Vec<f64>,
    ax: Vec<f64>,
    px: Vec<f64>,
    aty: Vec<f64>,
}

impl<'s> Admm<'s> {
    fn setup(prob: &QuadraticProgram, settings: &'s QpSettings) -> Result<Self, QpError> {
        let (n, m) = (prob.num_vars(), prob.num_constraints());
        let mut p = prob.p.clone();
        let mut q = prob.q.clone();
        let mut a = prob.a.clone();
        let scaling = equilibrate(&mut p, &mut q, &mut a, settings.scaling_iters);
        let l: Vec<f64> = prob.l.iter().zip(&scaling.e).map(|(v, e)| v * e).collect();
        let u: Vec<f64> = prob.u.iter().zip(&scaling.e).map(|(v, e)| v * e).collect();
        let rho = settings.rho.clamp(RHO_MIN, RHO_MAX);
        let rho_vec = rho_vector(rho, &l, &u);
        let kkt = Kkt::new(&p, &a, settings.sigma, &rho_vec)?;

        let (mut x, mut y) = (vec![0.0; n], vec![0.0; m]);
        let mut z = vec![0.0; m];
        if let Some(ws) = &settings.warm_start {
            if ws.x.len() != n || ws.y.len() != m {
                return Err(QpError::DimensionMismatch("warm start length".into()));
            }
            for j in 0..n {
                x[j] = ws.x[j] * scaling.dinv[j];
            }
            for i in 0..m {
                y[i] = ws.y[i] * scaling.einv[i] * scaling.c;
            }
            a.mul_vec(&x, &mut z);
        }
        Ok(Self {
            settings,
            n,
            m,
            p,
            q,
            a,
            l,
            u,
            scaling,
            rho,
            rho_vec,
            kkt,
            factorizations: 1,
            x_prev: x.clone(),
            y_prev: y.clone(),
            x,
            z,
            y,
            rhs: vec![0.0; n + m],
            ax: vec![0.0; m],
            px: vec![0.0; n],
            aty: vec![0.0; n],
        })
    }

    fn step(&mut self) {
        let (n, alpha, sigma) = (self.n, self.settings.alpha, self.settings.sigma);
        for j in 0..n {
            self.rhs[j] = sigma * self.x[j] - self.q[j];
        }
        for i in 0..self.m {
            self.rhs[n + i] = self.z[i] - self.y[i] / self.rho_vec[i];
        }
        self.kkt.solve(&mut self.rhs);
        for j in 0..n {
            self.x[j] = alpha * self.rhs[j] + (1.0 - alpha) * self.x[j];
        }
        for i in 0..self.m {
            let r = self.rho_vec[i];
            let zt = self.z[i] + (self.rhs[n + i] - self.y[i]) / r;
            let zr = alpha * zt + (1.0 - alpha) * self.z[i];
            let z_new = (zr + self.y[i] / r).clamp(self.l[i], self.u[i]);
            self.y[i] += r * (zr - z_new);
            self.z[i] = z_new;
        }
    }

    fn residuals(&mut self, x: &[f64], z: &[f64], y: &[f64]) -> Residuals {
        let s = &self.scaling;
        self.a.mul_vec(x, &mut self.ax);
        let (mut prim, mut ax_norm, mut z_norm) = (0.0_f64, 0.0_f64, 0.0_f64);
        for i in 0..self.m {
            let axu = self.ax[i] * s.einv[i];
            let zu = z[i] * s.einv[i];
            prim = prim.max((axu - zu).abs());
            ax_norm = ax_norm.max(axu.abs());
            z_norm = z_norm.max(zu.abs());
        }
        self.p.mul_vec(x, &mut self.px);
        self.a.tmul_vec(y, &mut self.aty);
        let (mut dual, mut px_norm, mut aty_norm, mut q_norm) =
            (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
        for j in 0..self.n {
            let f = s.dinv[j] * s.cinv;
            dual = dual.max((f * (self.px[j] + self.q[j] + self.aty[j])).abs());
            px_norm = px_norm.max((f * self.px[j]).abs());
            aty_norm = aty_norm.max((f * self.aty[j]).abs());
            q_norm = q_norm.max((f * self.q[j]).abs());
        }
        let prim_scale = ax_norm.max(z_norm);
        let dual_scale = px_norm.max(aty_norm).max(q_norm);
        Residuals {
            prim,
            dual,
            eps_prim: self.settings.eps_abs + self.settings.eps_rel * prim_scale,
            eps_dual: self.settings.eps_abs + self.settings.eps_rel * dual_scale,
            prim_scale,
            dual_scale,
        }
    }

    fn primal_infeasible(&mut self) -> bool {
        let s = &self.scaling;
        let mut dy: Vec<f64> = (0..self.m).map(|i| self.y[i] - self.y_prev[i]).collect();
        for i in 0..self.m {
            if (self.u[i] == f64::INFINITY && dy[i] > 0.0)
                || (self.l[i] == f64::NEG_INFINITY && dy[i] < 0.0)
            {
                dy[i] = 0.0;
            }
        }
        let norm = (0..self.m).fold(0.0_f64, |acc, i| acc.max((s.e[i] * dy[i]).abs()));
        if norm <= DIV_TOL {
            return false;
        }
        let eps = self.settings.eps_prim_inf * norm;
        let mut support = 0.0;
        for i in 0..self.m {
            if dy[i] > 0.0 {
                support += self.u[i] * dy[i];
            } else if dy[i] < 0.0 {
                support += self.l[i] * dy[i];
            }
        }
        if !(support < -eps) {
            return false;
        }
        let mut atdy = vec![0.0; self.n];
        self.a.tmul_vec(&dy, &mut atdy);
        (0..self.n).all(|j| (s.dinv[j] * atdy[j]).abs() < eps)
    }

    fn dual_infeasible(&mut self) -> bool {
        let s = &self.scaling;
        let dx: Vec<f64> = (0..self.n).map(|j| self.x[j] - self.x_prev[j]).collect();
        let norm = (0..self.n).fold(0.0_f64, |acc, j| acc.max((s.d[j] * dx[j]).abs()));
        if norm <= DIV_TOL {
            return false;
        }
        let eps = self.settings.eps_dual_inf * norm;
        let qdx: f64 = self.q.iter().zip(&dx).map(|(a, b)| a * b).sum();
        if !(qdx < -s.c * eps) {
            return false;
        }
        let mut pdx = vec![0.0; self.n];
        self.p.mul_vec(&dx, &mut pdx);
        if !(0..self.n).all(|j| (s.dinv[j] * pdx[j]).abs() < s.c * eps) {
            return false;
        }
        let mut adx = vec![0.0; self.m];
        self.a.mul_vec(&dx, &mut adx);
        (0..self.m).all(|i| {
            let v = s.einv[i] * adx[i];
            let upper_ok = self.u[i] == f64::INFINITY || v <= eps;
            let lower_ok = self.l[i] == f64::NEG_INFINITY || v >= -eps;
            upper_ok && lower_ok
        })
    }

    fn adapt_rho(&mut self, r: &Residuals) -> Result<(), QpError> {
        let prim = r.prim / (r.prim_scale + 1e-30);
        let dual = r.dual / (r.dual_scale + 1e-30);
        let new_rho = (self.rho * (prim / (dual + 1e-30)).sqrt()).clamp(RHO_MIN, RHO_MAX);
        if new_rho > self.rho * RHO_ADAPT_TOL || new_rho < self.rho / RHO_ADAPT_TOL {
            self.rho = new_rho;
            self.rho_vec = rho_vector(new_rho, &self.l, &self.u);
            self.kkt.update_rho(&self.rho_vec)?;
            self.factorizations += 1;
        }
        Ok(())
    }

    fn run(&mut self, prob: &QuadraticProgram) -> Result<QpSolution, QpError> {
        let mut status = QpStatus::MaxIterations;
        let mut best: Option<(f64, Vec<f64>, Vec<f64>, Vec<f64>, Residuals)> = None;
        let mut last = None;
        let mut iterations = 0;
        for iter in 1..=self.settings.max_iter {
            iterations = iter;
            self.x_prev.copy_from_slice(&self.x);
            self.y_prev.copy_from_slice(&self.y);
            self.step();
            let (x, z, y) = (self.x.clone(), self.z.clone(), self.y.clone());
            let res = self.residuals(&x, &z, &y);
            last = Some(res);
            if res.converged() {
                status = QpStatus::Solved;
                break;
            }
            if best.as_ref().is_none_or(|b| res.merit() < b.0) {
                best = Some((res.merit(), x, z, y, res));
            }
            if self.primal_infeasible() {
                status = QpStatus::PrimalInfeasible;
                break;
            }
            if self.dual_infeasible() {
                status = QpStatus::DualInfeasible;
                break;
            }
            let interval = self.settings.adaptive_rho_interval;
            if interval > 0 && iter % interval == 0 {
                self.adapt_rho(&res)?;
            }
        }
        let mut res = last.expect("at least one iteration runs");
        if status == QpStatus::MaxIterations {
            if let Some((_, x, z, y, r)) = best {
                self.x = x;
                self.z = z;
                self.y = y;
                res = r;
            }
        }
        let mut polished = false;
        if status == QpStatus::Solved && self.settings.polish {
            if let Some((x, z, y, r)) = self.polish(&res) {
                self.x = x;
                self.z = z;
                self.y = y;
                res = r;
                polished = true;
            }
        }
        let s = &self.scaling;
        let x: Vec<f64> = (0..self.n).map(|j| self.x[j] * s.d[j]).collect();
        let y: Vec<f64> = (0..self.m).map(|i| self.y[i] * s.e[i] * s.cinv).collect();
        let objective = match status {
            QpStatus::PrimalInfeasible => f64::INFINITY,
            QpStatus::DualInfeasible => f64::NEG_INFINITY,
            _ => prob.objective(&x),
        };
        Ok(QpSolution {
            x,
            y,
            status,
            primal_residual: res.prim,
            dual_residual: res.dual,
            primal_tolerance: res.eps_prim,
            dual_tolerance: res.eps_dual,
            iterations,
            objective,
            polished,
            factorizations: self.factorizations,
        })
    }

    /// Solves the equality-constrained problem on the active set guessed
    /// from the converged iterate. Returns the polished iterate when it
    /// does not degrade either residual.
    fn polish(&mut self, admm: &Residuals) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>, Residuals)> {
        let (n, m) = (self.n, self.m);
        // (row, bound value, sign requirement on y: -1 lower, +1 upper, 0 equality)
        let mut active: Vec<(usize, f64, i8)> = Vec::new();
        for i in 0..m {
            if self.l[i] == self.u[i] {
                active.push((i, self.l[i], 0));
            } else if self.z[i] - self.l[i] < -self.y[i] {
                active.push((i, self.l[i], -1));
            } else if self.u[i] - self.z[i] < self.y[i] {
                active.push((i, self.u[i], 1));
            }
        }
        let mut pass = 0;
        let sol = loop {
            pass += 1;
            let mr = active.len();
            let mut row_map = vec![usize::MAX; m];
            for (r, &(i, _, _)) in active.iter().enumerate() {
                row_map[i] = r;
            }
            let mut trip = Vec::new();
            let mut ared_trip = Vec::new();
            for j in 0..n {
                for (i, v) in self.p.col(j) {
                    if i <= j {
                        trip.push((i, j, v));
                    }
                }
                trip.push((j, j, POLISH_DELTA));
                for (i, v) in self.a.col(j) {
                    let r = row_map[i];
                    if r != usize::MAX {
                        trip.push((j, n + r, v));
                        ared_trip.push((r, j, v));
                    }
                }
            }
            for r in 0..mr {
                trip.push((n + r, n + r, -POLISH_DELTA));
            }
            let upper = CscMatrix::from_triplets(n + mr, n + mr, &trip).ok()?;
            let ared = CscMatrix::from_triplets(mr, n, &ared_trip).ok()?;
            let perm = degree_ordering(&upper);
            let pinv = inverse_permutation(&perm);
            let kmat = permute_upper(&upper, &pinv);
            let mut factor = LdlFactor::new(Symbolic::analyze(&kmat));
            factor.factor(&kmat).ok()?;
            let solve = |v: &[f64]| -> Vec<f64> {
                let mut w: Vec<f64> = perm.iter().map(|&p| v[p]).collect();
                factor.solve_in_place(&mut w);
                let mut out = vec![0.0; v.len()];
                for (k, &p) in perm.iter().enumerate() {
                    out[p] = w[k];
                }
                out
            };
            let mut rhs = vec![0.0; n + mr];
            for j in 0..n {
                rhs[j] = -self.q[j];
            }
            for (r, &(_, b, _)) in active.iter().enumerate() {
                rhs[n + r] = b;
            }
            let mut sol = solve(&rhs);
            let mut px = vec![0.0; n];
            let mut aty = vec![0.0; n];
            let mut ax = vec![0.0; mr];
            for _ in 0..POLISH_REFINE {
                // residual against the unregularized KKT matrix
                self.p.mul_vec(&sol[..n], &mut px);
                ared.tmul_vec(&sol[n..], &mut aty);
                ared.mul_vec(&sol[..n], &mut ax);
                let mut resid = vec![0.0; n + mr];
                for j in 0..n {
                    resid[j] = rhs[j] - px[j] - aty[j];
                }
                for r in 0..mr {
                    resid[n + r] = rhs[n + r] - ax[r];
                }
                let d = solve(&resid);
                sol.iter_mut().zip(&d).for_each(|(s, d)| *s += d);
            }
            if sol.iter().any(|v| !v.is_finite()) {
                return None;
            }
            // rows that the guessed active set left out but the solution violates
            let mut ax_full = vec![0.0; m];
            self.a.mul_vec(&sol[..n], &mut ax_full);
            let before = active.len();
            for i in 0..m {
                if row_map[i] != usize::MAX {
                    continue;
                }
                if ax_full[i] < self.l[i] - 1e-12 * (1.0 + self.l[i].abs()) {
                    active.push((i, self.l[i], -1));
                } else if ax_full[i] > self.u[i] + 1e-12 * (1.0 + self.u[i].abs()) {
                    active.push((i, self.u[i], 1));
                }
            }
            if active.len() == before || pass == POLISH_PASSES {
                active.truncate(before);
                break sol;
            }
        };
        let x = sol[..n].to_vec();
        let mut y = vec![0.0; m];
        let y_scale = sol[n..].iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        for (r, &(i, _, sign)) in active.iter().enumerate() {
            let v = sol[n + r];
            if (sign < 0 && v > 1e-9 * (1.0 + y_scale)) || (sign > 0 && v < -1e-9 * (1.0 + y_scale))
            {
                return None;
            }
            y[i] = v;
        }
        let mut z = vec![0.0; m];
        self.a.mul_vec(&x, &mut z);
        for i in 0..m {
            z[i] = z[i].clamp(self.l[i], self.u[i]);
        }
        let res = self.residuals(&x, &z, &y);
        let floor = 1e-9;
        let prim_ok = res.prim <= admm.prim.max(floor);
        let dual_ok = res.dual <= admm.dual.max(floor);
        (prim_ok && dual_ok).then_some((x, z, y, res))
    }
}

fn rho_vector(rho: f64, l: &[f64], u: &[f64]) -> Vec<f64> {
    l.iter()
        .zip(u)
        .map(|(&lo, &hi)| {
            if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
                RHO_MIN
            } else if lo == hi {
                RHO_EQ_SCALE * rho
            } else {
                rho
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::WarmStart;

    fn solve(p: &[Vec<f64>], q: &[f64], a: &[Vec<f64>], l: &[f64], u: &[f64]) -> QpSolution {
        let prob = QuadraticProgram::from_dense(p, q, a, l, u).unwrap();
        solve_qp(&prob, &QpSettings::default()).unwrap()
    }

    const INF: f64 = f64::INFINITY;

    #[test]
    fn symmetric_simplex_problem() {
        let sol = solve(
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &[0.0, 0.0],
            &[vec![1.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]],
            &[2.0, 0.0, 0.0],
            &[2.0, INF, INF],
        );
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.x[0] - 1.0).abs() < 1e-8 && (sol.x[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn hand_solved_kkt_point() {
        // 2x - q + ν1 = 0 with x1 + x2 = 2 gives (0.5, 1.5).
        let sol = solve(
            &[vec![2.0, 0.0], vec![0.0, 2.0]],
            &[-2.0, -4.0],
            &[vec![1.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]],
            &[2.0, 0.0, 0.0],
            &[2.0, INF, INF],
        );
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.x[0] - 0.5).abs() < 1e-8, "{:?}", sol.x);
        assert!((sol.x[1] - 1.5).abs() < 1e-8);
        // dense grid oracle over the feasible segment, step 1e-3
        let f = |x1: f64| {
            let x2 = 2.0 - x1;
            x1 * x1 + x2 * x2 - 2.0 * x1 - 4.0 * x2
        };
        let grid_best = (0..=2000)
            .map(|k| k as f64 * 1e-3)
            .fold(f64::INFINITY, |m, x| m.min(f(x)));
        assert!(sol.objective <= grid_best + 1e-8);
        assert!(sol.objective >= grid_best - 1e-6);
    }

    #[test]
    fn unbounded_linear_descent_is_dual_infeasible() {
        let sol = solve(
            &[vec![0.0, 0.0], vec![0.0, 0.0]],
            &[-1.0, 0.0],
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &[0.0, 0.0],
            &[INF, INF],
        );
        assert_eq!(sol.status, QpStatus::DualInfeasible);
    }

    #[test]
    fn contradictory_constraints_are_primal_infeasible() {
        let sol = solve(
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &[0.0, 0.0],
            &[vec![1.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]],
            &[-1.0, 0.0, 0.0],
            &[-1.0, INF, INF],
        );
        assert_eq!(sol.status, QpStatus::PrimalInfeasible);
    }

    #[test]
    fn indefinite_objective_is_rejected() {
        let prob = QuadraticProgram::from_dense(
            &[vec![1.0, 0.0], vec![0.0, -1.0]],
            &[0.0, 0.0],
            &[],
            &[],
            &[],
        )
        .unwrap();
        assert_eq!(
            solve_qp(&prob, &QpSettings::default()),
            Err(QpError::NonConvex)
        );
    }

    #[test]
    fn warm_start_from_solution_is_immediate() {
        let prob = QuadraticProgram::from_dense(
            &[vec![2.0, 0.5], vec![0.5, 1.0]],
            &[-1.0, 1.0],
            &[vec![1.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]],
            &[1.0, 0.0, 0.0],
            &[1.0, INF, INF],
        )
        .unwrap();
        let cold = solve_qp(&prob, &QpSettings::default()).unwrap();
        let settings = QpSettings {
            warm_start: Some(WarmStart {
                x: cold.x.clone(),
                y: cold.y.clone(),
            }),
            ..QpSettings::default()
        };
        let warm = solve_qp(&prob, &settings).unwrap();
        assert_eq!(warm.status, QpStatus::Solved);
        assert!(warm.iterations <= 5, "took {}", warm.iterations);
    }

    #[test]
    fn unconstrained_problem() {
        let sol = solve(&[vec![4.0]], &[-2.0], &[], &[], &[]);
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.x[0] - 0.5).abs() < 1e-6);
    }
}
