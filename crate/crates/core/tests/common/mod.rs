//! Independent reference implementations used by the integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use sitebal_core::model::{PotentialOutcomeOracle, SiteDataset, UnitRecord};
use sitebal_core::qp::QuadraticProgram;

/// A random QP instance in dense form.
#[derive(Debug, Clone)]
pub struct DenseQp {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub l: Vec<f64>,
    pub u: Vec<f64>,
}

impl DenseQp {
    pub fn to_program(&self) -> QuadraticProgram {
        let rows = |m: &DMatrix<f64>| {
            (0..m.nrows())
                .map(|i| m.row(i).iter().copied().collect())
                .collect::<Vec<Vec<f64>>>()
        };
        QuadraticProgram::from_dense(
            &rows(&self.p),
            self.q.as_slice(),
            &rows(&self.a),
            &self.l,
            &self.u,
        )
        .unwrap()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }
}

/// `P = MᵀM/r` with `M` of size `rank×n`: PSD, singular when `rank < n`.
pub fn random_psd(rng: &mut impl Rng, n: usize, rank: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(rank, n, |_, _| rng.random_range(-1.0..1.0));
    let p = m.transpose() * &m / rank as f64;
    // exact symmetry
    (&p + p.transpose()) * 0.5
}

/// Box-constrained instance `lo ≤ x ≤ hi` with a possibly singular `P`.
pub fn random_box_qp(rng: &mut impl Rng, n: usize) -> DenseQp {
    let rank = rng.random_range(1..=n);
    let p = random_psd(rng, n, rank);
    let q = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
    let lo: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..0.0)).collect();
    let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.1..3.0)).collect();
    DenseQp {
        p,
        q,
        a: DMatrix::identity(n, n),
        l: lo,
        u: hi,
    }
}

/// General instance with positive definite `P` and `m` rows of mixed
/// type (equality, one-sided, two-sided), feasible by construction.
pub fn random_general_qp(rng: &mut impl Rng, n: usize, m: usize) -> DenseQp {
    let p = random_psd(rng, n, n) + DMatrix::identity(n, n) * rng.random_range(0.05..1.0);
    let q = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
    let a = DMatrix::from_fn(m, n, |_, _| {
        if rng.random_bool(0.7) {
            rng.random_range(-1.0..1.0)
        } else {
            0.0
        }
    });
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let ax0 = &a * &x0;
    let mut l = Vec::with_capacity(m);
    let mut u = Vec::with_capacity(m);
    for i in 0..m {
        let v = ax0[i];
        match rng.random_range(0..4) {
            0 => {
                l.push(v);
                u.push(v);
            }
            1 => {
                l.push(v - rng.random_range(0.0..0.5));
                u.push(f64::INFINITY);
            }
            2 => {
                l.push(f64::NEG_INFINITY);
                u.push(v + rng.random_range(0.0..0.5));
            }
            _ => {
                l.push(v - rng.random_range(0.0..0.5));
                u.push(v + rng.random_range(0.0..0.5));
            }
        }
    }
    DenseQp { p, q, a, l, u }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().max()
}

/// Accelerated projected gradient on the primal of a box-constrained
/// problem. Returns the optimal objective.
pub fn box_projected_gradient(qp: &DenseQp, iters: usize) -> f64 {
    let n = qp.q.len();
    let lip = spectral_norm(&qp.p).max(1e-12);
    let project = |v: &DVector<f64>| DVector::from_fn(n, |i, _| v[i].clamp(qp.l[i], qp.u[i]));
    let mut x = project(&DVector::zeros(n));
    let mut yk = x.clone();
    let mut t = 1.0f64;
    let mut best = qp.objective(&x);
    for _ in 0..iters {
        let grad = &qp.p * &yk + &qp.q;
        let xn = project(&(&yk - grad / lip));
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        yk = &xn + (&xn - &x) * ((t - 1.0) / tn);
        x = xn;
        t = tn;
        best = best.min(qp.objective(&x));
    }
    best
}

/// Accelerated projected gradient on the dual of a problem with positive
/// definite `P`. By strong duality the returned dual value is the optimal
/// objective.
pub fn dual_projected_gradient(qp: &DenseQp, iters: usize) -> f64 {
    let m = qp.l.len();
    let pinv = qp.p.clone().try_inverse().expect("positive definite");
    // multipliers for Ax ≥ l (first m) and Ax ≤ u (last m), fixed at 0 on infinite bounds
    let stacked = {
        let mut s = DMatrix::zeros(2 * m, qp.q.len());
        for i in 0..m {
            s.set_row(i, &(-qp.a.row(i)));
            s.set_row(m + i, &qp.a.row(i));
        }
        s
    };
    let lip = spectral_norm(&(&stacked * &pinv * stacked.transpose())).max(1e-12);
    let active = |k: usize| {
        if k < m {
            qp.l[k].is_finite()
        } else {
            qp.u[k - m].is_finite()
        }
    };
    let bound = |k: usize| if k < m { qp.l[k] } else { -qp.u[k - m] };
    let value = |lam: &DVector<f64>| {
        let w = &qp.q + stacked.transpose() * lam;
        let lin: f64 = (0..2 * m)
            .filter(|&k| active(k))
            .map(|k| lam[k] * bound(k))
            .sum();
        -0.5 * w.dot(&(&pinv * &w)) + lin
    };
    let grad = |lam: &DVector<f64>| {
        let w = &qp.q + stacked.transpose() * lam;
        let x = -(&pinv * &w);
        let sx = &stacked * x;
        DVector::from_fn(2 * m, |k, _| if active(k) { bound(k) + sx[k] } else { 0.0 })
    };
    let project = |v: DVector<f64>| {
        DVector::from_fn(2 * m, |k, _| if active(k) { v[k].max(0.0) } else { 0.0 })
    };
    let mut lam = DVector::zeros(2 * m);
    let mut yk = lam.clone();
    let mut t = 1.0f64;
    let mut best = value(&lam);
    for _ in 0..iters {
        let ln = project(&yk + grad(&yk) / lip);
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        yk = &ln + (&ln - &lam) * ((t - 1.0) / tn);
        lam = ln;
        t = tn;
        best = best.max(value(&lam));
    }
    best
}

pub fn unit_vector(rng: &mut impl Rng, d: usize, norm: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let v: Vec<f64> = (0..d).map(|_| normal.sample(rng)).collect();
    let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| norm * x / s).collect()
}

/// A site with linear potential outcomes and a shifted Gaussian target.
pub struct Instance {
    pub site: SiteDataset,
    pub target: Vec<Vec<f64>>,
    pub oracle: PotentialOutcomeOracle,
    pub noise: Vec<f64>,
}

pub fn random_instance(rng: &mut impl Rng, n: usize, d: usize, shift: f64) -> Instance {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let (s0, s1) = (rng.random_range(0.1..2.0), rng.random_range(0.1..2.0));
    let b0 = unit_vector(rng, d, s0);
    let b1 = unit_vector(rng, d, s1);
    let oracle = PotentialOutcomeOracle::linear(
        rng.random_range(-1.0..1.0),
        b0,
        rng.random_range(-1.0..1.0),
        b1,
    );
    let n1 = rng.random_range(2..n - 1);
    let mut noise = Vec::with_capacity(n);
    let units = (0..n)
        .map(|row| {
            let x: Vec<f64> = (0..d).map(|_| normal.sample(rng)).collect();
            let treated = row < n1;
            let e = 0.5 * normal.sample(rng);
            noise.push(e);
            let y = oracle.m0(&x) + if treated { oracle.tau(&x) } else { 0.0 } + e;
            UnitRecord {
                covariates: x,
                treated,
                outcome: y,
                site_id: "s".into(),
                row,
            }
        })
        .collect();
    let site = SiteDataset::new("s".into(), units, None).unwrap();
    let target = (0..60)
        .map(|_| (0..d).map(|_| shift + normal.sample(rng)).collect())
        .collect();
    Instance {
        site,
        target,
        oracle,
        noise,
    }
}

/// Random nonnegative weights meeting both sum constraints.
pub fn random_gamma(rng: &mut impl Rng, site: &SiteDataset) -> Vec<f64> {
    let mut g: Vec<f64> = (0..site.n()).map(|_| rng.random_range(0.0..2.0)).collect();
    for treated in [true, false] {
        let idx: Vec<usize> = (0..site.n())
            .filter(|&i| site.units()[i].treated == treated)
            .collect();
        let s: f64 = idx.iter().map(|&i| g[i]).sum();
        idx.iter().for_each(|&i| g[i] *= idx.len() as f64 / s);
    }
    g
}
