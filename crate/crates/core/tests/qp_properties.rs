mod common;

use common::{
    box_projected_gradient, dual_projected_gradient, random_box_qp, random_general_qp, DenseQp,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sitebal_core::qp::{solve_qp, QpSettings, QpStatus, WarmStart};

fn instance(seed: u64) -> (DenseQp, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=20);
    if rng.random_bool(0.5) {
        (random_box_qp(&mut rng, n), true)
    } else {
        let m = rng.random_range(1..=10);
        (random_general_qp(&mut rng, n, m), false)
    }
}

fn oracle(qp: &DenseQp, boxed: bool) -> f64 {
    if boxed {
        box_projected_gradient(qp, 30_000)
    } else {
        dual_projected_gradient(qp, 30_000)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn objective_matches_oracle(seed in any::<u64>()) {
        let (qp, boxed) = instance(seed);
        let sol = solve_qp(&qp.to_program(), &QpSettings::default()).unwrap();
        prop_assert_eq!(sol.status, QpStatus::Solved);
        let reference = oracle(&qp, boxed);
        prop_assert!((sol.objective - reference).abs() <= 1e-5, "admm {} oracle {}", sol.objective, reference);
    }

    #[test]
    fn solved_iterates_are_feasible(seed in any::<u64>()) {
        let (qp, _) = instance(seed);
        let settings = QpSettings::default();
        let sol = solve_qp(&qp.to_program(), &settings).unwrap();
        prop_assert!(sol.is_solved());
        let x = nalgebra::DVector::from_vec(sol.x.clone());
        let ax = &qp.a * x;
        for i in 0..qp.l.len() {
            prop_assert!(ax[i] >= qp.l[i] - settings.eps_abs && ax[i] <= qp.u[i] + settings.eps_abs,
                "row {}: {} not in [{}, {}]", i, ax[i], qp.l[i], qp.u[i]);
        }
    }

    #[test]
    fn warm_start_from_solution_converges_quickly(seed in any::<u64>()) {
        let (qp, _) = instance(seed);
        let prog = qp.to_program();
        let first = solve_qp(&prog, &QpSettings::default()).unwrap();
        let settings = QpSettings {
            warm_start: Some(WarmStart { x: first.x.clone(), y: first.y.clone() }),
            ..QpSettings::default()
        };
        let second = solve_qp(&prog, &settings).unwrap();
        prop_assert!(second.is_solved());
        prop_assert!(second.iterations <= 5, "took {} iterations", second.iterations);
    }

    #[test]
    fn argmin_is_invariant_to_objective_scaling(seed in any::<u64>(), log_c in -2.0..2.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=20);
        let m = rng.random_range(1..=10);
        // positive definite P: unique argmin
        let qp = random_general_qp(&mut rng, n, m);
        let c = 10f64.powf(log_c);
        let scaled = DenseQp { p: &qp.p * c, q: &qp.q * c, ..qp.clone() };
        let a = solve_qp(&qp.to_program(), &QpSettings::default()).unwrap();
        let b = solve_qp(&scaled.to_program(), &QpSettings::default()).unwrap();
        prop_assert!(a.is_solved() && b.is_solved());
        for (u, v) in a.x.iter().zip(&b.x) {
            prop_assert!((u - v).abs() <= 1e-6, "{:?} vs {:?}", a.x, b.x);
        }
    }
}
