mod common;

use common::{enumerate_active_sets, random_qp};
use ensemble_pulse::qpcore::{kkt_check, qp_solve, QProblem, QpStatus};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn feasible(p: &QProblem, z: &DVector<f64>) -> bool {
    let tol = 1e-12;
    (&p.ineq * z - &p.ineq_rhs).iter().all(|&v| v <= tol)
        && (&p.eq * z - &p.eq_rhs).iter().all(|v| v.abs() <= tol)
        && z.iter().zip(p.lower.iter()).all(|(a, b)| a >= b)
        && z.iter().zip(p.upper.iter()).all(|(a, b)| a <= b)
}

#[test]
fn matches_active_set_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..300 {
        let p = random_qp(&mut rng, 6, 4);
        let exact = enumerate_active_sets(&p);
        let sol = qp_solve(&p, 1e-10, 50_000).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal, "case {case}");
        let gap = (&sol.z - &exact).amax();
        assert!(gap <= 1e-7, "case {case}: gap {gap:e}");
        assert!(sol.kkt.max() <= 1e-8, "case {case}: {:?}", sol.kkt);
    }
}

#[test]
fn no_feasible_sample_beats_the_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..40 {
        let p = random_qp(&mut rng, 4, 4);
        let sol = qp_solve(&p, 1e-10, 50_000).unwrap();
        let best = p.objective(&sol.z);
        let mut hits = 0;
        for _ in 0..2000 {
            let z = DVector::from_fn(p.dim(), |i, _| sol.z[i] + rng.gen_range(-1.0..1.0));
            if p.eq.nrows() == 0 && feasible(&p, &z) {
                hits += 1;
                assert!(p.objective(&z) >= best - 1e-9);
            }
        }
        if p.eq.nrows() == 0 && p.ineq.nrows() == 0 && p.lower.iter().all(|v| v.is_infinite()) {
            assert!(hits > 0);
        }
    }
}

#[test]
fn invariant_under_objective_and_variable_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..30 {
        let p = random_qp(&mut rng, 5, 3);
        let base = qp_solve(&p, 1e-10, 50_000).unwrap();

        let c = rng.gen_range(0.01..100.0);
        let mut scaled = p.clone();
        scaled.quad *= c;
        scaled.lin *= c;
        let s = qp_solve(&scaled, 1e-10, 50_000).unwrap();
        assert!((&s.z - &base.z).amax() < 1e-7);

        // z = D y with a positive diagonal D
        let d = DVector::from_fn(p.dim(), |_, _| rng.gen_range(0.1..10.0));
        let dm = DMatrix::from_diagonal(&d);
        let mut q = QProblem::new(&dm * &p.quad * &dm, &dm * &p.lin);
        if p.ineq.nrows() > 0 {
            q = q.with_inequalities(&p.ineq * &dm, p.ineq_rhs.clone());
        }
        if p.eq.nrows() > 0 {
            q = q.with_equalities(&p.eq * &dm, p.eq_rhs.clone());
        }
        q = q.with_bounds(p.lower.component_div(&d), p.upper.component_div(&d));
        let y = qp_solve(&q, 1e-10, 50_000).unwrap();
        assert!((y.z.component_mul(&d) - &base.z).amax() < 1e-6);
    }
}

#[test]
fn contradictory_constraints_reported_infeasible() {
    let p = QProblem::new(DMatrix::identity(2, 2), DVector::zeros(2))
        .with_inequalities(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::from_vec(vec![-1.0]))
        .with_bounds(DVector::from_vec(vec![0.0, 0.0]), DVector::from_vec(vec![1.0, 1.0]));
    assert_eq!(qp_solve(&p, 1e-8, 20_000).unwrap().status, QpStatus::Infeasible);
}

#[test]
fn kkt_check_flags_suboptimal_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = random_qp(&mut rng, 4, 0);
    let exact = enumerate_active_sets(&p);
    assert!(kkt_check(&p, &exact).unwrap().max() < 1e-9);
    let off = &exact + DVector::from_element(p.dim(), 1e-3);
    assert!(kkt_check(&p, &off).unwrap().stationarity > 1e-5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unconstrained_solution_solves_normal_equations(seed in any::<u64>(), n in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let quad = &l * l.transpose() + DMatrix::identity(n, n);
        let lin = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
        let sol = qp_solve(&QProblem::new(quad.clone(), lin.clone()), 1e-10, 1000).unwrap();
        let resid = (&quad * &sol.z + &lin).amax();
        prop_assert!(resid < 1e-9);
    }

    #[test]
    fn box_only_solution_within_bounds(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_qp(&mut rng, 6, 4);
        let sol = qp_solve(&p, 1e-9, 50_000).unwrap();
        for j in 0..p.dim() {
            prop_assert!(sol.z[j] >= p.lower[j] - 1e-8 && sol.z[j] <= p.upper[j] + 1e-8);
        }
    }
}
