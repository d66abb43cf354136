#![allow(dead_code)]

use std::path::PathBuf;

use ensemble_pulse::dynamics::{ControlTrajectory, TimeGrid};
use ensemble_pulse::moments::ParamInterval;
use ensemble_pulse::qpcore::QProblem;
use ensemble_pulse::systems::{ControlBounds, EnsembleSystem};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

pub fn iv(lo: f64, hi: f64) -> ParamInterval {
    ParamInterval::new(lo, hi).unwrap()
}

/// Sum of a few random sinusoids per channel.
pub fn smooth_control<R: Rng>(rng: &mut R, horizon: f64, steps: usize, m: usize, amp: f64) -> ControlTrajectory {
    let grid = TimeGrid::uniform(horizon, steps).unwrap();
    let modes: Vec<Vec<(f64, f64, f64)>> = (0..m)
        .map(|_| {
            (0..3)
                .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(0.5..4.0), rng.gen_range(0.0..6.3)))
                .collect()
        })
        .collect();
    let t = grid.times().to_vec();
    let u = DMatrix::from_fn(steps, m, |k, i| {
        amp * modes[i].iter().map(|&(a, w, ph)| a * (w * t[k] / horizon + ph).sin()).sum::<f64>() / 3.0
    });
    ControlTrajectory::new(grid, u).unwrap()
}

/// Random ensemble with generic drift and control generators.
pub fn random_system<R: Rng>(rng: &mut R, n: usize, m: usize) -> EnsembleSystem {
    let mut rand_mat = |scale: f64| DMatrix::from_fn(n, n, |_, _| rng.gen_range(-scale..scale));
    let a = rand_mat(1.0);
    let b: Vec<_> = (0..m).map(|_| rand_mat(1.0)).collect();
    let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let xt = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let lo = rng.gen_range(-1.0..0.5);
    let blo = rng.gen_range(0.5..1.0);
    EnsembleSystem::from_matrices(a, b, iv(lo, lo + 1.0), iv(blo, blo + 0.4), x0, xt, ControlBounds::default())
        .unwrap()
}

/// Strictly convex QP with at most `max_rows` constraints, feasible by construction.
pub fn random_qp<R: Rng>(rng: &mut R, max_vars: usize, max_rows: usize) -> QProblem {
    let n = rng.gen_range(1..=max_vars);
    let l = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let quad = &l * l.transpose() + DMatrix::identity(n, n) * rng.gen_range(0.05..1.0);
    let lin = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
    let z0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let rows = rng.gen_range(0..=max_rows);
    let n_eq = if rows > 0 && n > 1 && rng.gen_bool(0.3) { 1 } else { 0 };
    let n_box = if rows > n_eq { rng.gen_range(0..=(rows - n_eq).min(n)) } else { 0 };
    let n_ineq = rows - n_eq - n_box;
    let mut p = QProblem::new(quad, lin);
    if n_ineq > 0 {
        let g = DMatrix::from_fn(n_ineq, n, |_, _| rng.gen_range(-1.0..1.0));
        let slack = DVector::from_fn(n_ineq, |_, _| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..1.0) });
        let h = &g * &z0 + slack;
        p = p.with_inequalities(g, h);
    }
    if n_eq > 0 {
        let e = DMatrix::from_fn(n_eq, n, |_, _| rng.gen_range(-1.0..1.0));
        let f = &e * &z0;
        p = p.with_equalities(e, f);
    }
    if n_box > 0 {
        let mut lower = DVector::from_element(n, f64::NEG_INFINITY);
        let mut upper = DVector::from_element(n, f64::INFINITY);
        for j in 0..n_box {
            if rng.gen_bool(0.5) {
                upper[j] = z0[j] + rng.gen_range(0.0..0.5);
            } else {
                lower[j] = z0[j] - rng.gen_range(0.0..0.5);
            }
        }
        p = p.with_bounds(lower, upper);
    }
    p
}

/// Exact minimizer by enumerating every active set of the inequality rows.
pub fn enumerate_active_sets(p: &QProblem) -> DVector<f64> {
    let n = p.dim();
    let mut rows: Vec<(DVector<f64>, f64, bool)> = Vec::new();
    for i in 0..p.eq.nrows() {
        rows.push((p.eq.row(i).transpose(), p.eq_rhs[i], true));
    }
    for i in 0..p.ineq.nrows() {
        rows.push((p.ineq.row(i).transpose(), p.ineq_rhs[i], false));
    }
    for j in 0..n {
        let mut e = DVector::zeros(n);
        if p.upper[j].is_finite() {
            e[j] = 1.0;
            rows.push((e.clone(), p.upper[j], false));
        }
        if p.lower[j].is_finite() {
            e[j] = -1.0;
            rows.push((e, -p.lower[j], false));
        }
    }
    let optional: Vec<usize> = (0..rows.len()).filter(|&i| !rows[i].2).collect();
    let forced: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].2).collect();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << optional.len()) {
        let active: Vec<usize> = forced
            .iter()
            .copied()
            .chain(optional.iter().enumerate().filter(|(b, _)| mask & (1 << b) != 0).map(|(_, &i)| i))
            .collect();
        let k = active.len();
        if k > n {
            continue;
        }
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.quad);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&p.lin));
        for (r, &i) in active.iter().enumerate() {
            kkt.view_mut((n + r, 0), (1, n)).copy_from(&rows[i].0.transpose());
            kkt.view_mut((0, n + r), (n, 1)).copy_from(&rows[i].0);
            rhs[n + r] = rows[i].1;
        }
        let svd = kkt.clone().svd(true, true);
        let smax = svd.singular_values.max();
        if svd.singular_values.min() < 1e-10 * smax {
            continue;
        }
        let Ok(sol) = svd.solve(&rhs, 1e-14) else { continue };
        let z = sol.rows(0, n).clone_owned();
        let feasible = rows.iter().all(|(a, b, eq)| {
            let v = a.dot(&z) - b;
            if *eq {
                v.abs() <= 1e-9
            } else {
                v <= 1e-9
            }
        });
        let dual_ok = active
            .iter()
            .enumerate()
            .all(|(r, &i)| rows[i].2 || sol[n + r] >= -1e-9);
        if feasible && dual_ok {
            let obj = p.objective(&z);
            if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                best = Some((obj, z));
            }
        }
    }
    best.expect("feasible QP has a KKT point").1
}
