//! Validation of synthesized pulses on the original ensemble.
//!
//! Members are propagated with exact zero-order-hold steps of size `n`, so a
//! verification grid costs `K` small exponentials per point. Grid points run
//! in parallel; results always come back in row-major order (β fastest).

use std::str::FromStr;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{expm, simulate_with, ControlTrajectory, Propagation, StateTrajectory};
use crate::error::{Error, Result};
use crate::moments::{project_moments, reconstruct, GaussLegendre, MomentSystem, ParamInterval};
use crate::systems::EnsembleSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    #[default]
    Uniform,
    /// Chebyshev extreme points, endpoints included.
    Chebyshev,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub n_alpha_pts: usize,
    pub n_beta_pts: usize,
    pub spacing: Spacing,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_alpha_pts: 21,
            n_beta_pts: 21,
            spacing: Spacing::Uniform,
        }
    }
}

impl GridSpec {
    pub fn new(n_alpha_pts: usize, n_beta_pts: usize, spacing: Spacing) -> Result<Self> {
        let g = Self {
            n_alpha_pts,
            n_beta_pts,
            spacing,
        };
        g.validate()?;
        Ok(g)
    }

    /// A single-point axis evaluates the interval center.
    pub fn validate(&self) -> Result<()> {
        if self.n_alpha_pts == 0 || self.n_beta_pts == 0 {
            return Err(Error::InvalidGrid(format!(
                "grid must have at least one point per axis, got {}x{}",
                self.n_alpha_pts, self.n_beta_pts
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n_alpha_pts * self.n_beta_pts
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parses `NxM`.
impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidGrid(format!("expected NxM, got {s:?}"));
        let (a, b) = s.trim().split_once(['x', 'X']).ok_or_else(bad)?;
        let na = a.trim().parse().map_err(|_| bad())?;
        let nb = b.trim().parse().map_err(|_| bad())?;
        Self::new(na, nb, Spacing::Uniform)
    }
}

pub fn axis_points(iv: &ParamInterval, count: usize, spacing: Spacing) -> Vec<f64> {
    if count == 1 {
        return vec![iv.center()];
    }
    let (lo, hi) = (iv.lo(), iv.hi());
    let last = (count - 1) as f64;
    (0..count)
        .map(|j| {
            if j == 0 {
                return lo;
            }
            if j == count - 1 {
                return hi;
            }
            let s = match spacing {
                Spacing::Uniform => -1.0 + 2.0 * j as f64 / last,
                Spacing::Chebyshev => -(std::f64::consts::PI * j as f64 / last).cos(),
            };
            iv.center() + 0.5 * (hi - lo) * s
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub alpha: f64,
    pub beta: f64,
    pub terminal_error: f64,
}

#[derive(Debug, Clone)]
pub struct VerificationResult {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// Row-major, β fastest.
    pub points: Vec<GridPoint>,
    pub max_error: f64,
    pub mean_error: f64,
    pub trajectories: Option<Vec<StateTrajectory>>,
}

impl VerificationResult {
    pub fn at(&self, i: usize, j: usize) -> &GridPoint {
        &self.points[i * self.betas.len() + j]
    }
}

/// Exact zero-order-hold trajectory of the member `(alpha, beta)`.
pub fn simulate_member(sys: &EnsembleSystem, alpha: f64, beta: f64, ctrl: &ControlTrajectory) -> Result<StateTrajectory> {
    if ctrl.inputs() != sys.m() {
        return Err(Error::DimensionMismatch {
            context: "control channels",
            expected: sys.m(),
            found: ctrl.inputs(),
        });
    }
    if !alpha.is_finite() || !beta.is_finite() {
        return Err(Error::NonFinite("member parameters"));
    }
    let mut states = Vec::with_capacity(ctrl.steps() + 1);
    states.push(sys.x0.clone());
    for (k, &dt) in ctrl.grid.dt().iter().enumerate() {
        let prop = expm(&(sys.member_generator(alpha, beta, &ctrl.at(k)) * dt))?;
        let next = prop * states.last().unwrap();
        states.push(next);
    }
    Ok(StateTrajectory { states })
}

fn member_error(sys: &EnsembleSystem, traj: &StateTrajectory) -> f64 {
    (traj.terminal() - &sys.xt).norm()
}

pub fn grid_verify(sys: &EnsembleSystem, ctrl: &ControlTrajectory, grid: &GridSpec) -> Result<VerificationResult> {
    grid_verify_with(sys, ctrl, grid, false)
}

/// As [`grid_verify`], optionally keeping every member trajectory.
pub fn grid_verify_with(
    sys: &EnsembleSystem,
    ctrl: &ControlTrajectory,
    grid: &GridSpec,
    keep_trajectories: bool,
) -> Result<VerificationResult> {
    grid.validate()?;
    let alphas = axis_points(&sys.alpha, grid.n_alpha_pts, grid.spacing);
    let betas = axis_points(&sys.beta, grid.n_beta_pts, grid.spacing);
    let pairs: Vec<(f64, f64)> = alphas
        .iter()
        .flat_map(|&a| betas.iter().map(move |&b| (a, b)))
        .collect();
    let runs: Vec<StateTrajectory> = pairs
        .par_iter()
        .map(|&(a, b)| simulate_member(sys, a, b, ctrl))
        .collect::<Result<_>>()?;
    let points: Vec<GridPoint> = pairs
        .iter()
        .zip(&runs)
        .map(|(&(alpha, beta), traj)| GridPoint {
            alpha,
            beta,
            terminal_error: member_error(sys, traj),
        })
        .collect();
    let max_error = points.iter().map(|p| p.terminal_error).fold(0.0, f64::max);
    let mean_error = points.iter().map(|p| p.terminal_error).sum::<f64>() / points.len() as f64;
    Ok(VerificationResult {
        alphas,
        betas,
        points,
        max_error,
        mean_error,
        trajectories: keep_trajectories.then_some(runs),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentDiscrepancy {
    /// Largest terminal moment difference between the moment system and quadrature of member states.
    pub coefficient: f64,
    /// Largest member terminal-state difference from the reconstructed expansion at the quadrature nodes.
    pub reconstruction: f64,
}

/// Terminal moment states of the lifted system compared with Gauss-Legendre
/// projections of exact member simulations. Requires `points ≥ max(N_α, N_β) + 2`.
pub fn cross_validate_moments(
    sys: &EnsembleSystem,
    ms: &MomentSystem,
    ctrl: &ControlTrajectory,
    points: usize,
) -> Result<MomentDiscrepancy> {
    let degree = ms.n_alpha.max(ms.n_beta);
    if points < degree + 2 {
        return Err(Error::InsufficientQuadrature { points, degree });
    }
    let moment_terminal = simulate_with(ms, ctrl, Propagation::Modal)?.terminal().clone();
    let rule = GaussLegendre::new(points);
    let nodes: Vec<(f64, f64)> = rule
        .nodes
        .iter()
        .flat_map(|&a| rule.nodes.iter().map(move |&b| (a, b)))
        .collect();
    let samples: Vec<DVector<f64>> = nodes
        .par_iter()
        .map(|&(a, b)| {
            simulate_member(sys, ms.alpha.to_param(a), ms.beta.to_param(b), ctrl).map(|t| t.terminal().clone())
        })
        .collect::<Result<_>>()?;
    let projected = project_moments(&samples, &rule, ms.n_alpha, ms.n_beta)?;
    let coefficient = (&projected - &moment_terminal).amax();
    let mut reconstruction: f64 = 0.0;
    for (&(a, b), x) in nodes.iter().zip(&samples) {
        let r = reconstruct(&moment_terminal, a, b, ms)?;
        reconstruction = reconstruction.max((r - x).norm());
    }
    Ok(MomentDiscrepancy {
        coefficient,
        reconstruction,
    })
}

/// Largest `‖reconstruct(x_K)(α, β) − X(T; α, β)‖` over the given parameter pairs.
pub fn reconstruction_error(
    sys: &EnsembleSystem,
    ms: &MomentSystem,
    ctrl: &ControlTrajectory,
    params: &[(f64, f64)],
) -> Result<f64> {
    let terminal = simulate_with(ms, ctrl, Propagation::Modal)?.terminal().clone();
    let errs: Vec<f64> = params
        .par_iter()
        .map(|&(alpha, beta)| {
            let member = simulate_member(sys, alpha, beta, ctrl)?;
            let r = reconstruct(&terminal, ms.alpha.to_reference(alpha), ms.beta.to_reference(beta), ms)?;
            Ok((r - member.terminal()).norm())
        })
        .collect::<Result<_>>()?;
    Ok(errs.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::TimeGrid;
    use crate::moments::lift;
    use crate::systems::{bloch_system, raman_nath_system, ControlBounds};
    use nalgebra::DMatrix;

    fn bloch(xt: [f64; 3]) -> EnsembleSystem {
        bloch_system(
            ParamInterval::new(-1.0, 1.0).unwrap(),
            ParamInterval::new(0.9, 1.1).unwrap(),
            [1.0, 0.0, 0.0],
            xt,
            ControlBounds::default(),
        )
    }

    fn smooth_control(steps: usize, horizon: f64) -> ControlTrajectory {
        let grid = TimeGrid::uniform(horizon, steps).unwrap();
        let t = grid.times().to_vec();
        ControlTrajectory::new(
            grid,
            DMatrix::from_fn(steps, 2, |k, i| 1.5 * (2.0 * t[k] + i as f64).sin() + 0.3 * i as f64),
        )
        .unwrap()
    }

    /// Classical RK4 with step doubling and error control.
    fn rk4_adaptive(sys: &EnsembleSystem, alpha: f64, beta: f64, ctrl: &ControlTrajectory, tol: f64) -> DVector<f64> {
        let mut x = sys.x0.clone();
        for (k, &dt) in ctrl.grid.dt().iter().enumerate() {
            let g = sys.member_generator(alpha, beta, &ctrl.at(k));
            let rk = |x: &DVector<f64>, h: f64| {
                let k1 = &g * x;
                let k2 = &g * (x + &k1 * (h / 2.0));
                let k3 = &g * (x + &k2 * (h / 2.0));
                let k4 = &g * (x + &k3 * h);
                x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
            };
            let mut t = 0.0;
            let mut h = dt / 4.0;
            while t < dt {
                h = h.min(dt - t);
                let full = rk(&x, h);
                let half = rk(&rk(&x, h / 2.0), h / 2.0);
                let err = (&full - &half).amax() / 15.0;
                if err <= tol {
                    x = &half + (&half - full) / 15.0;
                    t += h;
                    h *= (0.9 * (tol / err.max(1e-300)).powf(0.2)).min(2.0);
                } else {
                    h *= (0.9 * (tol / err).powf(0.2)).max(0.2);
                }
            }
        }
        x
    }

    #[test]
    fn axis_points_layout() {
        let iv = ParamInterval::new(-1.0, 1.0).unwrap();
        let u = axis_points(&iv, 5, Spacing::Uniform);
        assert_eq!(u, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        let c = axis_points(&iv, 3, Spacing::Chebyshev);
        assert_eq!(c[0], -1.0);
        assert_eq!(c[2], 1.0);
        assert!(c[1].abs() < 1e-15);
        assert_eq!(axis_points(&iv, 1, Spacing::Uniform), vec![0.0]);
    }

    #[test]
    fn grid_spec_parsing() {
        let g: GridSpec = "11x7".parse().unwrap();
        assert_eq!((g.n_alpha_pts, g.n_beta_pts), (11, 7));
        assert!("0x5".parse::<GridSpec>().is_err());
        assert!("11".parse::<GridSpec>().is_err());
        assert!("ax3".parse::<GridSpec>().is_err());
    }

    #[test]
    fn zero_control_rotates_about_z() {
        let sys = bloch([0.0, 1.0, 0.0]);
        let grid = TimeGrid::uniform(std::f64::consts::FRAC_PI_2, 8).unwrap();
        let ctrl = ControlTrajectory::constant(grid, 2, 0.0);
        let traj = simulate_member(&sys, 1.0, 1.0, &ctrl).unwrap();
        assert!((traj.terminal() - DVector::from_vec(vec![0.0, 1.0, 0.0])).amax() < 1e-14);
    }

    #[test]
    fn member_matches_adaptive_integration() {
        let sys = bloch([0.0, 0.0, 1.0]);
        let ctrl = smooth_control(20, 1.0);
        for &(a, b) in &[(0.3, 1.0), (-0.9, 0.92), (1.0, 1.1)] {
            let exact = simulate_member(&sys, a, b, &ctrl).unwrap();
            let oracle = rk4_adaptive(&sys, a, b, &ctrl, 1e-12);
            assert!((exact.terminal() - oracle).amax() < 1e-8);
        }
    }

    #[test]
    fn member_norm_is_conserved() {
        let sys = bloch([0.0, 0.0, 1.0]);
        let ctrl = smooth_control(100, 2.0);
        let traj = simulate_member(&sys, 0.7, 1.05, &ctrl).unwrap();
        for w in traj.states.windows(2) {
            assert!((w[1].norm() - w[0].norm()).abs() <= 1e-12);
        }
    }

    #[test]
    fn center_member_equals_zero_degree_lift() {
        let sys = bloch([0.0, 0.0, 1.0]);
        let ms = lift(&sys, 0, 0, None).unwrap();
        let ctrl = smooth_control(15, 1.0);
        let member = simulate_member(&sys, sys.alpha.center(), sys.beta.center(), &ctrl).unwrap();
        let moments = simulate_with(&ms, &ctrl, Propagation::Dense).unwrap();
        // the zero-degree moment carries the factor (∫ L₀)² = 2
        let rec = reconstruct(moments.terminal(), 0.0, 0.0, &ms).unwrap();
        assert!((rec - member.terminal()).amax() < 1e-14);
    }

    #[test]
    fn grid_is_row_major_and_deterministic() {
        let sys = bloch([0.0, 0.0, 1.0]);
        let ctrl = smooth_control(10, 1.0);
        let spec = GridSpec::new(4, 3, Spacing::Uniform).unwrap();
        let r1 = grid_verify(&sys, &ctrl, &spec).unwrap();
        let r2 = grid_verify(&sys, &ctrl, &spec).unwrap();
        assert_eq!(r1.points, r2.points);
        assert_eq!(r1.points.len(), 12);
        assert_eq!(r1.at(1, 2).alpha, r1.alphas[1]);
        assert_eq!(r1.at(1, 2).beta, r1.betas[2]);
        assert!(r1.max_error >= r1.mean_error && r1.mean_error >= 0.0);
        let direct = simulate_member(&sys, r1.alphas[2], r1.betas[0], &ctrl).unwrap();
        assert_eq!(r1.at(2, 0).terminal_error, (direct.terminal() - &sys.xt).norm());
    }

    #[test]
    fn single_point_grid_evaluates_center() {
        let sys = bloch([0.0, 0.0, 1.0]);
        let ctrl = smooth_control(10, 1.0);
        let spec = GridSpec::new(1, 1, Spacing::Uniform).unwrap();
        let r = grid_verify(&sys, &ctrl, &spec).unwrap();
        let direct = simulate_member(&sys, 0.0, 1.0, &ctrl).unwrap();
        assert_eq!(r.max_error, (direct.terminal() - &sys.xt).norm());
        assert!(GridSpec::new(0, 3, Spacing::Uniform).is_err());
    }

    #[test]
    fn static_field_cross_validates_exactly() {
        let sys = bloch([0.0, 0.0, 1.0]);
        let mut sys0 = sys.clone();
        sys0.a = DMatrix::zeros(3, 3);
        let ms = lift(&sys0, 3, 3, None).unwrap();
        let ctrl = ControlTrajectory::constant(TimeGrid::uniform(1.0, 5).unwrap(), 2, 0.0);
        let d = cross_validate_moments(&sys0, &ms, &ctrl, 8).unwrap();
        assert!(d.coefficient < 1e-12 && d.reconstruction < 1e-12);
        assert!(cross_validate_moments(&sys0, &ms, &ctrl, 4).is_err());
    }

    #[test]
    fn lifted_raman_nath_tracks_members() {
        let sys = raman_nath_system(
            3,
            1,
            ParamInterval::new(0.95, 1.05).unwrap(),
            ParamInterval::new(0.9, 1.1).unwrap(),
            1.0,
            None,
        )
        .unwrap();
        let ms = lift(&sys, 6, 6, None).unwrap();
        let grid = TimeGrid::uniform(1.0, 20).unwrap();
        let t = grid.times().to_vec();
        let ctrl = ControlTrajectory::new(grid, DMatrix::from_fn(20, 1, |k, _| 3.0 + 2.0 * (3.0 * t[k]).sin())).unwrap();
        let d = cross_validate_moments(&sys, &ms, &ctrl, 12).unwrap();
        assert!(d.coefficient < 1e-8, "{d:?}");
        assert!(d.reconstruction < 1e-6, "{d:?}");
    }
}
