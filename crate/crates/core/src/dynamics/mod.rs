//! Exact zero-order-hold propagation of the lifted bilinear system and its
//! linearizations.

mod expm;
mod linearize;
mod modal;

pub use expm::expm;
pub use linearize::{
    build_h, linearize_continuous_first, linearize_continuous_first_with, linearize_discrete_first, linearize_discrete_first_with,
    LinearizedModel, Quadrature, Transitions,
};
pub use modal::ModalBasis;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::moments::MomentSystem;
use crate::systems::ControlBounds;

/// Sampling times `0 = t_0 < t_1 < … < t_K = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t: Vec<f64>,
    dt: Vec<f64>,
}

impl TimeGrid {
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidGrid("at least one step is required".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        let h = horizon / steps as f64;
        let mut t: Vec<f64> = (0..=steps).map(|k| k as f64 * h).collect();
        t[steps] = horizon;
        Self::from_times(t)
    }

    pub fn from_times(t: Vec<f64>) -> Result<Self> {
        if t.len() < 2 {
            return Err(Error::InvalidGrid("need at least two sampling times".into()));
        }
        if t[0] != 0.0 {
            return Err(Error::InvalidGrid("grid must start at t = 0".into()));
        }
        let dt: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        if dt.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::InvalidGrid("sampling times must be strictly increasing".into()));
        }
        Ok(Self { t, dt })
    }

    pub fn steps(&self) -> usize {
        self.dt.len()
    }

    pub fn horizon(&self) -> f64 {
        *self.t.last().unwrap()
    }

    pub fn times(&self) -> &[f64] {
        &self.t
    }

    pub fn dt(&self) -> &[f64] {
        &self.dt
    }

    /// Splits at sample index `k` into `[0, t_k]` and `[t_k, T]` (the latter shifted to start at 0).
    pub fn split_at(&self, k: usize) -> Result<(TimeGrid, TimeGrid)> {
        if k == 0 || k >= self.steps() {
            return Err(Error::InvalidGrid(format!("cannot split {} steps at {k}", self.steps())));
        }
        let left = TimeGrid::from_times(self.t[..=k].to_vec())?;
        let t0 = self.t[k];
        let right = TimeGrid::from_times(self.t[k..].iter().map(|t| t - t0).collect())?;
        Ok((left, right))
    }
}

/// Piecewise-constant controls: row `k` holds `U(t)` on `[t_k, t_{k+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlTrajectory {
    pub grid: TimeGrid,
    /// `K × m`.
    pub u: DMatrix<f64>,
}

impl ControlTrajectory {
    pub fn new(grid: TimeGrid, u: DMatrix<f64>) -> Result<Self> {
        if u.nrows() != grid.steps() {
            return Err(Error::DimensionMismatch {
                context: "control rows",
                expected: grid.steps(),
                found: u.nrows(),
            });
        }
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("control values"));
        }
        Ok(Self { grid, u })
    }

    pub fn constant(grid: TimeGrid, m: usize, value: f64) -> Self {
        let k = grid.steps();
        Self {
            grid,
            u: DMatrix::from_element(k, m, value),
        }
    }

    pub fn steps(&self) -> usize {
        self.u.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.u.ncols()
    }

    pub fn at(&self, k: usize) -> Vec<f64> {
        self.u.row(k).iter().copied().collect()
    }

    /// Stacked `[U_0', …, U_{K−1}']'`.
    pub fn to_flat(&self) -> DVector<f64> {
        let (k, m) = self.u.shape();
        DVector::from_fn(k * m, |idx, _| self.u[(idx / m, idx % m)])
    }

    pub fn from_flat(grid: TimeGrid, m: usize, flat: &DVector<f64>) -> Result<Self> {
        let k = grid.steps();
        if flat.len() != k * m {
            return Err(Error::DimensionMismatch {
                context: "stacked control",
                expected: k * m,
                found: flat.len(),
            });
        }
        Self::new(grid, DMatrix::from_fn(k, m, |r, c| flat[r * m + c]))
    }

    /// `‖ΛU‖² = Σ_k Δt_k² ‖U_k‖²`.
    pub fn energy(&self) -> f64 {
        weighted_energy(&self.grid, &self.to_flat(), self.inputs(), 2)
    }

    /// Riemann sum `Σ_k Δt_k ‖U_k‖²` of the continuous energy.
    pub fn riemann_energy(&self) -> f64 {
        weighted_energy(&self.grid, &self.to_flat(), self.inputs(), 1)
    }

    /// Largest violation of amplitude and slew limits (zero when feasible).
    pub fn bound_violation(&self, bounds: &ControlBounds) -> f64 {
        let mut worst: f64 = 0.0;
        for v in self.u.iter() {
            worst = worst.max(bounds.u_min - v).max(v - bounds.u_max);
        }
        let dt = self.grid.dt();
        for k in 0..self.steps().saturating_sub(1) {
            for i in 0..self.inputs() {
                let rate = (self.u[(k + 1, i)] - self.u[(k, i)]) / dt[k];
                worst = worst.max(bounds.du_min - rate).max(rate - bounds.du_max);
            }
        }
        worst
    }
}

pub(crate) fn weighted_energy(grid: &TimeGrid, flat: &DVector<f64>, m: usize, power: i32) -> f64 {
    flat.iter()
        .enumerate()
        .map(|(idx, v)| grid.dt()[idx / m].powi(power) * v * v)
        .sum()
}

/// Moment states at every sampling time.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    pub states: Vec<DVector<f64>>,
}

impl StateTrajectory {
    pub fn terminal(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory holds at least the initial state")
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// `(K+1) × D` matrix, one state per row.
    pub fn as_matrix(&self) -> DMatrix<f64> {
        let rows = self.states.len();
        let cols = self.states.first().map_or(0, |s| s.len());
        DMatrix::from_fn(rows, cols, |r, c| self.states[r][c])
    }
}

/// How step propagators are evaluated.
///
/// `Dense` exponentiates the full `D × D` generator. `Modal` diagonalizes the
/// Jacobi factors of the Kronecker structure once, which decouples the moment
/// system into `(N_α+1)(N_β+1)` member systems of size `n`; both give the same
/// propagator up to rounding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Propagation {
    Dense,
    #[default]
    Modal,
}

fn check_inputs(ms: &MomentSystem, ctrl: &ControlTrajectory) -> Result<()> {
    if ctrl.inputs() != ms.m {
        return Err(Error::DimensionMismatch {
            context: "control channels",
            expected: ms.m,
            found: ctrl.inputs(),
        });
    }
    Ok(())
}

/// One exact zero-order-hold step `e^{Δt(A + Σ uᵢBᵢ)} x`.
pub fn step(x: &DVector<f64>, u: &[f64], dt: f64, ms: &MomentSystem) -> Result<DVector<f64>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidGrid(format!("step length must be positive, got {dt}")));
    }
    if u.len() != ms.m {
        return Err(Error::DimensionMismatch {
            context: "control channels",
            expected: ms.m,
            found: u.len(),
        });
    }
    let prop = expm(&(ms.generator(u) * dt))?;
    Ok(prop * x)
}

pub fn simulate(ms: &MomentSystem, ctrl: &ControlTrajectory) -> Result<StateTrajectory> {
    simulate_with(ms, ctrl, Propagation::default())
}

pub fn simulate_with(
    ms: &MomentSystem,
    ctrl: &ControlTrajectory,
    propagation: Propagation,
) -> Result<StateTrajectory> {
    check_inputs(ms, ctrl)?;
    match propagation {
        Propagation::Dense => {
            let mut states = Vec::with_capacity(ctrl.steps() + 1);
            states.push(ms.x0.clone());
            for (k, &dt) in ctrl.grid.dt().iter().enumerate() {
                let next = step(states.last().unwrap(), &ctrl.at(k), dt, ms)?;
                states.push(next);
            }
            Ok(StateTrajectory { states })
        }
        Propagation::Modal => {
            let basis = ModalBasis::new(ms);
            basis.simulate(ms, ctrl)
        }
    }
}
