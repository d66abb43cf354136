//! Two-stage iterative pulse synthesis.
//!
//! Stage 1 steers the terminal moment state toward the target by repeatedly
//! solving
//!
//! ```text
//! min ‖P(H δu + x̄_K − x_T)‖² + λ ‖Λ δu‖²
//! ```
//!
//! on the linearization about the current nominal control, with
//! `λ := λ₀ ‖P(x̄_K − x_T)‖²` after every step. Stage 2 then lowers the
//! discrete energy `‖ΛU‖²` while holding the linearized endpoint fixed:
//!
//! ```text
//! min ‖Λ(Ū + δu)‖² + μ ‖Λ δu‖²   s.t.  P H δu = 0
//! ```
//!
//! Both problems carry the amplitude bounds on `Ū + δu` and the slew bounds
//! on its first differences. Every QP step is accepted as is.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    linearize_continuous_first_with, linearize_discrete_first_with, simulate_with, ControlTrajectory, LinearizedModel, Propagation, Quadrature, StateTrajectory,
    TimeGrid,
};
use crate::error::{Error, Result};
use crate::moments::MomentSystem;
use crate::qpcore::{qp_solve_with, QPSolution, QProblem, QpSettings, QpStatus};
use crate::systems::ControlBounds;

/// Nominal control the iteration starts from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialControl {
    /// Zero when admissible, otherwise the midpoint of the amplitude bounds.
    #[default]
    Auto,
    Zeros,
    Constant(f64),
    /// `K × m` samples.
    Trajectory(Vec<Vec<f64>>),
}

/// Input matrices used when re-linearizing inside the outer loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Jacobian {
    /// `𝐁_k = Δt 𝐀_k [B₁x̄_k, …]`, first-order accurate in the step.
    #[default]
    DiscreteFirst,
    /// Exact input convolution over each interval; the true derivative of the
    /// discrete flow map.
    Exact,
}

const MAX_REJECTIONS: usize = 8;

fn linearize(
    ms: &MomentSystem,
    ctrl: &ControlTrajectory,
    traj: &StateTrajectory,
    config: &SolverConfig,
) -> Result<LinearizedModel> {
    match config.jacobian {
        Jacobian::DiscreteFirst => linearize_discrete_first_with(ms, ctrl, traj, config.propagation),
        Jacobian::Exact => linearize_continuous_first_with(ms, ctrl, traj, Quadrature::Exact, config.propagation),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub lambda0: f64,
    pub mu0: f64,
    pub max_iter_stage1: usize,
    pub max_iter_stage2: usize,
    /// Iteration cap for each drift-guard refinement pass.
    pub max_iter_refine: usize,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
    pub initial_control: InitialControl,
    pub propagation: Propagation,
    pub jacobian: Jacobian,
    /// Retry a steering step with a larger weight when it increases the terminal error.
    pub reject_increasing_steps: bool,
    /// Hold the last control interval at its nominal value (drops the last `m` columns of `H`).
    pub freeze_final_interval: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            delta: 1e-8,
            lambda0: 0.01,
            mu0: 0.01,
            max_iter_stage1: 800,
            max_iter_stage2: 400,
            max_iter_refine: 100,
            qp_tol: 1e-8,
            qp_max_iter: 20_000,
            initial_control: InitialControl::Auto,
            propagation: Propagation::Modal,
            jacobian: Jacobian::DiscreteFirst,
            reject_increasing_steps: false,
            freeze_final_interval: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epsilon", self.epsilon),
            ("delta", self.delta),
            ("lambda0", self.lambda0),
            ("mu0", self.mu0),
            ("qp_tol", self.qp_tol),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be positive, got {v}")));
            }
        }
        if self.max_iter_stage1 == 0 {
            return Err(Error::config("max_iter_stage1", "must be at least 1"));
        }
        if self.max_iter_stage2 == 0 {
            return Err(Error::config("max_iter_stage2", "must be at least 1"));
        }
        if self.max_iter_refine == 0 {
            return Err(Error::config("max_iter_refine", "must be at least 1"));
        }
        if self.qp_max_iter == 0 {
            return Err(Error::config("qp_max_iter", "must be at least 1"));
        }
        Ok(())
    }

    fn qp_settings(&self) -> QpSettings {
        QpSettings {
            tol: self.qp_tol,
            max_iter: self.qp_max_iter,
            ..QpSettings::default()
        }
    }

    pub fn initial_control(&self, grid: &TimeGrid, m: usize, bounds: &ControlBounds) -> Result<ControlTrajectory> {
        match &self.initial_control {
            InitialControl::Auto => Ok(ControlTrajectory::constant(grid.clone(), m, bounds.default_initial_value())),
            InitialControl::Zeros => Ok(ControlTrajectory::constant(grid.clone(), m, 0.0)),
            InitialControl::Constant(v) => Ok(ControlTrajectory::constant(grid.clone(), m, *v)),
            InitialControl::Trajectory(rows) => {
                if rows.len() != grid.steps() || rows.iter().any(|r| r.len() != m) {
                    return Err(Error::config(
                        "initial_control",
                        format!("expected {} rows of {} values", grid.steps(), m),
                    ));
                }
                ControlTrajectory::new(grid.clone(), DMatrix::from_fn(rows.len(), m, |k, i| rows[k][i]))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Terminal error reached ε.
    Converged,
    /// `‖Λδu‖ ≤ δ`.
    StepTolerance,
    MaxIter,
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `‖P(x̄_K − x_T)‖` after the step.
    pub terminal_error: f64,
    /// `‖ΛŪ‖²` before the step.
    pub start_energy: f64,
    /// `‖ΛŪ‖²` after the step.
    pub energy: f64,
    /// `Σ Δt_k ‖U_k‖²` after the step.
    pub riemann_energy: f64,
    /// `‖Λδu‖`.
    pub step_norm: f64,
    /// λ (stage 1) or μ (stage 2) used for this step.
    pub weight: f64,
    pub qp_status: QpStatus,
    pub qp_iterations: usize,
    /// `‖P H δu‖`, the linear-model terminal change.
    pub predicted_change: f64,
    pub wall_time: f64,
    /// Set on the stage-2 step after which a stage-1 refinement pass ran.
    pub drift_guard: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageSummary {
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub terminal_error: f64,
}

#[derive(Debug, Clone)]
pub struct SynthesisReport {
    pub stage1_history: Vec<IterationRecord>,
    pub stage2_history: Vec<IterationRecord>,
    /// Records of stage-1 refinement passes triggered from stage 2, in order.
    pub refinement_history: Vec<IterationRecord>,
    pub initial_error: f64,
    pub stage1: StageSummary,
    pub stage2: Option<StageSummary>,
    pub stop_reason: StopReason,
    /// Terminal error at the end of stage 1.
    pub anchor_error: f64,
    pub drift_guard_events: usize,
    pub final_control: ControlTrajectory,
    pub final_trajectory: StateTrajectory,
}

impl SynthesisReport {
    pub fn terminal_error(&self, ms: &MomentSystem) -> f64 {
        ms.terminal_error(self.final_trajectory.terminal())
    }

    /// Stage 1 reached ε and the final error stayed within the drift allowance.
    pub fn converged(&self, ms: &MomentSystem, config: &SolverConfig) -> bool {
        self.stage1.stop_reason == StopReason::Converged && self.terminal_error(ms) <= 2.0 * config.epsilon
    }
}

/// Flat-index layout of the decision vector: the first `free` entries of the
/// stacked perturbation, the rest held at zero.
fn free_columns(lin: &LinearizedModel, freeze_final: bool) -> usize {
    let total = lin.h.ncols();
    if freeze_final {
        total - lin.inputs_per_step()
    } else {
        total
    }
}

/// Amplitude and slew constraints on `Ū + δu` in terms of the free entries of `δu`.
fn bound_constraints(
    ctrl: &ControlTrajectory,
    bounds: &ControlBounds,
    free: usize,
) -> (DVector<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let m = ctrl.inputs();
    let nominal = ctrl.to_flat();
    let lower = DVector::from_fn(free, |j, _| bounds.u_min - nominal[j]);
    let upper = DVector::from_fn(free, |j, _| bounds.u_max - nominal[j]);

    let dt = ctrl.grid.dt();
    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for k in 0..ctrl.steps().saturating_sub(1) {
        for i in 0..m {
            let (a, b) = (k * m + i, (k + 1) * m + i);
            let rate = (nominal[b] - nominal[a]) / dt[k];
            let mut coeffs = Vec::with_capacity(2);
            if a < free {
                coeffs.push((a, -1.0 / dt[k]));
            }
            if b < free {
                coeffs.push((b, 1.0 / dt[k]));
            }
            if coeffs.is_empty() {
                continue;
            }
            if bounds.du_max.is_finite() {
                rows.push((coeffs.clone(), bounds.du_max - rate));
            }
            if bounds.du_min.is_finite() {
                let neg = coeffs.iter().map(|&(c, v)| (c, -v)).collect();
                rows.push((neg, rate - bounds.du_min));
            }
        }
    }
    let mut g = DMatrix::zeros(rows.len(), free);
    let mut h = DVector::zeros(rows.len());
    for (r, (coeffs, rhs)) in rows.into_iter().enumerate() {
        for (c, v) in coeffs {
            g[(r, c)] = v;
        }
        h[r] = rhs;
    }
    (lower, upper, g, h)
}

fn lambda_sq(ctrl: &ControlTrajectory, free: usize) -> DVector<f64> {
    let m = ctrl.inputs();
    let dt = ctrl.grid.dt();
    DVector::from_fn(free, |j, _| dt[j / m] * dt[j / m])
}

fn expand(du_free: &DVector<f64>, total: usize) -> DVector<f64> {
    let mut du = DVector::zeros(total);
    du.rows_mut(0, du_free.len()).copy_from(du_free);
    du
}

fn qp_for_stage1(
    ms: &MomentSystem,
    ctrl: &ControlTrajectory,
    traj: &StateTrajectory,
    lin: &LinearizedModel,
    lambda: f64,
    free: usize,
) -> QProblem {
    let ph = &ms.p * lin.h.columns(0, free);
    let resid = &ms.p * (traj.terminal() - &ms.xt);
    let mut quad = ph.transpose() * &ph;
    for (j, w) in lambda_sq(ctrl, free).iter().enumerate() {
        quad[(j, j)] += lambda * w;
    }
    quad = (&quad + quad.transpose()) * 0.5;
    let lin_term = ph.transpose() * resid;
    let (lower, upper, g, h) = bound_constraints(ctrl, &ms.bounds, free);
    QProblem::new(quad, lin_term)
        .with_bounds(lower, upper)
        .with_inequalities(g, h)
}

fn qp_for_stage2(ms: &MomentSystem, ctrl: &ControlTrajectory, lin: &LinearizedModel, mu: f64, free: usize) -> QProblem {
    let w = lambda_sq(ctrl, free);
    let nominal = ctrl.to_flat();
    let quad = DMatrix::from_diagonal(&(&w * (1.0 + mu)));
    let lin_term = DVector::from_fn(free, |j, _| w[j] * nominal[j]);
    let ph = &ms.p * lin.h.columns(0, free);
    let (lower, upper, g, h) = bound_constraints(ctrl, &ms.bounds, free);
    let rhs = DVector::zeros(ph.nrows());
    QProblem::new(quad, lin_term)
        .with_bounds(lower, upper)
        .with_inequalities(g, h)
        .with_equalities(ph, rhs)
}

/// Stage-1 steering step on the free entries. The returned `z` is the full
/// stacked perturbation (frozen entries zero).
pub fn stage1_qp(
    ms: &MomentSystem,
    ctrl: &ControlTrajectory,
    traj: &StateTrajectory,
    lin: &LinearizedModel,
    lambda: f64,
    config: &SolverConfig,
) -> Result<QPSolution> {
    let free = free_columns(lin, config.freeze_final_interval);
    let p = qp_for_stage1(ms, ctrl, traj, lin, lambda, free);
    let mut sol = qp_solve_with(&p, &config.qp_settings(), None)?;
    sol.z = expand(&sol.z, lin.h.ncols());
    Ok(sol)
}

/// Stage-2 energy step. The returned `z` is the full stacked perturbation.
pub fn stage2_qp(
    ms: &MomentSystem,
    ctrl: &ControlTrajectory,
    lin: &LinearizedModel,
    mu: f64,
    config: &SolverConfig,
) -> Result<QPSolution> {
    let free = free_columns(lin, config.freeze_final_interval);
    let p = qp_for_stage2(ms, ctrl, lin, mu, free);
    let mut sol = qp_solve_with(&p, &config.qp_settings(), None)?;
    sol.z = expand(&sol.z, lin.h.ncols());
    Ok(sol)
}

/// `Ū + δu`, with amplitudes clipped onto the bounds to remove solver round-off.
fn apply_step(ctrl: &ControlTrajectory, du: &DVector<f64>, bounds: &ControlBounds) -> Result<ControlTrajectory> {
    let mut next = ctrl.to_flat() + du;
    for v in next.iter_mut() {
        *v = v.clamp(bounds.u_min, bounds.u_max);
    }
    ControlTrajectory::from_flat(ctrl.grid.clone(), ctrl.inputs(), &next)
}

/// Adds a smooth, deterministic excursion `a sin(π(i+1)t/T)` to channel `i`.
fn kick(ctrl: &ControlTrajectory, bounds: &ControlBounds) -> Result<ControlTrajectory> {
    let a = if (bounds.u_max - bounds.u_min).is_finite() {
        0.1 * (bounds.u_max - bounds.u_min)
    } else {
        1.0
    };
    let horizon = ctrl.grid.horizon();
    let mut u = ctrl.u.clone();
    for k in 0..ctrl.steps() {
        let t = ctrl.grid.times()[k] + 0.5 * ctrl.grid.dt()[k];
        for i in 0..ctrl.inputs() {
            let v = u[(k, i)] + a * (std::f64::consts::PI * (i + 1) as f64 * t / horizon).sin();
            u[(k, i)] = v.clamp(bounds.u_min, bounds.u_max);
        }
    }
    ControlTrajectory::new(ctrl.grid.clone(), u)
}

fn step_norm(ctrl: &ControlTrajectory, du: &DVector<f64>) -> f64 {
    crate::dynamics::weighted_energy(&ctrl.grid, du, ctrl.inputs(), 2).sqrt()
}

pub struct StageOutcome {
    pub control: ControlTrajectory,
    pub trajectory: StateTrajectory,
    pub history: Vec<IterationRecord>,
    pub stop_reason: StopReason,
}

/// Stage-1 iterations from the given nominal control.
pub fn stage1_from(ms: &MomentSystem, ctrl: ControlTrajectory, config: &SolverConfig) -> Result<StageOutcome> {
    config.validate()?;
    let mut ctrl = ctrl;
    let mut traj = simulate_with(ms, &ctrl, config.propagation)?;
    let mut err = ms.terminal_error(traj.terminal());
    let mut history = Vec::new();
    if err <= config.epsilon {
        return Ok(StageOutcome {
            control: ctrl,
            trajectory: traj,
            history,
            stop_reason: StopReason::Converged,
        });
    }
    let mut stop_reason = StopReason::MaxIter;
    let mut damping = 1.0;
    let mut kicked = false;
    for iteration in 0..config.max_iter_stage1 {
        let start = Instant::now();
        let lin = linearize(ms, &ctrl, &traj, config)?;
        let start_energy = ctrl.energy();
        let mut attempt = 0;
        let (lambda, sol, predicted_change, next_ctrl, next_traj, next_err) = loop {
            let lambda = config.lambda0 * err * err * damping;
            let sol = stage1_qp(ms, &ctrl, &traj, &lin, lambda, config)?;
            if sol.status == QpStatus::Infeasible {
                return Err(Error::Infeasible(
                    "stage-1 steering problem has no feasible step; check amplitude and slew bounds".into(),
                ));
            }
            let predicted_change = (&ms.p * lin.predict_terminal(&sol.z)).norm();
            let next_ctrl = apply_step(&ctrl, &sol.z, &ms.bounds)?;
            let next_traj = simulate_with(ms, &next_ctrl, config.propagation)?;
            let next_err = ms.terminal_error(next_traj.terminal());
            attempt += 1;
            if !config.reject_increasing_steps || next_err <= err || attempt > MAX_REJECTIONS {
                break (lambda, sol, predicted_change, next_ctrl, next_traj, next_err);
            }
            damping *= 10.0;
        };
        if config.reject_increasing_steps && next_err <= err {
            damping = (damping / 3.0).max(1.0);
        }
        let du = sol.z;
        ctrl = next_ctrl;
        traj = next_traj;
        err = next_err;
        let norm = step_norm(&ctrl, &du);
        history.push(IterationRecord {
            iteration,
            terminal_error: err,
            start_energy,
            energy: ctrl.energy(),
            riemann_energy: ctrl.riemann_energy(),
            step_norm: norm,
            weight: lambda,
            qp_status: sol.status,
            qp_iterations: sol.iterations,
            predicted_change,
            wall_time: start.elapsed().as_secs_f64(),
            drift_guard: false,
        });
        if err <= config.epsilon {
            stop_reason = StopReason::Converged;
            break;
        }
        if norm <= config.delta {
            if iteration == 0 && !kicked {
                // stationary start (e.g. zero control on a symmetric target)
                kicked = true;
                ctrl = kick(&ctrl, &ms.bounds)?;
                traj = simulate_with(ms, &ctrl, config.propagation)?;
                err = ms.terminal_error(traj.terminal());
                continue;
            }
            stop_reason = StopReason::StepTolerance;
            break;
        }
    }
    Ok(StageOutcome {
        control: ctrl,
        trajectory: traj,
        history,
        stop_reason,
    })
}

/// Stage 1 from the configured initial control.
pub fn stage1_run(ms: &MomentSystem, grid: &TimeGrid, config: &SolverConfig) -> Result<StageOutcome> {
    let ctrl = config.initial_control(grid, ms.m, &ms.bounds)?;
    if ctrl.bound_violation(&ms.bounds) > 0.0 {
        return Err(Error::config("initial_control", "violates the control bounds"));
    }
    stage1_from(ms, ctrl, config)
}

/// Result of stage 2, including any stage-1 refinement passes it triggered.
pub struct Stage2Outcome {
    pub stage: StageOutcome,
    pub refinements: Vec<IterationRecord>,
    pub guard_events: usize,
}

/// Stage-2 iterations. When the true terminal error leaves the drift
/// allowance `max(2ε, e₁ + ε)` (`e₁` the stage-1 terminal error), one stage-1
/// pass is run from the current control before continuing.
pub fn stage2_run(ms: &MomentSystem, stage1: &StageOutcome, config: &SolverConfig) -> Result<Stage2Outcome> {
    config.validate()?;
    let mut ctrl = stage1.control.clone();
    let mut traj = stage1.trajectory.clone();
    let anchor = ms.terminal_error(traj.terminal());
    let allowance = (2.0 * config.epsilon).max(anchor + config.epsilon);
    // refinement passes restore the anchor quality, not necessarily ε
    let mut refine = config.clone();
    refine.max_iter_stage1 = config.max_iter_refine;
    if anchor > config.epsilon {
        refine.epsilon = anchor + 0.5 * config.epsilon;
    }
    let mut mu = config.mu0;
    let mut history = Vec::new();
    let mut refinements = Vec::new();
    let mut guard_events = 0;
    let mut stop_reason = StopReason::MaxIter;

    for iteration in 0..config.max_iter_stage2 {
        let start = Instant::now();
        let lin = linearize(ms, &ctrl, &traj, config)?;
        let mut sol = stage2_qp(ms, &ctrl, &lin, mu, config)?;
        if sol.status == QpStatus::Infeasible {
            mu *= 10.0;
            sol = stage2_qp(ms, &ctrl, &lin, mu, config)?;
            if sol.status == QpStatus::Infeasible {
                return Err(Error::Infeasible(
                    "stage-2 endpoint constraint conflicts with the control bounds".into(),
                ));
            }
        }
        let du = sol.z;
        let predicted_change = (&ms.p * lin.predict_terminal(&du)).norm();
        let norm = step_norm(&ctrl, &du);
        let start_energy = ctrl.energy();
        ctrl = apply_step(&ctrl, &du, &ms.bounds)?;
        traj = simulate_with(ms, &ctrl, config.propagation)?;
        let err = ms.terminal_error(traj.terminal());
        let mut record = IterationRecord {
            iteration,
            terminal_error: err,
            start_energy,
            energy: ctrl.energy(),
            riemann_energy: ctrl.riemann_energy(),
            step_norm: norm,
            weight: mu,
            qp_status: sol.status,
            qp_iterations: sol.iterations,
            predicted_change,
            wall_time: start.elapsed().as_secs_f64(),
            drift_guard: false,
        };

        if err > allowance {
            record.drift_guard = true;
            guard_events += 1;
            history.push(record);
            let pass = stage1_from(ms, ctrl, &refine)?;
            refinements.extend(pass.history);
            ctrl = pass.control;
            traj = pass.trajectory;
            continue;
        }
        history.push(record);
        if norm <= config.delta {
            stop_reason = StopReason::StepTolerance;
            break;
        }
        if norm <= 2.0 * config.delta {
            mu *= 0.9;
        }
    }
    Ok(Stage2Outcome {
        stage: StageOutcome {
            control: ctrl,
            trajectory: traj,
            history,
            stop_reason,
        },
        refinements,
        guard_events,
    })
}

/// Stage 1 followed by stage 2.
pub fn synthesize(ms: &MomentSystem, grid: &TimeGrid, config: &SolverConfig) -> Result<SynthesisReport> {
    config.validate()?;
    let initial = config.initial_control(grid, ms.m, &ms.bounds)?;
    let initial_traj = simulate_with(ms, &initial, config.propagation)?;
    let initial_error = ms.terminal_error(initial_traj.terminal());

    let s1 = stage1_run(ms, grid, config)?;
    let anchor_error = ms.terminal_error(s1.trajectory.terminal());
    let stage1 = StageSummary {
        iterations: s1.history.len(),
        stop_reason: s1.stop_reason,
        terminal_error: anchor_error,
    };
    let s2 = stage2_run(ms, &s1, config)?;
    let final_error = ms.terminal_error(s2.stage.trajectory.terminal());
    let stage2 = StageSummary {
        iterations: s2.stage.history.len(),
        stop_reason: s2.stage.stop_reason,
        terminal_error: final_error,
    };
    let stop_reason = if s1.stop_reason == StopReason::Converged && final_error <= 2.0 * config.epsilon {
        StopReason::Converged
    } else {
        s1.stop_reason
    };
    Ok(SynthesisReport {
        stage1_history: s1.history,
        stage2_history: s2.stage.history,
        refinement_history: s2.refinements,
        initial_error,
        stage1,
        stage2: Some(stage2),
        stop_reason,
        anchor_error,
        drift_guard_events: s2.guard_events,
        final_control: s2.stage.control,
        final_trajectory: s2.stage.trajectory,
    })
}
