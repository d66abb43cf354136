use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use super::{expm, ControlTrajectory, ModalBasis, Propagation, StateTrajectory};
use crate::error::{Error, Result};
use crate::moments::MomentSystem;

/// Evaluation of the input convolution in the linearize-then-discretize route.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quadrature {
    /// Closed form through the exponential of a block upper-triangular matrix.
    Exact,
    LeftEndpoint,
}

impl FromStr for Quadrature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Quadrature::Exact),
            "left_endpoint" | "left-endpoint" => Ok(Quadrature::LeftEndpoint),
            other => Err(Error::UnknownQuadrature(other.to_string())),
        }
    }
}

/// Per-step state transition matrices `𝐀_k`.
#[derive(Debug, Clone)]
pub enum Transitions {
    Dense(Vec<DMatrix<f64>>),
    /// Block propagators in modal coordinates (`𝐀_k = Q blockdiag Q'`).
    Modal {
        basis: ModalBasis,
        blocks: Vec<Vec<DMatrix<f64>>>,
    },
}

impl Transitions {
    pub fn len(&self) -> usize {
        match self {
            Transitions::Dense(v) => v.len(),
            Transitions::Modal { blocks, .. } => blocks.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Dense `𝐀_k`.
    pub fn dense(&self, k: usize) -> DMatrix<f64> {
        match self {
            Transitions::Dense(v) => v[k].clone(),
            Transitions::Modal { basis, blocks } => basis.dense_from_blocks(&blocks[k]),
        }
    }

    pub fn apply(&self, k: usize, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Transitions::Dense(v) => &v[k] * x,
            Transitions::Modal { basis, blocks } => {
                basis.from_modal(&basis.apply_blocks(&blocks[k], &basis.to_modal(x)))
            }
        }
    }
}

/// Discrete-time perturbation model `δx_{k+1} = 𝐀_k δx_k + 𝐁_k δu_k` with
/// `δx_0 = 0`, and its evolution matrix `H` (`δx_K = H δu`).
#[derive(Debug, Clone)]
pub struct LinearizedModel {
    pub transitions: Transitions,
    /// `𝐁_k`, each `D × m`.
    pub inputs: Vec<DMatrix<f64>>,
    /// `D × mK`.
    pub h: DMatrix<f64>,
}

impl LinearizedModel {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn inputs_per_step(&self) -> usize {
        self.inputs.first().map_or(0, |b| b.ncols())
    }

    /// `δx_0, …, δx_K` for stacked perturbation `δu`, starting from `δx_0 = 0`.
    pub fn perturbation_trajectory(&self, du: &DVector<f64>) -> Vec<DVector<f64>> {
        let m = self.inputs_per_step();
        let d = self.h.nrows();
        let mut out = Vec::with_capacity(self.steps() + 1);
        out.push(DVector::zeros(d));
        for k in 0..self.steps() {
            let prev = out.last().unwrap();
            let next = self.transitions.apply(k, prev) + &self.inputs[k] * du.rows(k * m, m);
            out.push(next);
        }
        out
    }

    /// `H δu`.
    pub fn predict_terminal(&self, du: &DVector<f64>) -> DVector<f64> {
        &self.h * du
    }

    /// The leading `m(K−1)` columns of `H`, for runs that hold the last interval fixed.
    pub fn h_frozen_final(&self) -> DMatrix<f64> {
        let cols = self.h.ncols() - self.inputs_per_step();
        self.h.columns(0, cols).clone_owned()
    }
}

fn check_nominal(
    ms: &MomentSystem,
    ctrl: &ControlTrajectory,
    traj: &StateTrajectory,
    first_step: impl FnOnce() -> Result<DVector<f64>>,
) -> Result<()> {
    if ctrl.inputs() != ms.m {
        return Err(Error::DimensionMismatch {
            context: "control channels",
            expected: ms.m,
            found: ctrl.inputs(),
        });
    }
    if traj.len() != ctrl.steps() + 1 {
        return Err(Error::DimensionMismatch {
            context: "trajectory length",
            expected: ctrl.steps() + 1,
            found: traj.len(),
        });
    }
    let scale = 1.0 + ms.x0.norm();
    let d0 = (&traj.states[0] - &ms.x0).norm();
    if d0 > 1e-12 * scale {
        return Err(Error::StaleTrajectory(d0));
    }
    let d1 = (first_step()? - &traj.states[1]).norm();
    if d1 > 1e-9 * scale {
        return Err(Error::StaleTrajectory(d1));
    }
    Ok(())
}

fn input_matrix(ms: &MomentSystem, x: &DVector<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(x.len(), ms.m);
    for (i, bi) in ms.b.iter().enumerate() {
        out.set_column(i, &(bi * x));
    }
    out
}

pub fn linearize_discrete_first(
    ms: &MomentSystem,
    ctrl: &ControlTrajectory,
    traj: &StateTrajectory,
) -> Result<LinearizedModel> {
    linearize_discrete_first_with(ms, ctrl, traj, Propagation::default())
}

/// `𝐀_k = exp(Δt_k(A + Σ Ūᵢ Bᵢ))`, `𝐁_k = Δt_k 𝐀_k [B₁x̄_k, …, B_m x̄_k]`.
pub fn linearize_discrete_first_with(
    ms: &MomentSystem,
    ctrl: &ControlTrajectory,
    traj: &StateTrajectory,
    propagation: Propagation,
) -> Result<LinearizedModel> {
    match propagation {
        Propagation::Dense => {
            let mut ak = Vec::with_capacity(ctrl.steps());
            let mut bk = Vec::with_capacity(ctrl.steps());
            for (k, &dt) in ctrl.grid.dt().iter().enumerate() {
                let a = expm(&(ms.generator(&ctrl.at(k)) * dt))?;
                if k == 0 {
                    check_nominal(ms, ctrl, traj, || Ok(&a * &ms.x0))?;
                }
                let b = &a * input_matrix(ms, &traj.states[k]) * dt;
                ak.push(a);
                bk.push(b);
            }
            let mut lin = LinearizedModel {
                transitions: Transitions::Dense(ak),
                inputs: bk,
                h: DMatrix::zeros(0, 0),
            };
            lin.h = build_h(&lin);
            Ok(lin)
        }
        Propagation::Modal => {
            let basis = ModalBasis::new(ms);
            let mut blocks = Vec::with_capacity(ctrl.steps());
            let mut modal_inputs = Vec::with_capacity(ctrl.steps());
            for (k, &dt) in ctrl.grid.dt().iter().enumerate() {
                let blk = basis.step_blocks(ms, &ctrl.at(k), dt)?;
                let y = basis.to_modal(&traj.states[k]);
                if k == 0 {
                    check_nominal(ms, ctrl, traj, || {
                        Ok(basis.from_modal(&basis.apply_blocks(&blk, &basis.to_modal(&ms.x0))))
                    })?;
                }
                let dirs = basis.input_directions(ms, &y);
                let mut b = DMatrix::zeros(dirs.nrows(), dirs.ncols());
                for c in 0..dirs.ncols() {
                    let col = basis.apply_blocks(&blk, &dirs.column(c).clone_owned()) * dt;
                    b.set_column(c, &col);
                }
                blocks.push(blk);
                modal_inputs.push(b);
            }
            let h_modal = modal_sweep(basis.block_size(), &blocks, &modal_inputs);
            let h = basis.from_modal_cols(&h_modal);
            let inputs = modal_inputs.iter().map(|b| basis.from_modal_cols(b)).collect();
            Ok(LinearizedModel {
                transitions: Transitions::Modal { basis, blocks },
                inputs,
                h,
            })
        }
    }
}

/// Linearizes in continuous time, then discretizes. With `LeftEndpoint` the
/// input matrix is `Δt_k 𝐀_k B̄(t_k)`; with `Exact` it is
/// `∫ e^{(t_{k+1}−τ)Ā_k} B̄(τ) dτ` with `x̄(τ)` held on the nominal flow.
pub fn linearize_continuous_first(
    ms: &MomentSystem,
    ctrl: &ControlTrajectory,
    traj: &StateTrajectory,
    quadrature: Quadrature,
) -> Result<LinearizedModel> {
    linearize_continuous_first_with(ms, ctrl, traj, quadrature, Propagation::Dense)
}

pub fn linearize_continuous_first_with(
    ms: &MomentSystem,
    ctrl: &ControlTrajectory,
    traj: &StateTrajectory,
    quadrature: Quadrature,
    propagation: Propagation,
) -> Result<LinearizedModel> {
    match (propagation, quadrature) {
        (Propagation::Modal, Quadrature::LeftEndpoint) => linearize_discrete_first_with(ms, ctrl, traj, propagation),
        (Propagation::Dense, Quadrature::LeftEndpoint) => left_endpoint_dense(ms, ctrl, traj),
        (Propagation::Modal, Quadrature::Exact) => exact_modal(ms, ctrl, traj),
        (Propagation::Dense, Quadrature::Exact) => exact_dense(ms, ctrl, traj),
    }
}

/// `Δt_k e^{Δt_k Ā_k} ∂_u(Ā(u) x̄_k)`, with the input Jacobian read off the
/// affine generator rather than the stored `Bᵢ`.
fn left_endpoint_dense(ms: &MomentSystem, ctrl: &ControlTrajectory, traj: &StateTrajectory) -> Result<LinearizedModel> {
    let mut ak = Vec::with_capacity(ctrl.steps());
    let mut bk = Vec::with_capacity(ctrl.steps());
    for (k, &dt) in ctrl.grid.dt().iter().enumerate() {
        let u = ctrl.at(k);
        let abar = ms.generator(&u);
        let a = expm(&(&abar * dt))?;
        if k == 0 {
            check_nominal(ms, ctrl, traj, || Ok(&a * &ms.x0))?;
        }
        let x = &traj.states[k];
        let fx = &abar * x;
        let mut jac = DMatrix::zeros(ms.dim(), ms.m);
        for i in 0..ms.m {
            let mut up = u.clone();
            up[i] += 1.0;
            jac.set_column(i, &(ms.generator(&up) * x - &fx));
        }
        bk.push(&a * jac * dt);
        ak.push(a);
    }
    let mut lin = LinearizedModel {
        transitions: Transitions::Dense(ak),
        inputs: bk,
        h: DMatrix::zeros(0, 0),
    };
    lin.h = build_h(&lin);
    Ok(lin)
}

fn exact_modal(ms: &MomentSystem, ctrl: &ControlTrajectory, traj: &StateTrajectory) -> Result<LinearizedModel> {
    let basis = ModalBasis::new(ms);
    let n = basis.block_size();
    let mut blocks = Vec::with_capacity(ctrl.steps());
    let mut modal_inputs = Vec::with_capacity(ctrl.steps());
    for (k, &dt) in ctrl.grid.dt().iter().enumerate() {
        let pairs = basis.step_blocks_with_convolutions(ms, &ctrl.at(k), dt)?;
        let blk: Vec<_> = pairs.iter().map(|(p, _)| p.clone()).collect();
        if k == 0 {
            check_nominal(ms, ctrl, traj, || {
                Ok(basis.from_modal(&basis.apply_blocks(&blk, &basis.to_modal(&ms.x0))))
            })?;
        }
        let y = basis.to_modal(&traj.states[k]);
        let mut b = DMatrix::zeros(y.len(), ms.m);
        for (j, (_, conv)) in pairs.iter().enumerate() {
            for (i, c) in conv.iter().enumerate() {
                let seg = c * y.rows(j * n, n);
                b.view_mut((j * n, i), (n, 1)).copy_from(&seg);
            }
        }
        blocks.push(blk);
        modal_inputs.push(b);
    }
    let h_modal = modal_sweep(n, &blocks, &modal_inputs);
    let h = basis.from_modal_cols(&h_modal);
    let inputs = modal_inputs.iter().map(|b| basis.from_modal_cols(b)).collect();
    Ok(LinearizedModel {
        transitions: Transitions::Modal { basis, blocks },
        inputs,
        h,
    })
}

fn exact_dense(ms: &MomentSystem, ctrl: &ControlTrajectory, traj: &StateTrajectory) -> Result<LinearizedModel> {
    let d = ms.dim();
    let mut ak = Vec::with_capacity(ctrl.steps());
    let mut bk = Vec::with_capacity(ctrl.steps());
    for (k, &dt) in ctrl.grid.dt().iter().enumerate() {
        let abar = ms.generator(&ctrl.at(k));
        let a = expm(&(&abar * dt))?;
        if k == 0 {
            check_nominal(ms, ctrl, traj, || Ok(&a * &ms.x0))?;
        }
        let x = &traj.states[k];
        let mut b = DMatrix::zeros(d, ms.m);
        for (i, bi) in ms.b.iter().enumerate() {
            let mut aug = DMatrix::zeros(2 * d, 2 * d);
            aug.view_mut((0, 0), (d, d)).copy_from(&abar);
            aug.view_mut((d, d), (d, d)).copy_from(&abar);
            aug.view_mut((0, d), (d, d)).copy_from(bi);
            let e = expm(&(aug * dt))?;
            b.set_column(i, &(e.view((0, d), (d, d)) * x));
        }
        ak.push(a);
        bk.push(b);
    }
    let mut lin = LinearizedModel {
        transitions: Transitions::Dense(ak),
        inputs: bk,
        h: DMatrix::zeros(0, 0),
    };
    lin.h = build_h(&lin);
    Ok(lin)
}

/// `H = [𝐀_{K−1}⋯𝐀₁𝐁₀, …, 𝐀_{K−1}𝐁_{K−2}, 𝐁_{K−1}]` by one backward sweep.
pub fn build_h(lin: &LinearizedModel) -> DMatrix<f64> {
    let k_steps = lin.steps();
    let m = lin.inputs_per_step();
    let d = lin.inputs.first().map_or(0, |b| b.nrows());
    match &lin.transitions {
        Transitions::Dense(ak) => {
            let mut h = DMatrix::zeros(d, m * k_steps);
            let mut running = DMatrix::<f64>::identity(d, d);
            for j in (0..k_steps).rev() {
                h.columns_mut(j * m, m).copy_from(&(&running * &lin.inputs[j]));
                if j > 0 {
                    running = &running * &ak[j];
                }
            }
            h
        }
        Transitions::Modal { basis, blocks } => {
            let modal_inputs: Vec<_> = lin.inputs.iter().map(|b| basis.to_modal_cols(b)).collect();
            let h_modal = modal_sweep(basis.block_size(), blocks, &modal_inputs);
            basis.from_modal_cols(&h_modal)
        }
    }
}

fn modal_sweep(n: usize, blocks: &[Vec<DMatrix<f64>>], inputs: &[DMatrix<f64>]) -> DMatrix<f64> {
    let k_steps = inputs.len();
    if k_steps == 0 {
        return DMatrix::zeros(0, 0);
    }
    let m = inputs[0].ncols();
    let d = inputs[0].nrows();
    let nblocks = d / n;
    let mut h = DMatrix::zeros(d, m * k_steps);
    for b in 0..nblocks {
        let mut running = DMatrix::<f64>::identity(n, n);
        for j in (0..k_steps).rev() {
            let seg = &running * inputs[j].view((b * n, 0), (n, m));
            h.view_mut((b * n, j * m), (n, m)).copy_from(&seg);
            if j > 0 {
                running = &running * &blocks[j][b];
            }
        }
    }
    h
}
