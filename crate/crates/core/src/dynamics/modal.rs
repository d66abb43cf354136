//! Decoupled evaluation of lifted propagators.
//!
//! With `C_α = V_α diag(λ_α) V_α'` and `C_β = V_β diag(λ_β) V_β'`, the orthogonal
//! change of coordinates `Q = V_α ⊗ V_β ⊗ I_n` turns
//! `A + Σ uᵢ Bᵢ` into a block diagonal matrix whose `(p, q)` block is
//! `λ_α,p 𝒜 + λ_β,q Σ uᵢ ℬᵢ`. Every exponential and every product of step
//! propagators then reduces to `(N_α+1)(N_β+1)` independent `n × n` problems.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{expm, ControlTrajectory, StateTrajectory};
use crate::error::Result;
use crate::moments::MomentSystem;

/// A block propagator and its per-input convolutions.
pub type BlockStep = (DMatrix<f64>, Vec<DMatrix<f64>>);

#[derive(Debug, Clone)]
pub struct ModalBasis {
    v_alpha: DMatrix<f64>,
    v_beta: DMatrix<f64>,
    lambda_alpha: Vec<f64>,
    lambda_beta: Vec<f64>,
    n: usize,
}

impl ModalBasis {
    pub fn new(ms: &MomentSystem) -> Self {
        let ea = SymmetricEigen::new(ms.c_alpha.clone());
        let eb = SymmetricEigen::new(ms.c_beta.clone());
        Self {
            v_alpha: ea.eigenvectors,
            v_beta: eb.eigenvectors,
            lambda_alpha: ea.eigenvalues.iter().copied().collect(),
            lambda_beta: eb.eigenvalues.iter().copied().collect(),
            n: ms.n,
        }
    }

    /// Number of decoupled blocks.
    pub fn blocks(&self) -> usize {
        self.lambda_alpha.len() * self.lambda_beta.len()
    }

    pub fn block_size(&self) -> usize {
        self.n
    }

    /// Parameter pairs `(α, β)` of the decoupled members in block order.
    pub fn nodes(&self) -> Vec<(f64, f64)> {
        self.lambda_alpha
            .iter()
            .flat_map(|&a| self.lambda_beta.iter().map(move |&b| (a, b)))
            .collect()
    }

    fn apply(&self, wa: &DMatrix<f64>, wb: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
        let na = self.lambda_alpha.len();
        let nb = self.lambda_beta.len();
        let n = self.n;
        let mut tmp = vec![0.0; x.len()];
        for pp in 0..na {
            for p in 0..na {
                let w = wa[(pp, p)];
                if w == 0.0 {
                    continue;
                }
                for q in 0..nb {
                    let src = (p * nb + q) * n;
                    let dst = (pp * nb + q) * n;
                    for i in 0..n {
                        tmp[dst + i] += w * x[src + i];
                    }
                }
            }
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        for p in 0..na {
            for qq in 0..nb {
                for q in 0..nb {
                    let w = wb[(qq, q)];
                    if w == 0.0 {
                        continue;
                    }
                    let src = (p * nb + q) * n;
                    let dst = (p * nb + qq) * n;
                    for i in 0..n {
                        out[dst + i] += w * tmp[src + i];
                    }
                }
            }
        }
    }

    /// `Q' x`.
    pub fn to_modal(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        self.apply(
            &self.v_alpha.transpose(),
            &self.v_beta.transpose(),
            x.as_slice(),
            out.as_mut_slice(),
        );
        out
    }

    /// `Q y`.
    pub fn from_modal(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(y.len());
        self.apply(&self.v_alpha, &self.v_beta, y.as_slice(), out.as_mut_slice());
        out
    }

    /// `Q Y`, column by column.
    pub fn from_modal_cols(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(y.nrows(), y.ncols());
        for c in 0..y.ncols() {
            let col: Vec<f64> = y.column(c).iter().copied().collect();
            let mut dst = vec![0.0; y.nrows()];
            self.apply(&self.v_alpha, &self.v_beta, &col, &mut dst);
            out.column_mut(c).copy_from_slice(&dst);
        }
        out
    }

    /// `Q' Y`, column by column.
    pub fn to_modal_cols(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let wa = self.v_alpha.transpose();
        let wb = self.v_beta.transpose();
        let mut out = DMatrix::zeros(y.nrows(), y.ncols());
        for c in 0..y.ncols() {
            let col: Vec<f64> = y.column(c).iter().copied().collect();
            let mut dst = vec![0.0; y.nrows()];
            self.apply(&wa, &wb, &col, &mut dst);
            out.column_mut(c).copy_from_slice(&dst);
        }
        out
    }

    /// Step propagators `exp(Δt(λ_α 𝒜 + λ_β Σ uᵢ ℬᵢ))` for every block.
    pub fn step_blocks(&self, ms: &MomentSystem, u: &[f64], dt: f64) -> Result<Vec<DMatrix<f64>>> {
        self.nodes()
            .into_iter()
            .map(|(la, lb)| {
                let mut g = &ms.member_a * (la * dt);
                for (bi, &ui) in ms.member_b.iter().zip(u) {
                    if ui != 0.0 {
                        g += bi * (lb * ui * dt);
                    }
                }
                expm(&g)
            })
            .collect()
    }

    /// Block propagators together with the exact input convolutions
    /// `∫₀^Δt e^{(Δt−s)G} λ_β ℬᵢ e^{sG} ds` of every block, read off one
    /// augmented exponential per block.
    pub fn step_blocks_with_convolutions(
        &self,
        ms: &MomentSystem,
        u: &[f64],
        dt: f64,
    ) -> Result<Vec<BlockStep>> {
        let n = self.n;
        let m = ms.member_b.len();
        self.nodes()
            .into_iter()
            .map(|(la, lb)| {
                let mut g = &ms.member_a * (la * dt);
                for (bi, &ui) in ms.member_b.iter().zip(u) {
                    if ui != 0.0 {
                        g += bi * (lb * ui * dt);
                    }
                }
                let size = (m + 1) * n;
                let mut aug = DMatrix::zeros(size, size);
                aug.view_mut((0, 0), (n, n)).copy_from(&g);
                for (i, bi) in ms.member_b.iter().enumerate() {
                    let o = (i + 1) * n;
                    aug.view_mut((o, o), (n, n)).copy_from(&g);
                    aug.view_mut((0, o), (n, n)).copy_from(&(bi * (lb * dt)));
                }
                let e = expm(&aug)?;
                let prop = e.view((0, 0), (n, n)).clone_owned();
                let conv = (0..m)
                    .map(|i| e.view((0, (i + 1) * n), (n, n)).clone_owned())
                    .collect();
                Ok((prop, conv))
            })
            .collect()
    }

    /// Applies block propagators to a modal vector.
    pub fn apply_blocks(&self, blocks: &[DMatrix<f64>], y: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let mut out = DVector::zeros(y.len());
        for (j, blk) in blocks.iter().enumerate() {
            let seg = blk * y.rows(j * n, n);
            out.rows_mut(j * n, n).copy_from(&seg);
        }
        out
    }

    /// Assembles the dense `D × D` matrix `Q blockdiag(blocks) Q'`.
    pub fn dense_from_blocks(&self, blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
        let d = blocks.len() * self.n;
        let mut bd = DMatrix::zeros(d, d);
        for (j, blk) in blocks.iter().enumerate() {
            bd.view_mut((j * self.n, j * self.n), (self.n, self.n)).copy_from(blk);
        }
        let left = self.from_modal_cols(&bd);
        self.from_modal_cols(&left.transpose()).transpose()
    }

    /// `Q' Bᵢ x` evaluated blockwise as `λ_β,q ℬᵢ y_{(p,q)}` with `y = Q' x`.
    pub fn input_directions(&self, ms: &MomentSystem, y: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n;
        let nodes = self.nodes();
        let mut out = DMatrix::zeros(y.len(), ms.m);
        for (i, bi) in ms.member_b.iter().enumerate() {
            for (j, &(_, lb)) in nodes.iter().enumerate() {
                let seg = bi * y.rows(j * n, n) * lb;
                out.view_mut((j * n, i), (n, 1)).copy_from(&seg);
            }
        }
        out
    }

    pub fn simulate(&self, ms: &MomentSystem, ctrl: &ControlTrajectory) -> Result<StateTrajectory> {
        let mut states = Vec::with_capacity(ctrl.steps() + 1);
        states.push(ms.x0.clone());
        let mut y = self.to_modal(&ms.x0);
        for (k, &dt) in ctrl.grid.dt().iter().enumerate() {
            let blocks = self.step_blocks(ms, &ctrl.at(k), dt)?;
            y = self.apply_blocks(&blocks, &y);
            states.push(self.from_modal(&y));
        }
        Ok(StateTrajectory { states })
    }
}
