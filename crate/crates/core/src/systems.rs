//! Built-in ensemble systems: the Bloch equations without relaxation and the
//! truncated Raman-Nath momentum ladder, plus a generic constructor.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::moments::ParamInterval;

/// Amplitude and slew limits shared by every control channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlBounds {
    pub u_min: f64,
    pub u_max: f64,
    /// Lower limit on `(U_{k+1} − U_k)/Δt_k`.
    pub du_min: f64,
    pub du_max: f64,
}

impl Default for ControlBounds {
    fn default() -> Self {
        Self {
            u_min: f64::NEG_INFINITY,
            u_max: f64::INFINITY,
            du_min: f64::NEG_INFINITY,
            du_max: f64::INFINITY,
        }
    }
}

impl ControlBounds {
    pub fn amplitude(u_min: f64, u_max: f64) -> Self {
        Self {
            u_min,
            u_max,
            ..Self::default()
        }
    }

    pub fn has_amplitude(&self) -> bool {
        self.u_min.is_finite() || self.u_max.is_finite()
    }

    pub fn has_slew(&self) -> bool {
        self.du_min.is_finite() || self.du_max.is_finite()
    }

    pub fn validate(&self) -> Result<()> {
        if self.u_min.is_nan() || self.u_max.is_nan() || self.du_min.is_nan() || self.du_max.is_nan() {
            return Err(Error::NonFinite("control bounds"));
        }
        if self.u_min > self.u_max {
            return Err(Error::config("bounds", "u_min exceeds u_max"));
        }
        if self.du_min > self.du_max {
            return Err(Error::config("bounds", "du_min exceeds du_max"));
        }
        Ok(())
    }

    /// Zero when admissible, otherwise the midpoint (or the finite end of a half-line).
    pub fn default_initial_value(&self) -> f64 {
        if self.u_min <= 0.0 && 0.0 <= self.u_max {
            0.0
        } else if self.u_min.is_finite() && self.u_max.is_finite() {
            0.5 * (self.u_min + self.u_max)
        } else if self.u_min.is_finite() {
            self.u_min
        } else {
            self.u_max
        }
    }
}

/// `Ẋ = α 𝒜 X + β Σᵢ Uᵢ ℬᵢ X` for `(α, β)` in a rectangle.
#[derive(Debug, Clone)]
pub struct EnsembleSystem {
    pub a: DMatrix<f64>,
    pub b: Vec<DMatrix<f64>>,
    pub alpha: ParamInterval,
    pub beta: ParamInterval,
    pub x0: DVector<f64>,
    pub xt: DVector<f64>,
    pub bounds: ControlBounds,
}

impl EnsembleSystem {
    pub fn from_matrices(
        a: DMatrix<f64>,
        b: Vec<DMatrix<f64>>,
        alpha: ParamInterval,
        beta: ParamInterval,
        x0: DVector<f64>,
        xt: DVector<f64>,
        bounds: ControlBounds,
    ) -> Result<Self> {
        let sys = Self {
            a,
            b,
            alpha,
            beta,
            x0,
            xt,
            bounds,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        if self.a.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "drift generator columns",
                expected: n,
                found: self.a.ncols(),
            });
        }
        if self.b.is_empty() {
            return Err(Error::DimensionMismatch {
                context: "number of control generators",
                expected: 1,
                found: 0,
            });
        }
        for bi in &self.b {
            if bi.nrows() != n || bi.ncols() != n {
                return Err(Error::DimensionMismatch {
                    context: "control generator",
                    expected: n,
                    found: if bi.nrows() != n { bi.nrows() } else { bi.ncols() },
                });
            }
        }
        for (v, ctx) in [(&self.x0, "initial state"), (&self.xt, "target state")] {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    context: ctx,
                    expected: n,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(ctx));
            }
        }
        if self.a.iter().chain(self.b.iter().flatten()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("generators"));
        }
        self.bounds.validate()
    }

    /// Member generator `α𝒜 + β Σᵢ uᵢ ℬᵢ`.
    pub fn member_generator(&self, alpha: f64, beta: f64, u: &[f64]) -> DMatrix<f64> {
        let mut g = &self.a * alpha;
        for (bi, &ui) in self.b.iter().zip(u) {
            if ui != 0.0 {
                g += bi * (beta * ui);
            }
        }
        g
    }
}

/// Bloch generators: `𝒜` rotates about z, `ℬ₁` about y, `ℬ₂` about x.
pub fn bloch_generators() -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(3, 3, &[
        0.0, -1.0, 0.0,
        1.0,  0.0, 0.0,
        0.0,  0.0, 0.0,
    ]);
    #[rustfmt::skip]
    let b1 = DMatrix::from_row_slice(3, 3, &[
         0.0, 0.0, 1.0,
         0.0, 0.0, 0.0,
        -1.0, 0.0, 0.0,
    ]);
    #[rustfmt::skip]
    let b2 = DMatrix::from_row_slice(3, 3, &[
        0.0, 0.0,  0.0,
        0.0, 0.0, -1.0,
        0.0, 1.0,  0.0,
    ]);
    (a, vec![b1, b2])
}

pub fn bloch_system(
    alpha: ParamInterval,
    beta: ParamInterval,
    x0: [f64; 3],
    xt: [f64; 3],
    bounds: ControlBounds,
) -> EnsembleSystem {
    let (a, b) = bloch_generators();
    EnsembleSystem {
        a,
        b,
        alpha,
        beta,
        x0: DVector::from_row_slice(&x0),
        xt: DVector::from_row_slice(&xt),
        bounds,
    }
}

/// Complex Hamiltonian pieces of the Raman-Nath ladder and their real embedding size.
#[derive(Debug, Clone)]
pub struct ComplexEmbedding {
    pub a0: DMatrix<f64>,
    pub b0: DMatrix<f64>,
    pub embedded_dim: usize,
}

impl ComplexEmbedding {
    /// Kinetic term `ω_r diag(0, 4, …, (2N')²)` and the coupling ladder.
    pub fn raman_nath(n_max: usize, omega_r: f64) -> Self {
        let size = n_max + 1;
        let a0 = DMatrix::from_fn(size, size, |i, j| {
            if i == j {
                omega_r * (2.0 * i as f64).powi(2)
            } else {
                0.0
            }
        });
        let mut b0 = DMatrix::zeros(size, size);
        for k in 0..n_max {
            let v = if k == 0 { std::f64::consts::SQRT_2 / 2.0 } else { 0.5 };
            b0[(k, k + 1)] = v;
            b0[(k + 1, k)] = v;
        }
        Self {
            a0,
            b0,
            embedded_dim: 2 * size,
        }
    }

    /// Real generators acting on `[Re 𝒳; Im 𝒳]`.
    pub fn embed(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        embed_complex(&self.a0, &self.b0)
    }
}

fn block_skew(m: &DMatrix<f64>) -> DMatrix<f64> {
    let s = m.nrows();
    let mut out = DMatrix::zeros(2 * s, 2 * s);
    out.view_mut((0, s), (s, s)).copy_from(m);
    out.view_mut((s, 0), (s, s)).copy_from(&(-m));
    out
}

/// Splits `−i(α𝒜₀ + Uβℬ₀)` into real and imaginary parts: each symmetric
/// `M` becomes `[[0, M], [−M, 0]]`.
pub fn embed_complex(a0: &DMatrix<f64>, b0: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    for (m, name) in [(a0, "A0"), (b0, "B0")] {
        if !m.is_square() {
            return Err(Error::NotSymmetric(name));
        }
        if (m - m.transpose()).abs().max() > 1e-12 * m.abs().max().max(1.0) {
            return Err(Error::NotSymmetric(name));
        }
    }
    if a0.nrows() != b0.nrows() {
        return Err(Error::DimensionMismatch {
            context: "complex embedding",
            expected: a0.nrows(),
            found: b0.nrows(),
        });
    }
    Ok((block_skew(a0), block_skew(b0)))
}

/// Amplitude window `[0, 10 n']` used for the splitting examples.
pub fn raman_nath_default_bounds(target_order: usize) -> ControlBounds {
    ControlBounds::amplitude(0.0, 10.0 * target_order as f64)
}

/// Raman-Nath ladder truncated at `C_{2N'}` with target `|±2n'ħk⟩`.
/// `bounds` defaults to [`raman_nath_default_bounds`].
pub fn raman_nath_system(
    n_max: usize,
    target_order: usize,
    alpha: ParamInterval,
    beta: ParamInterval,
    omega_r: f64,
    bounds: Option<ControlBounds>,
) -> Result<EnsembleSystem> {
    if target_order < 1 || target_order > n_max {
        return Err(Error::InvalidMomentumIndex {
            index: target_order,
            max: n_max,
        });
    }
    let emb = ComplexEmbedding::raman_nath(n_max, omega_r);
    let (a, b) = emb.embed()?;
    let n = emb.embedded_dim;
    let mut x0 = DVector::zeros(n);
    x0[0] = 1.0;
    let mut xt = DVector::zeros(n);
    xt[target_order] = 1.0;
    EnsembleSystem::from_matrices(
        a,
        vec![b],
        alpha,
        beta,
        x0,
        xt,
        bounds.unwrap_or_else(|| raman_nath_default_bounds(target_order)),
    )
}
