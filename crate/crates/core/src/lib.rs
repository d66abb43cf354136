//! Minimum-energy, robust pulse synthesis for two-parameter bilinear ensembles.
//!
//! An ensemble `ẋ = (α A + β Σ uᵢ Bᵢ) x` over `(α, β) ∈ [α₁, α₂] × [β₁, β₂]`
//! is lifted to a finite system of Legendre moments ([`moments`]), propagated
//! exactly under piecewise-constant controls ([`dynamics`]), and steered by a
//! two-stage sequence of quadratic programs ([`synth`], [`qpcore`]). The
//! resulting pulse is checked against individual ensemble members ([`verify`]).
//! [`config`], [`io`] and [`cli`] bind this to files and a command line.

pub mod cli;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod moments;
pub mod qpcore;
pub mod synth;
pub mod systems;
pub mod verify;

pub use error::{Error, Result};
