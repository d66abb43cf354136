//! Lifts the Bloch ensemble into Legendre moments and checks the truncation
//! against quadrature of exact member simulations as `N_α` grows.
//!
//!     cargo run --release --example moment_lift

use ensemble_pulse::dynamics::{ControlTrajectory, TimeGrid};
use ensemble_pulse::moments::{default_quadrature_points, lift, ParamInterval};
use ensemble_pulse::systems::{bloch_system, ControlBounds};
use ensemble_pulse::verify::cross_validate_moments;
use nalgebra::DMatrix;

fn main() -> ensemble_pulse::Result<()> {
    let sys = bloch_system(
        ParamInterval::new(-1.0, 1.0)?,
        ParamInterval::new(0.9, 1.1)?,
        [0.0, 0.0, 1.0],
        [1.0, 0.0, 0.0],
        ControlBounds::default(),
    );
    let grid = TimeGrid::uniform(1.0, 200)?;
    let u = DMatrix::from_fn(200, 2, |k, i| {
        let t = grid.times()[k];
        if i == 0 { 2.0 * (3.0 * t).sin() } else { 1.5 * (2.0 * t).cos() }
    });
    let ctrl = ControlTrajectory::new(grid, u)?;

    println!("{:>4} {:>4} {:>6} {:>12} {:>12}", "N_a", "N_b", "dim", "coeff", "recon");
    for n_alpha in [2, 4, 6, 8, 10] {
        let ms = lift(&sys, n_alpha, 6, None)?;
        let pts = default_quadrature_points(n_alpha, 6);
        let d = cross_validate_moments(&sys, &ms, &ctrl, pts)?;
        println!("{:>4} {:>4} {:>6} {:>12.3e} {:>12.3e}", n_alpha, 6, ms.dim(), d.coefficient, d.reconstruction);
    }
    Ok(())
}
