//! Matrix exponential and the two propagation paths for the lifted system.
//!
//!     cargo run --release --example propagation

use std::time::Instant;

use ensemble_pulse::dynamics::{expm, simulate_with, ControlTrajectory, Propagation, TimeGrid};
use ensemble_pulse::moments::{lift, ParamInterval};
use ensemble_pulse::systems::{bloch_generators, bloch_system, ControlBounds};
use nalgebra::DMatrix;

fn main() -> ensemble_pulse::Result<()> {
    // rotation about z by θ
    let (a, _) = bloch_generators();
    let theta = 2.5;
    let r = expm(&(&a * theta))?;
    let exact = DMatrix::from_row_slice(3, 3, &[
        theta.cos(), -theta.sin(), 0.0,
        theta.sin(), theta.cos(), 0.0,
        0.0, 0.0, 1.0,
    ]);
    println!("expm rotation error {:.2e}", (&r - &exact).amax());

    let sys = bloch_system(
        ParamInterval::new(-1.0, 1.0)?,
        ParamInterval::new(0.9, 1.1)?,
        [0.0, 0.0, 1.0],
        [1.0, 0.0, 0.0],
        ControlBounds::default(),
    );
    let ms = lift(&sys, 6, 4, None)?;
    let grid = TimeGrid::uniform(1.0, 300)?;
    let u = DMatrix::from_fn(300, 2, |k, i| ((k + 7 * i) as f64 * 0.05).sin());
    let ctrl = ControlTrajectory::new(grid, u)?;

    let t = Instant::now();
    let dense = simulate_with(&ms, &ctrl, Propagation::Dense)?;
    let t_dense = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let modal = simulate_with(&ms, &ctrl, Propagation::Modal)?;
    let t_modal = t.elapsed().as_secs_f64();
    println!(
        "moment dim {}: dense {:.3} s, modal {:.3} s, terminal gap {:.2e}",
        ms.dim(),
        t_dense,
        t_modal,
        (dense.terminal() - modal.terminal()).amax()
    );
    Ok(())
}
