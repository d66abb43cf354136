//! First-order Bragg splitting of a Raman-Nath atom ensemble.
//!
//! Steers |0ħk⟩ into the symmetric superposition of |±2ħk⟩ for detuning
//! α ∈ [0.95, 1.05] and coupling β ∈ [0.9, 1.1] with a non-negative optical
//! lattice amplitude. Pass a step count to shorten the run.
//!
//!     cargo run --release --example raman_nath [steps]

use ensemble_pulse::config::RunConfig;
use ensemble_pulse::synth::synthesize;
use ensemble_pulse::verify::grid_verify;

fn main() -> ensemble_pulse::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/raman_nath_n1.cfg");
    let mut cfg = RunConfig::load(path.as_ref())?;
    if let Some(k) = std::env::args().nth(1) {
        cfg.steps = k.parse().expect("steps must be an integer");
    }
    let sys = cfg.build_system()?;
    let ms = cfg.lift(&sys)?;
    println!("state dim {}, moment dim {}, K = {}", sys.n(), ms.dim(), cfg.steps);

    let report = synthesize(&ms, &cfg.time_grid()?, &cfg.solver)?;
    println!(
        "moment error {:.3e} -> {:.3e}, energy {:.4e}, u in [{:.3}, {:.3}]",
        report.initial_error,
        report.terminal_error(&ms),
        report.final_control.energy(),
        report.final_control.u.min(),
        report.final_control.u.max()
    );
    let check = grid_verify(&sys, &report.final_control, &cfg.grid)?;
    let (ci, cj) = (cfg.grid.n_alpha_pts / 2, cfg.grid.n_beta_pts / 2);
    println!(
        "{}x{} grid: max {:.3e}, mean {:.3e}, center {:.3e}",
        cfg.grid.n_alpha_pts,
        cfg.grid.n_beta_pts,
        check.max_error,
        check.mean_error,
        check.at(ci, cj).terminal_error
    );
    Ok(())
}
