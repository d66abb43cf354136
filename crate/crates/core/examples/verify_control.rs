//! Checks a control file against a bundled configuration on a member grid and
//! writes contours.csv next to it.
//!
//!     cargo run --release --example verify_control -- configs/bloch_a.cfg out/bloch_a/control.csv

use std::path::PathBuf;

use ensemble_pulse::config::RunConfig;
use ensemble_pulse::io::{contours_csv, read_control};
use ensemble_pulse::verify::{grid_verify, GridSpec, Spacing};

fn main() -> ensemble_pulse::Result<()> {
    let mut args = std::env::args().skip(1);
    let (Some(cfg), Some(control)) = (args.next(), args.next()) else {
        eprintln!("usage: verify_control <config> <control.csv>");
        std::process::exit(1);
    };
    let cfg = RunConfig::load(&PathBuf::from(cfg))?;
    let sys = cfg.build_system()?;
    let control = PathBuf::from(control);
    let ctrl = read_control(&control, &cfg.time_grid()?, sys.m())?;

    for spacing in [Spacing::Uniform, Spacing::Chebyshev] {
        let grid = GridSpec::new(cfg.grid.n_alpha_pts, cfg.grid.n_beta_pts, spacing)?;
        let r = grid_verify(&sys, &ctrl, &grid)?;
        println!("{spacing:?}: max {:.3e} mean {:.3e}", r.max_error, r.mean_error);
    }
    let r = grid_verify(&sys, &ctrl, &cfg.grid)?;
    let out = control.with_file_name("contours.csv");
    std::fs::write(&out, contours_csv(&r))?;
    println!("wrote {}", out.display());
    Ok(())
}
