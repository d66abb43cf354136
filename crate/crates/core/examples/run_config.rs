//! Loads a JSON run configuration and prints the resolved problem, without
//! solving anything.
//!
//!     cargo run --example run_config -- configs/raman_nath_n2.cfg

use ensemble_pulse::config::{defaulted_keys, RunConfig};

fn main() -> ensemble_pulse::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "configs/bloch_a.cfg".into());
    let text = std::fs::read_to_string(&path)?;
    let cfg = RunConfig::from_json(&text)?;
    cfg.validate()?;
    let sys = cfg.build_system()?;
    let ms = cfg.lift(&sys)?;
    println!("{path}");
    println!("  n = {}, m = {}, moment dim = {}", sys.n(), sys.m(), ms.dim());
    println!("  K = {}, stacked dynamics rows = {}", cfg.steps, ms.stacked_dynamics_rows(cfg.steps));
    println!("  state columns: {}", cfg.system.layout(sys.n()).columns.join(","));
    println!("  defaults applied: {}", defaulted_keys(&text)?.join(", "));
    println!("{}", serde_json::to_string_pretty(&cfg.resolved()).expect("config serializes"));
    Ok(())
}
