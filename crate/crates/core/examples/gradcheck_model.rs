//! Finite-difference check of the full loss in f64, then the same check
//! with one analytic gradient deliberately scaled to show it is caught.
//!
//! `cargo run --release -p cto-core --example gradcheck_model`

use cto_core::config::RunConfig;
use cto_core::harness::cmd_gradcheck;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = RunConfig::default();
    let report = cmd_gradcheck(&cfg)?;
    println!(
        "passed {}  max rel err {:.3e} over {} coordinates",
        report["passed"],
        report["max_rel_err"].as_f64().unwrap_or(f64::NAN),
        report["checked_coords"]
    );
    cfg.gradcheck.fault_scale = Some(1.5);
    match cmd_gradcheck(&cfg) {
        Ok(_) => println!("fault went undetected"),
        Err(e) => println!("fault detected: {}", e.to_string().lines().next().unwrap_or_default()),
    }
    Ok(())
}
