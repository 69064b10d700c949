//! Per-component MACs of one forward pass, measured and in closed form,
//! plus stitched versus dense token mixing per rate.
//!
//! `cargo run --release -p cto-core --example flops_table -- [size]`

use cto_core::harness::{flops_report, render_flops};
use cto_core::model::ModelConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let size = std::env::args().nth(1).map_or(Ok(64), |s| s.parse())?;
    let cfg = ModelConfig { input_size: (size, size), ..ModelConfig::default() };
    print!("{}", render_flops(&flops_report(&cfg)?));
    Ok(())
}
