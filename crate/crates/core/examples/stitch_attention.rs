//! Phase stitching of a 4x4 grid, grouped attention on a random map, and
//! token-mixing cost per stitch rate.
//!
//! `cargo run --release -p cto-core --example stitch_attention`

use cto_core::nn::{Builder, Ctx};
use cto_core::stitch::{count_attention_macs, group_mhsa, stitch, unstitch, AttentionParams};
use cto_tensor::{BnMode, ParamStore, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = Tensor::<f64>::new((1..=16).map(f64::from).collect(), &[1, 1, 4, 4])?;
    let g = stitch(&grid, 2)?;
    for (p, phase) in g.tensor.data().chunks(4).enumerate() {
        println!("phase ({}, {}): {phase:?}", p / 2, p % 2);
    }

    let mut store = ParamStore::<f64>::new();
    let params = AttentionParams::new(&mut Builder::new(&mut store, 0), 8, 2, 4)?;
    let x = Tensor::<f64>::new((0..8 * 16 * 16).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect(), &[1, 8, 16, 16])?;
    let ctx = Ctx::new(&store, BnMode::Eval);
    let y = unstitch(&group_mhsa(&ctx, &stitch(&x, 4)?, &params)?, 4)?;
    println!("attention output {:?}, mean {:.4}", y.dims(), y.mean_all().item());

    let macs = count_attention_macs(16, 16, 8, &[1, 2, 4, 8, 16])?;
    println!("dense QK^T MACs {}", macs.dense);
    for r in &macs.per_rate {
        println!("rate {:>2}: {:>8} MACs, {:>5}x fewer", r.rate, r.measured, r.reduction);
    }
    Ok(())
}
