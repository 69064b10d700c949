//! Trains the six encoder/boundary variants on one fold of a small
//! synthetic corpus and prints the comparison table.
//!
//! `cargo run --release -p cto-core --example ablation_table -- [epochs] [images]`

use cto_core::config::RunConfig;
use cto_core::data::{Dataset, SynthSpec};
use cto_core::harness::{render_ablation, run_ablation};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(Ok(3), |s| s.parse())?;
    let images = args.next().map_or(Ok(60), |s| s.parse())?;
    let mut cfg = RunConfig::default();
    cfg.train.epochs = epochs;
    cfg.train.batch_size = 8;
    cfg.optim.lr = 2e-3;
    let spec = SynthSpec { n_images: images, ..SynthSpec::default() };
    let data = Dataset {
        samples: spec.generate()?.into_iter().map(|g| g.sample).collect(),
        ..Dataset::default()
    };
    let rows = run_ablation(&cfg, &data, true)?;
    print!("{}", render_ablation(&rows));
    Ok(())
}
