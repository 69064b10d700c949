//! Trains the toy network on an in-memory synthetic corpus and reports
//! train and held-out Dice.
//!
//! `cargo run --release -p cto-core --example train_toy -- [epochs] [images]`

use cto_core::config::RunConfig;
use cto_core::data::{Dataset, SynthSpec};
use cto_core::train::train_fold;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(Ok(30), |s| s.parse())?;
    let images = args.next().map_or(Ok(200), |s| s.parse())?;
    let mut cfg = RunConfig::default();
    cfg.train.epochs = epochs;
    cfg.train.batch_size = 8;
    cfg.optim.lr = 2e-3;
    let spec = SynthSpec { n_images: images, ..SynthSpec::default() };
    let data = Dataset {
        samples: spec.generate()?.into_iter().map(|g| g.sample).collect(),
        ..Dataset::default()
    };
    let outcome = train_fold(&cfg, &data, 0, None, true)?;
    println!(
        "train dice {:.4}  held-out dice {:.4}  (best epoch {})",
        outcome.train_metrics.dice(),
        outcome.val_metrics.dice(),
        outcome.best_epoch
    );
    Ok(())
}
