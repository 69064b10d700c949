//! Saves a model and its optimizer state, reloads both into a model built
//! from another seed, and confirms the forward pass is bit-identical.
//!
//! `cargo run --release -p cto-core --example checkpoint_roundtrip -- [path]`

use cto_core::checkpoint::Checkpoint;
use cto_core::data::{image_tensor, SynthSpec};
use cto_core::model::{Model, ModelConfig};
use cto_core::optim::{Adam, AdamConfig};
use cto_tensor::BnMode;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "example.ckpt".into());
    let cfg = ModelConfig::default();
    let model = Model::<f32>::build(&cfg)?;
    let adam = Adam::new(AdamConfig::default(), &model.store);
    Checkpoint::capture(&model.store, Some(&adam)).save(path.as_ref())?;

    let mut other = Model::<f32>::build(&ModelConfig { seed: cfg.seed + 1, ..cfg })?;
    let mut other_adam = Adam::new(AdamConfig::default(), &other.store);
    Checkpoint::load(path.as_ref())?.restore(&mut other.store, Some(&mut other_adam))?;

    let sample = SynthSpec { n_images: 1, ..SynthSpec::default() }.generate_one(0).sample;
    let x = image_tensor::<f32>(&[&sample], &[])?;
    let a = model.forward(&x, BnMode::Eval)?;
    let b = other.forward(&x, BnMode::Eval)?;
    let same = a.final_logits().data().iter().zip(b.final_logits().data()).all(|(p, q)| p.to_bits() == q.to_bits());
    println!("{} parameters saved to {path}; reloaded forward bit-identical: {same}", model.num_params());
    Ok(())
}
