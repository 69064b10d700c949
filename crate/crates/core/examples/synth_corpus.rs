//! Writes a synthetic image/mask corpus and prints its manifest summary.
//!
//! `cargo run --release -p cto-core --example synth_corpus -- [dir] [images]`

use std::path::PathBuf;

use cto_core::data::{load_pairs, synth_generate, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data/example".into()));
    let n_images = args.next().map_or(Ok(16), |s| s.parse())?;
    let spec = SynthSpec { n_images, ..SynthSpec::default() };
    let manifest = synth_generate(&spec, &dir)?;
    println!("wrote {} pairs to {} (spec hash {})", manifest.entries.len(), dir.display(), spec.hash());
    let data = load_pairs(&dir)?;
    for s in data.samples.iter().take(5) {
        let fg = s.mask.iter().filter(|&&v| v != 0).count();
        println!("{}  {}x{}  foreground {:.1}%", s.id, s.width, s.height, 100.0 * fg as f64 / s.mask.len() as f64);
    }
    Ok(())
}
