//! Sobel responses of a synthetic image's mask, printed as a coarse
//! gradient-magnitude map.
//!
//! `cargo run --release -p cto-core --example sobel_edges`

use cto_core::boundary::sobel_gradients;
use cto_core::data::SynthSpec;
use cto_tensor::Tensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SynthSpec { n_images: 1, height: 32, width: 32, ..SynthSpec::default() };
    let sample = spec.generate_one(0).sample;
    let mask: Vec<f64> = sample.mask.iter().map(|&v| f64::from(v.min(1))).collect();
    let (mx, my) = sobel_gradients(&Tensor::new(mask, &[1, 1, 32, 32])?)?;
    let shades = [' ', '.', ':', '+', '#'];
    for r in 0..32 {
        let line: String = (0..32)
            .map(|c| {
                let i = r * 32 + c;
                let m = mx.data()[i].hypot(my.data()[i]);
                shades[((m / 1.5).round() as usize).min(4)]
            })
            .collect();
        println!("{line}");
    }
    Ok(())
}
