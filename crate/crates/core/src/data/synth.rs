//! Seeded synthetic corpus of lesion-like blobs on textured backgrounds.
//!
//! Every sample draws from its own `ChaCha8Rng` seeded with
//! `seed ^ index`, so samples are independent of generation order and of the
//! number of worker threads.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::dataset::{Manifest, Sample, MANIFEST_FILE, SPEC_FILE};
use super::pnm::{self, PnmKind};
use crate::error::{CtoError, Result};

/// Supersampling grid per pixel side for anti-aliased coverage.
pub const SUPERSAMPLE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKinds {
    Ellipse,
    Blob,
    /// Each shape picks ellipse or blob with equal odds.
    Mixed,
}

impl ShapeKinds {
    pub fn name(self) -> &'static str {
        match self {
            ShapeKinds::Ellipse => "ellipse",
            ShapeKinds::Blob => "blob",
            ShapeKinds::Mixed => "mixed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [ShapeKinds::Ellipse, ShapeKinds::Blob, ShapeKinds::Mixed]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_images: usize,
    pub height: usize,
    pub width: usize,
    pub shapes_min: usize,
    pub shapes_max: usize,
    pub kinds: ShapeKinds,
    /// Label count including background; shapes cycle through `1..classes`.
    pub classes: usize,
    /// Semi-axis range as a fraction of `min(H, W)`.
    pub radius_min: f64,
    pub radius_max: f64,
    /// Blob radius modulation amplitude range.
    pub wobble_min: f64,
    pub wobble_max: f64,
    /// Place a single shape exactly at the image center.
    pub centered: bool,
    pub fg_mean: [f64; 3],
    pub bg_mean: [f64; 3],
    /// Uniform half-width of per-image color jitter.
    pub color_jitter: f64,
    pub noise_sigma: f64,
    pub texture_amp: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_images: 200,
            height: 64,
            width: 64,
            shapes_min: 1,
            shapes_max: 2,
            kinds: ShapeKinds::Mixed,
            classes: 2,
            radius_min: 0.12,
            radius_max: 0.28,
            wobble_min: 0.05,
            wobble_max: 0.2,
            centered: false,
            fg_mean: [0.55, 0.3, 0.25],
            bg_mean: [0.85, 0.7, 0.6],
            color_jitter: 0.08,
            noise_sigma: 0.04,
            texture_amp: 0.05,
            seed: 0,
        }
    }
}

/// One rasterized shape in pixel units.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeParams {
    pub center: (f64, f64),
    /// Semi-axes along the rotated x and y directions.
    pub axes: (f64, f64),
    pub angle: f64,
    /// Radius factor `1 + amp·sin(lobes·θ + phase)`; zero `amp` is an ellipse.
    pub lobes: u32,
    pub amp: f64,
    pub phase: f64,
    pub label: u8,
}

impl ShapeParams {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let (s, c) = self.angle.sin_cos();
        let u = (dx * c + dy * s) / self.axes.0;
        let v = (-dx * s + dy * c) / self.axes.1;
        let rho = (u * u + v * v).sqrt();
        let limit = if self.amp == 0.0 {
            1.0
        } else {
            1.0 + self.amp * (f64::from(self.lobes) * v.atan2(u) + self.phase).sin()
        };
        rho <= limit
    }

    /// Fraction of the pixel at `(row, col)` inside the shape.
    pub fn coverage(&self, row: usize, col: usize) -> f64 {
        let step = 1.0 / SUPERSAMPLE as f64;
        let mut inside = 0;
        for i in 0..SUPERSAMPLE {
            for j in 0..SUPERSAMPLE {
                let y = row as f64 + (i as f64 + 0.5) * step;
                let x = col as f64 + (j as f64 + 0.5) * step;
                inside += usize::from(self.contains(x, y));
            }
        }
        inside as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64
    }

    /// `π·a·b`, exact for ellipses.
    pub fn ellipse_area(&self) -> f64 {
        PI * self.axes.0 * self.axes.1
    }
}

/// A generated sample together with the parameters that produced it.
#[derive(Clone, Debug)]
pub struct Generated {
    pub sample: Sample,
    pub shapes: Vec<ShapeParams>,
}

impl SynthSpec {
    pub fn violations(&self) -> Vec<String> {
        let mut errors = Vec::new();
        if self.n_images == 0 {
            errors.push("synth.n_images must be at least 1".to_owned());
        }
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(32) || !self.width.is_multiple_of(32) {
            errors.push(format!(
                "synth size {}x{} must be positive multiples of 32",
                self.height, self.width
            ));
        }
        if self.shapes_min == 0 || self.shapes_min > self.shapes_max {
            errors.push("synth shape count range must satisfy 1 <= min <= max".to_owned());
        }
        if !(2..=255).contains(&self.classes) {
            errors.push("synth.classes must be in 2..=255".to_owned());
        }
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max && self.radius_max < 0.5) {
            errors.push("synth radius range must satisfy 0 < min <= max < 0.5".to_owned());
        }
        if !(0.0 <= self.wobble_min && self.wobble_min <= self.wobble_max && self.wobble_max < 1.0) {
            errors.push("synth wobble range must satisfy 0 <= min <= max < 1".to_owned());
        }
        for (name, v) in [
            ("color_jitter", self.color_jitter),
            ("noise_sigma", self.noise_sigma),
            ("texture_amp", self.texture_amp),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                errors.push(format!("synth.{name} must be finite and non-negative"));
            }
        }
        errors
    }

    pub fn validate(&self) -> Result<()> {
        let errors = self.violations();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(CtoError::InvalidConfig(errors))
        }
    }

    /// `key=value` lines in a fixed order; the corpus hash covers exactly
    /// this text.
    pub fn to_kv(&self) -> String {
        let rgb = |c: [f64; 3]| format!("{},{},{}", c[0], c[1], c[2]);
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").expect("string write");
        kv("n_images", self.n_images.to_string());
        kv("height", self.height.to_string());
        kv("width", self.width.to_string());
        kv("shapes_min", self.shapes_min.to_string());
        kv("shapes_max", self.shapes_max.to_string());
        kv("kinds", self.kinds.name().to_owned());
        kv("classes", self.classes.to_string());
        kv("radius_min", self.radius_min.to_string());
        kv("radius_max", self.radius_max.to_string());
        kv("wobble_min", self.wobble_min.to_string());
        kv("wobble_max", self.wobble_max.to_string());
        kv("centered", self.centered.to_string());
        kv("fg_mean", rgb(self.fg_mean));
        kv("bg_mean", rgb(self.bg_mean));
        kv("color_jitter", self.color_jitter.to_string());
        kv("noise_sigma", self.noise_sigma.to_string());
        kv("texture_amp", self.texture_amp.to_string());
        kv("seed", self.seed.to_string());
        s
    }

    /// Lowercase hex SHA-256 of [`SynthSpec::to_kv`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_kv().as_bytes()))
    }

    pub fn sample_id(index: usize) -> String {
        format!("synth_{index:05}")
    }

    fn draw_shapes(&self, rng: &mut ChaCha8Rng) -> Vec<ShapeParams> {
        let (h, w) = (self.height as f64, self.width as f64);
        let side = h.min(w);
        let count = if self.centered {
            1
        } else {
            rng.gen_range(self.shapes_min..=self.shapes_max)
        };
        (0..count)
            .map(|k| {
                let a = rng.gen_range(self.radius_min..=self.radius_max) * side;
                let b = rng.gen_range(self.radius_min..=self.radius_max) * side;
                let angle = rng.gen_range(0.0..PI);
                let blob = match self.kinds {
                    ShapeKinds::Ellipse => false,
                    ShapeKinds::Blob => true,
                    ShapeKinds::Mixed => rng.gen_bool(0.5),
                };
                let (lobes, amp, phase) = if blob {
                    (
                        rng.gen_range(3..=5),
                        rng.gen_range(self.wobble_min..=self.wobble_max),
                        rng.gen_range(0.0..2.0 * PI),
                    )
                } else {
                    (0, 0.0, 0.0)
                };
                let center = if self.centered {
                    (w / 2.0, h / 2.0)
                } else {
                    let reach = a.max(b);
                    (
                        rng.gen_range(reach.min(w / 2.0)..=(w - reach).max(w / 2.0)),
                        rng.gen_range(reach.min(h / 2.0)..=(h - reach).max(h / 2.0)),
                    )
                };
                ShapeParams {
                    center,
                    axes: (a, b),
                    angle,
                    lobes,
                    amp,
                    phase,
                    label: (1 + k % (self.classes - 1)) as u8,
                }
            })
            .collect()
    }

    /// Generates sample `index` in memory.
    pub fn generate_one(&self, index: usize) -> Generated {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ index as u64);
        let (h, w) = (self.height, self.width);
        let jitter = |base: [f64; 3], rng: &mut ChaCha8Rng| -> [f64; 3] {
            base.map(|v| v + rng.gen_range(-1.0..=1.0) * self.color_jitter)
        };
        let bg = jitter(self.bg_mean, &mut rng);
        let shapes = self.draw_shapes(&mut rng);
        let fgs: Vec<[f64; 3]> = shapes.iter().map(|_| jitter(self.fg_mean, &mut rng)).collect();
        let freq = (rng.gen_range(1.0..4.0), rng.gen_range(1.0..4.0));
        let tex_phase = rng.gen_range(0.0..2.0 * PI);

        let mut rgb = vec![0.0f64; h * w * 3];
        let mut mask = vec![0u8; h * w];
        for r in 0..h {
            for c in 0..w {
                let tex = self.texture_amp
                    * (2.0 * PI * (freq.0 * c as f64 / w as f64 + freq.1 * r as f64 / h as f64)
                        + tex_phase)
                        .sin();
                let mut px = bg.map(|v| v + tex);
                for (shape, fg) in shapes.iter().zip(&fgs) {
                    let cov = shape.coverage(r, c);
                    if cov > 0.0 {
                        for ch in 0..3 {
                            px[ch] = px[ch] * (1.0 - cov) + fg[ch] * cov;
                        }
                    }
                    if cov >= 0.5 {
                        mask[r * w + c] = shape.label;
                    }
                }
                rgb[(r * w + c) * 3..(r * w + c) * 3 + 3].copy_from_slice(&px);
            }
        }
        if self.noise_sigma > 0.0 {
            let noise = Normal::new(0.0, self.noise_sigma).expect("sigma validated");
            for v in &mut rgb {
                *v += noise.sample(&mut rng);
            }
        }
        let image = rgb
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Generated {
            sample: Sample::new(Self::sample_id(index), h, w, image, mask),
            shapes,
        }
    }

    /// Generates the whole corpus in index order, in parallel.
    pub fn generate(&self) -> Result<Vec<Generated>> {
        self.validate()?;
        Ok((0..self.n_images)
            .into_par_iter()
            .map(|i| self.generate_one(i))
            .collect())
    }
}

/// Writes `images/<id>.ppm`, `masks/<id>.pgm`, the manifest and `spec.txt`
/// into `out_dir`.
pub fn synth_generate(spec: &SynthSpec, out_dir: &Path) -> Result<Manifest> {
    let corpus = spec.generate()?;
    for sub in ["images", "masks"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| CtoError::io(&d, e))?;
    }
    corpus.par_iter().try_for_each(|g| -> Result<()> {
        let s = &g.sample;
        pnm::write(
            &out_dir.join(format!("images/{}.ppm", s.id)),
            PnmKind::Rgb,
            s.width,
            s.height,
            &s.image,
        )?;
        pnm::write(
            &out_dir.join(format!("masks/{}.pgm", s.id)),
            PnmKind::Gray,
            s.width,
            s.height,
            &s.mask,
        )
    })?;
    let manifest = Manifest {
        seed: Some(spec.seed),
        spec_hash: Some(spec.hash()),
        entries: corpus
            .iter()
            .map(|g| {
                let id = g.sample.id.clone();
                (
                    id.clone(),
                    format!("images/{id}.ppm"),
                    format!("masks/{id}.pgm"),
                )
            })
            .collect(),
    };
    let spec_path = out_dir.join(SPEC_FILE);
    std::fs::write(&spec_path, spec.to_kv()).map_err(|e| CtoError::io(&spec_path, e))?;
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
