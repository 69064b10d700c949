//! On-disk corpus layout, loading, folds, augmentation and batching.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use cto_tensor::{Element, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::pnm::{self, PnmKind};
use crate::error::{CtoError, Result};
use crate::loss::{boundary_gt, downsample_max, Targets};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const SPEC_FILE: &str = "spec.txt";
/// Boundary targets live at a quarter of the input resolution.
pub const BOUNDARY_STRIDE: usize = 4;

/// One image with its label map.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub height: usize,
    pub width: usize,
    /// Interleaved RGB bytes, row-major.
    pub image: Vec<u8>,
    /// Label per pixel, `0` is background.
    pub mask: Vec<u8>,
    boundary: OnceLock<Vec<u8>>,
}

impl PartialEq for Sample {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.height == other.height
            && self.width == other.width
            && self.image == other.image
            && self.mask == other.mask
    }
}

impl Sample {
    pub fn new(id: String, height: usize, width: usize, image: Vec<u8>, mask: Vec<u8>) -> Self {
        debug_assert_eq!(image.len(), height * width * 3);
        debug_assert_eq!(mask.len(), height * width);
        Sample {
            id,
            height,
            width,
            image,
            mask,
            boundary: OnceLock::new(),
        }
    }

    /// Boundary band of the foreground, computed on first use.
    pub fn boundary(&self) -> &[u8] {
        self.boundary.get_or_init(|| {
            let fg: Vec<u8> = self.mask.iter().map(|&v| u8::from(v != 0)).collect();
            boundary_gt(&fg, self.height, self.width)
        })
    }

    pub fn foreground(&self) -> Vec<bool> {
        self.mask.iter().map(|&v| v != 0).collect()
    }

    pub fn max_label(&self) -> u8 {
        self.mask.iter().copied().max().unwrap_or(0)
    }
}

/// `id<TAB>image_path<TAB>mask_path` lines, paths relative to the manifest.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub seed: Option<u64>,
    pub spec_hash: Option<String>,
    pub entries: Vec<(String, String, String)>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(seed) = self.seed {
            out.push_str(&format!("# seed={seed}\n"));
        }
        if let Some(hash) = &self.spec_hash {
            out.push_str(&format!("# spec_hash={hash}\n"));
        }
        for (id, img, mask) in &self.entries {
            out.push_str(&format!("{id}\t{img}\t{mask}\n"));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| CtoError::io(path, e))
    }

    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let mut m = Manifest::default();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let at = offset;
            offset += line.len();
            let line = line.trim_end_matches(['\n', '\r']);
            if line.trim().is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(v) = comment.strip_prefix("seed=") {
                    m.seed = v.parse().ok();
                } else if let Some(v) = comment.strip_prefix("spec_hash=") {
                    m.spec_hash = Some(v.to_owned());
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
                return Err(CtoError::Format {
                    path: path.to_owned(),
                    offset: at,
                    msg: "expected `id<TAB>image<TAB>mask`".to_owned(),
                });
            }
            m.entries
                .push((fields[0].to_owned(), fields[1].to_owned(), fields[2].to_owned()));
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CtoError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Rejects labels outside `0..num_classes`. A binary model (one
    /// output channel) accepts labels 0 and 1.
    pub fn check_labels(&self, num_classes: usize) -> Result<()> {
        let limit = num_classes.max(2);
        for s in &self.samples {
            let max = s.max_label() as usize;
            if max >= limit {
                return Err(CtoError::Data(format!(
                    "sample `{}` has label {max}, model has {limit} classes",
                    s.id
                )));
            }
        }
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> Vec<&Sample> {
        indices.iter().map(|&i| &self.samples[i]).collect()
    }
}

fn load_one(root: &Path, id: &str, img_rel: &str, mask_rel: &str) -> Result<Sample> {
    let img = pnm::read_kind(&root.join(img_rel), PnmKind::Rgb)?;
    let mask = pnm::read_kind(&root.join(mask_rel), PnmKind::Gray)?;
    if (img.width, img.height) != (mask.width, mask.height) {
        return Err(CtoError::Data(format!(
            "sample `{id}`: image is {}x{} but mask is {}x{}",
            img.width, img.height, mask.width, mask.height
        )));
    }
    let image = if img.maxval == 255 {
        img.data
    } else {
        let m = u32::from(img.maxval);
        img.data
            .iter()
            .map(|&v| ((u32::from(v) * 255 + m / 2) / m) as u8)
            .collect()
    };
    Ok(Sample::new(id.to_owned(), img.height, img.width, image, mask.data))
}

/// Reads `dir/manifest.tsv` and every pair it lists. An empty manifest is
/// an empty dataset.
pub fn load_pairs(dir: &Path) -> Result<Dataset> {
    let manifest = Manifest::read(&dir.join(MANIFEST_FILE))?;
    let samples = manifest
        .entries
        .par_iter()
        .map(|(id, img, mask)| load_one(dir, id, img, mask))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        root: dir.to_owned(),
        manifest,
        samples,
    })
}

/// Seeded shuffle of `0..n` dealt round-robin into `k` folds.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > n {
        return Err(CtoError::Data(format!(
            "cannot split {n} samples into {k} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (i, idx) in order.into_iter().enumerate() {
        folds[i % k].push(idx);
    }
    Ok(folds)
}

/// Train indices for held-out fold `fold`: every other fold, in fold order.
pub fn train_indices(folds: &[Vec<usize>], fold: usize) -> Vec<usize> {
    folds
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != fold)
        .flat_map(|(_, f)| f.iter().copied())
        .collect()
}

/// Flips and quarter turns applied identically to image and mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Augment {
    pub hflip: bool,
    pub vflip: bool,
    /// Counter-clockwise quarter turns, only drawn for square samples.
    pub quarter_turns: u8,
}

impl Augment {
    pub fn draw(rng: &mut impl Rng, square: bool) -> Self {
        Augment {
            hflip: rng.gen_bool(0.5),
            vflip: rng.gen_bool(0.5),
            quarter_turns: if square { rng.gen_range(0..4) } else { 0 },
        }
    }

    /// Source pixel for output `(r, c)` of an `h × w` grid.
    fn source(&self, r: usize, c: usize, h: usize, w: usize) -> (usize, usize) {
        let (mut r, mut c) = (r, c);
        for _ in 0..self.quarter_turns {
            // inverse of one counter-clockwise turn on a square grid
            (r, c) = (c, w - 1 - r);
        }
        if self.vflip {
            r = h - 1 - r;
        }
        if self.hflip {
            c = w - 1 - c;
        }
        (r, c)
    }

    pub fn apply<P: Copy>(&self, pixels: &[P], h: usize, w: usize, channels: usize) -> Vec<P> {
        if *self == Augment::default() {
            return pixels.to_vec();
        }
        assert!(self.quarter_turns == 0 || h == w, "rotation needs a square grid");
        let mut out = Vec::with_capacity(pixels.len());
        for r in 0..h {
            for c in 0..w {
                let (sr, sc) = self.source(r, c, h, w);
                let at = (sr * w + sc) * channels;
                out.extend_from_slice(&pixels[at..at + channels]);
            }
        }
        out
    }
}

/// Image tensor `[N,3,H,W]` in `[0,1]` for a batch of same-sized samples.
pub fn image_tensor<T: Element>(samples: &[&Sample], augs: &[Augment]) -> Result<Tensor<T>> {
    let (h, w) = batch_dims(samples)?;
    let mut data = Vec::with_capacity(samples.len() * 3 * h * w);
    for (s, a) in samples.iter().zip(augs.iter().chain(std::iter::repeat(&Augment::default()))) {
        let px = a.apply(&s.image, h, w, 3);
        for ch in 0..3 {
            data.extend((0..h * w).map(|i| T::lit(f64::from(px[i * 3 + ch]) / 255.0)));
        }
    }
    Ok(Tensor::new(data, &[samples.len(), 3, h, w])?)
}

fn batch_dims(samples: &[&Sample]) -> Result<(usize, usize)> {
    let first = samples
        .first()
        .ok_or_else(|| CtoError::Data("empty batch".to_owned()))?;
    for s in samples {
        if (s.height, s.width) != (first.height, first.width) {
            return Err(CtoError::Data(format!(
                "sample `{}` is {}x{}, batch is {}x{}",
                s.id, s.height, s.width, first.height, first.width
            )));
        }
    }
    Ok((first.height, first.width))
}

/// Segmentation targets (binary `[N,1,H,W]` for one class, one-hot
/// `[N,K,H,W]` otherwise) and the max-pooled boundary band at `H/4`.
pub fn targets<T: Element>(
    samples: &[&Sample],
    augs: &[Augment],
    num_classes: usize,
) -> Result<Targets<T>> {
    let (h, w) = batch_dims(samples)?;
    let (bh, bw) = (h / BOUNDARY_STRIDE, w / BOUNDARY_STRIDE);
    let mut seg = Vec::with_capacity(samples.len() * num_classes * h * w);
    let mut bnd = Vec::with_capacity(samples.len() * bh * bw);
    for (s, a) in samples.iter().zip(augs.iter().chain(std::iter::repeat(&Augment::default()))) {
        let mask = a.apply(&s.mask, h, w, 1);
        let boundary = a.apply(s.boundary(), h, w, 1);
        if num_classes == 1 {
            seg.extend(mask.iter().map(|&v| T::lit(f64::from(u8::from(v != 0)))));
        } else {
            for k in 0..num_classes {
                seg.extend(mask.iter().map(|&v| T::lit(f64::from(u8::from(v as usize == k)))));
            }
        }
        bnd.extend(
            downsample_max(&boundary, h, w, BOUNDARY_STRIDE)
                .into_iter()
                .map(|v| T::lit(f64::from(v))),
        );
    }
    let n = samples.len();
    Ok(Targets {
        seg: Tensor::new(seg, &[n, num_classes, h, w])?,
        boundary: Tensor::new(bnd, &[n, 1, bh, bw])?,
    })
}

/// Hard labels per image from logits `[N,K,H,W]`: threshold at 0.5 for
/// one channel, argmax (first maximum) otherwise.
pub fn hard_labels<T: Element>(logits: &Tensor<T>) -> Result<Vec<Vec<u8>>> {
    let (n, k, h, w) = logits.shape().nchw("hard_labels")?;
    let data = logits.data();
    let plane = h * w;
    Ok((0..n)
        .map(|i| {
            let base = i * k * plane;
            (0..plane)
                .map(|p| {
                    if k == 1 {
                        // sigmoid(z) > 0.5 ⇔ z > 0
                        u8::from(data[base + p].as_f64() > 0.0)
                    } else {
                        let mut best = 0;
                        for c in 1..k {
                            if data[base + c * plane + p] > data[base + best * plane + p] {
                                best = c;
                            }
                        }
                        best as u8
                    }
                })
                .collect()
        })
        .collect())
}
