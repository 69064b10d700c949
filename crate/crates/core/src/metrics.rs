//! Hard-mask evaluation metrics.
//!
//! Masks are row-major label maps (`0` = background). Binary masks are the
//! two-class case.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::{json, Value};

/// `2|A∩B| / (|A|+|B|)`; both empty gives 1.
pub fn dice(pred: &[bool], gt: &[bool]) -> f64 {
    let (inter, a, b) = counts(pred, gt);
    if a + b == 0 {
        return 1.0;
    }
    2.0 * inter as f64 / (a + b) as f64
}

/// `|A∩B| / |A∪B|`; both empty gives 1.
pub fn iou(pred: &[bool], gt: &[bool]) -> f64 {
    let (inter, a, b) = counts(pred, gt);
    let union = a + b - inter;
    if union == 0 {
        return 1.0;
    }
    inter as f64 / union as f64
}

fn counts(pred: &[bool], gt: &[bool]) -> (usize, usize, usize) {
    assert_eq!(pred.len(), gt.len(), "mask lengths differ");
    let mut inter = 0;
    let (mut a, mut b) = (0, 0);
    for (&p, &g) in pred.iter().zip(gt) {
        inter += usize::from(p && g);
        a += usize::from(p);
        b += usize::from(g);
    }
    (inter, a, b)
}

/// Foreground pixels with at least one 4-neighbour in the background or
/// outside the image.
pub fn inner_boundary(mask: &[bool], height: usize, width: usize) -> Vec<bool> {
    let fg = |r: isize, c: isize| {
        r >= 0
            && c >= 0
            && (r as usize) < height
            && (c as usize) < width
            && mask[r as usize * width + c as usize]
    };
    let mut out = vec![false; height * width];
    for r in 0..height as isize {
        for c in 0..width as isize {
            out[r as usize * width + c as usize] = fg(r, c)
                && !(fg(r - 1, c) && fg(r + 1, c) && fg(r, c - 1) && fg(r, c + 1));
        }
    }
    out
}

const FAR: f64 = 1e20;

/// One-dimensional squared distance transform of sampled function `f`
/// (lower envelope of parabolas). Integer inputs give exact outputs.
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2 * (q - p)) as f64;
            // z[0] = -inf stops the pop at k = 0
            if s > z[k] {
                break;
            }
            k -= 1;
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance from every pixel to the nearest `true` pixel.
/// Returns `None` when `sites` is empty.
pub fn squared_distance_map(sites: &[bool], height: usize, width: usize) -> Option<Vec<f64>> {
    if !sites.iter().any(|&s| s) {
        return None;
    }
    let mut grid: Vec<f64> = sites.iter().map(|&s| if s { 0.0 } else { FAR }).collect();
    let n = height.max(width);
    let (mut f, mut out) = (vec![0.0; n], vec![0.0; n]);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0; n + 1]);
    for c in 0..width {
        for r in 0..height {
            f[r] = grid[r * width + c];
        }
        edt_1d(&f[..height], &mut out[..height], &mut v, &mut z);
        for r in 0..height {
            grid[r * width + c] = out[r];
        }
    }
    for r in 0..height {
        let row = &mut grid[r * width..(r + 1) * width];
        f[..width].copy_from_slice(row);
        edt_1d(&f[..width], &mut out[..width], &mut v, &mut z);
        row.copy_from_slice(&out[..width]);
    }
    Some(grid)
}

fn mean_distance_to(from: &[bool], to_sq: &[f64]) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, _) in from.iter().enumerate().filter(|(_, &b)| b) {
        sum += to_sq[i].sqrt();
        n += 1;
    }
    sum / n as f64
}

/// Symmetric mean of nearest-boundary-pixel distances in pixels.
///
/// Both masks empty gives 0; exactly one empty gives `+inf`.
pub fn avg_hausdorff(pred: &[bool], gt: &[bool], height: usize, width: usize) -> f64 {
    assert_eq!(pred.len(), height * width, "pred size");
    assert_eq!(gt.len(), height * width, "gt size");
    let (bp, bg) = (
        inner_boundary(pred, height, width),
        inner_boundary(gt, height, width),
    );
    match (
        squared_distance_map(&bp, height, width),
        squared_distance_map(&bg, height, width),
    ) {
        (None, None) => 0.0,
        (Some(dp), Some(dg)) => 0.5 * (mean_distance_to(&bp, &dg) + mean_distance_to(&bg, &dp)),
        _ => f64::INFINITY,
    }
}

/// Scores of one image for one foreground class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClassScores {
    pub dice: f64,
    pub iou: f64,
    pub avg_hd: f64,
}

/// Per-class scores of one label map pair, foreground classes `1..classes`.
pub fn score_labels(
    pred: &[u8],
    gt: &[u8],
    height: usize,
    width: usize,
    classes: usize,
) -> Vec<ClassScores> {
    (1..classes.max(2))
        .map(|k| {
            let p: Vec<bool> = pred.iter().map(|&v| v as usize == k).collect();
            let g: Vec<bool> = gt.iter().map(|&v| v as usize == k).collect();
            ClassScores {
                dice: dice(&p, &g),
                iou: iou(&p, &g),
                avg_hd: avg_hausdorff(&p, &g, height, width),
            }
        })
        .collect()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Running accumulation of per-image scores, macro-averaged over
/// foreground classes within each image.
#[derive(Clone, Debug, Default)]
pub struct MetricsSummary {
    per_image: Vec<Vec<ClassScores>>,
}

impl MetricsSummary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, scores: Vec<ClassScores>) {
        self.per_image.push(scores);
    }

    pub fn n_images(&self) -> usize {
        self.per_image.len()
    }

    fn image_values(&self, pick: impl Fn(&ClassScores) -> f64) -> Vec<f64> {
        self.per_image
            .iter()
            .map(|cs| cs.iter().map(&pick).sum::<f64>() / cs.len() as f64)
            .collect()
    }

    /// Mean image Dice.
    pub fn dice(&self) -> f64 {
        mean_std(&self.image_values(|c| c.dice)).0
    }

    pub fn iou(&self) -> f64 {
        mean_std(&self.image_values(|c| c.iou)).0
    }

    /// Mean over images with a finite distance; `None` when no image has one.
    pub fn avg_hd(&self) -> Option<f64> {
        let finite: Vec<f64> = self
            .image_values(|c| c.avg_hd)
            .into_iter()
            .filter(|v| v.is_finite())
            .collect();
        (!finite.is_empty()).then(|| mean_std(&finite).0)
    }

    /// `{dice, iou, avg_hd, per_class, n_images}` with standard deviations
    /// across images; an undefined distance is the string `"undefined"`.
    pub fn to_json(&self) -> Value {
        let block = |values: Vec<f64>| -> Value {
            let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
            let undefined = values.len() - finite.len();
            let (mean, std) = mean_std(&finite);
            if finite.is_empty() {
                json!({"mean": "undefined", "std": "undefined", "undefined": undefined})
            } else {
                json!({"mean": mean, "std": std, "undefined": undefined})
            }
        };
        let classes = self.per_image.first().map_or(0, Vec::len);
        let mut per_class = BTreeMap::new();
        for k in 0..classes {
            let pick = |f: fn(&ClassScores) -> f64| -> Vec<f64> {
                self.per_image.iter().map(|cs| f(&cs[k])).collect()
            };
            per_class.insert(
                (k + 1).to_string(),
                json!({
                    "dice": block(pick(|c| c.dice)),
                    "iou": block(pick(|c| c.iou)),
                    "avg_hd": block(pick(|c| c.avg_hd)),
                }),
            );
        }
        let dice = block(self.image_values(|c| c.dice));
        let iou = block(self.image_values(|c| c.iou));
        let hd = block(self.image_values(|c| c.avg_hd));
        json!({
            "dice": dice["mean"],
            "dice_std": dice["std"],
            "iou": iou["mean"],
            "iou_std": iou["std"],
            "avg_hd": hd["mean"],
            "avg_hd_std": hd["std"],
            "avg_hd_undefined": hd["undefined"],
            "per_class": per_class,
            "n_images": self.n_images(),
        })
    }
}
