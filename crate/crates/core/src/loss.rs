//! Segmentation and boundary losses with deep supervision.
//!
//! All losses take probabilities and dense targets of the same shape
//! `[N, K, H, W]`. With `K = 1` the target is a binary mask; with `K > 1`
//! it is one-hot over classes.

use cto_tensor::{Element, Tensor, TensorError};
use serde::Serialize;

use crate::error::Result;
use crate::model::ModelOutputs;

/// Probability clamp for the logarithm in cross-entropy.
pub const CE_EPS: f64 = 1e-7;
/// Added to numerator and denominator of the overlap losses.
pub const SMOOTH: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ClassMode {
    Binary,
    Multiclass,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub levels: usize,
    pub class_mode: ClassMode,
}

impl LossConfig {
    pub fn for_classes(num_classes: usize, alpha: f64, levels: usize) -> Self {
        LossConfig {
            alpha,
            levels,
            class_mode: if num_classes == 1 {
                ClassMode::Binary
            } else {
                ClassMode::Multiclass
            },
        }
    }
}

fn same_shape<T: Element>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().clone(),
            rhs: b.shape().clone(),
        }
        .into());
    }
    Ok(())
}

/// Sigmoid for one channel, softmax over channels otherwise.
pub fn probabilities<T: Element>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, c, _, _) = logits.shape().nchw("probabilities")?;
    if c == 1 {
        return Ok(logits.sigmoid());
    }
    Ok(logits
        .permute(&[0, 2, 3, 1])?
        .softmax_lastdim()
        .permute(&[0, 3, 1, 2])?)
}

/// Mean cross-entropy over pixels: binary for one channel, categorical
/// for several.
pub fn ce_loss<T: Element>(y_hat: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("ce_loss", y_hat, y)?;
    let (n, c, h, w) = y_hat.shape().nchw("ce_loss")?;
    let p = y_hat.clamp(CE_EPS, 1.0 - CE_EPS);
    let pixels = (n * h * w) as f64;
    let fg = y.mul(&p.log())?;
    let total = if c == 1 {
        let bg = y.one_minus().mul(&p.one_minus().log())?;
        fg.add(&bg)?.sum_all()
    } else {
        fg.sum_all()
    };
    Ok(total.scale(-1.0 / pixels))
}

fn per_class<T: Element>(
    y_hat: &Tensor<T>,
    y: &Tensor<T>,
    f: impl Fn(&Tensor<T>, &Tensor<T>) -> Result<Tensor<T>>,
) -> Result<Tensor<T>> {
    let c = y_hat.dims()[1];
    if c == 1 {
        return f(y_hat, y);
    }
    let mut acc: Option<Tensor<T>> = None;
    for k in 0..c {
        let term = f(&y_hat.slice_channels(k, 1)?, &y.slice_channels(k, 1)?)?;
        acc = Some(match acc {
            Some(a) => a.add(&term)?,
            None => term,
        });
    }
    Ok(acc.expect("at least one class").scale(1.0 / c as f64))
}

/// `1 − (Σ y·ŷ + s) / (Σ (y + ŷ − y·ŷ) + s)`, averaged over classes when
/// there are several.
pub fn miou_loss<T: Element>(y_hat: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("miou_loss", y_hat, y)?;
    per_class(y_hat, y, |p, t| {
        let inter = t.mul(p)?.sum_all();
        let union = t.add(p)?.sum_all().sub(&inter)?;
        Ok(inter
            .add_scalar(SMOOTH)
            .div(&union.add_scalar(SMOOTH))?
            .one_minus())
    })
}

/// `1 − (2 Σ y·ŷ + s) / (Σ (y + ŷ) + s)`, averaged over classes when there
/// are several.
pub fn dice_loss<T: Element>(y_hat: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("dice_loss", y_hat, y)?;
    per_class(y_hat, y, |p, t| {
        let inter = t.mul(p)?.sum_all().scale(2.0);
        let total = t.add(p)?.sum_all();
        Ok(inter
            .add_scalar(SMOOTH)
            .div(&total.add_scalar(SMOOTH))?
            .one_minus())
    })
}

/// Targets for one batch.
#[derive(Clone, Debug)]
pub struct Targets<T: Element> {
    /// Binary mask `[N,1,H,W]` or one-hot `[N,K,H,W]`.
    pub seg: Tensor<T>,
    /// Boundary mask at the boundary-logit resolution.
    pub boundary: Tensor<T>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: Vec<f64>,
    pub miou: Vec<f64>,
    /// Boundary Dice loss before weighting.
    pub boundary_dice: Option<f64>,
    /// `alpha · boundary_dice`.
    pub boundary_term: f64,
}

/// `Σ_levels (CE + mIoU) + α·Dice(boundary)`, with the boundary term
/// omitted when the network has no boundary head.
pub fn total_loss<T: Element>(
    outputs: &ModelOutputs<T>,
    targets: &Targets<T>,
    cfg: &LossConfig,
) -> Result<(Tensor<T>, LossBreakdown)> {
    if outputs.seg_logits.len() != cfg.levels {
        return Err(TensorError::DimMismatch {
            op: "total_loss",
            dim: "levels",
            lhs: outputs.seg_logits.len(),
            rhs: cfg.levels,
        }
        .into());
    }
    let mut total: Option<Tensor<T>> = None;
    let (mut ce_terms, mut miou_terms) = (Vec::new(), Vec::new());
    for logits in &outputs.seg_logits {
        let p = probabilities(logits)?;
        let ce = ce_loss(&p, &targets.seg)?;
        let miou = miou_loss(&p, &targets.seg)?;
        ce_terms.push(ce.item().as_f64());
        miou_terms.push(miou.item().as_f64());
        let level = ce.add(&miou)?;
        total = Some(match total {
            Some(t) => t.add(&level)?,
            None => level,
        });
    }
    let mut total = total.expect("levels ≥ 1");
    let (boundary_dice, boundary_term) = match &outputs.boundary_logits {
        Some(logits) => {
            let d = dice_loss(&logits.sigmoid(), &targets.boundary)?;
            let weighted = d.scale(cfg.alpha);
            total = total.add(&weighted)?;
            (Some(d.item().as_f64()), weighted.item().as_f64())
        }
        None => (None, 0.0),
    };
    let breakdown = LossBreakdown {
        total: total.item().as_f64(),
        ce: ce_terms,
        miou: miou_terms,
        boundary_dice,
        boundary_term,
    };
    Ok((total, breakdown))
}

/// `dilate(mask) XOR erode(mask)` with a 3×3 cross; pixels outside the
/// image count as background.
pub fn boundary_gt(mask: &[u8], height: usize, width: usize) -> Vec<u8> {
    let at = |r: isize, c: isize| -> bool {
        r >= 0
            && c >= 0
            && (r as usize) < height
            && (c as usize) < width
            && mask[r as usize * width + c as usize] != 0
    };
    let mut out = vec![0u8; height * width];
    for r in 0..height as isize {
        for c in 0..width as isize {
            let cross = [at(r, c), at(r - 1, c), at(r + 1, c), at(r, c - 1), at(r, c + 1)];
            let dilated = cross.iter().any(|&v| v);
            let eroded = cross.iter().all(|&v| v);
            out[r as usize * width + c as usize] = u8::from(dilated != eroded);
        }
    }
    out
}

/// `factor × factor` max-pooling of a binary map, keeping thin structures.
pub fn downsample_max(mask: &[u8], height: usize, width: usize, factor: usize) -> Vec<u8> {
    let (oh, ow) = (height / factor, width / factor);
    let mut out = vec![0u8; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..factor)
                .flat_map(|i| (0..factor).map(move |j| (i, j)))
                .map(|(i, j)| mask[(r * factor + i) * width + c * factor + j])
                .max()
                .unwrap_or(0);
        }
    }
    out
}
