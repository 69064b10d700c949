//! Boundary extraction and boundary-guided decoding.
//!
//! Extraction filters encoder features with fixed Sobel kernels, gates the
//! features with the sigmoid of the edge response, fuses the shallowest and
//! deepest gated levels and predicts a boundary map. Injection feeds the
//! fused boundary feature into every decoder level through a foreground
//! path and a background path gated by `1 − σ(previous decoder output)`.

use cto_tensor::{concat_channels, conv2d, Element, PadMode, ParamId, Tensor, TensorError};

use crate::error::Result;
use crate::nn::{chain, note_conv, Builder, Conv2d, ConvBnRelu, ConvSpec, Ctx};

/// Horizontal-gradient kernel, row-major, applied without flipping.
pub const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
/// Vertical-gradient kernel, row-major, applied without flipping.
pub const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Depthwise cross-correlation of an already padded map with a fixed
/// zero-sum 3×3 kernel, written as `Σ k_ij·(x_ij − x_center)`.
///
/// Equal to the plain correlation because the taps sum to zero, and exact
/// on locally constant input whatever the summation order.
fn zero_sum_correlation<T: Element>(
    padded: &Tensor<T>,
    k: &[[f64; 3]; 3],
    h: usize,
    w: usize,
) -> Result<Tensor<T>> {
    debug_assert_eq!(k.iter().flatten().sum::<f64>(), 0.0);
    let window = |i: usize, j: usize| -> Result<Tensor<T>> {
        Ok(padded.narrow(2, i, h)?.narrow(3, j, w)?)
    };
    let center = window(1, 1)?;
    let mut acc: Option<Tensor<T>> = None;
    for (i, row) in k.iter().enumerate() {
        for (j, &kij) in row.iter().enumerate() {
            if kij == 0.0 {
                continue;
            }
            let tap = window(i, j)?.sub(&center)?.scale(kij);
            acc = Some(match acc {
                Some(a) => a.add(&tap)?,
                None => tap,
            });
        }
    }
    Ok(acc.expect("kernel has non-zero taps"))
}

/// Per-channel Sobel responses `(M_x, M_y)` with replicate padding.
///
/// Any spatial size is accepted: below 3×3 the padding repeats the border,
/// so a 1×1 map has zero response.
pub fn sobel_gradients<T: Element>(f: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (_, _, h, w) = f.shape().nchw("sobel_gradients")?;
    let padded = f.pad2d((1, 1, 1, 1), PadMode::Replicate)?;
    let mx = zero_sum_correlation(&padded, &SOBEL_X, h, w)?;
    let my = zero_sum_correlation(&padded, &SOBEL_Y, h, w)?;
    Ok((mx, my))
}

/// Source of the horizontal/vertical edge responses.
#[derive(Clone, Debug)]
pub enum EdgeOperator {
    /// Fixed Sobel kernels.
    Sobel,
    /// Learned depthwise 3×3 kernels of the same shape, one pair per level.
    Learned { kx: ParamId, ky: ParamId },
}

impl EdgeOperator {
    pub fn learned<T: Element>(b: &mut Builder<'_, T>, channels: usize) -> Result<Self> {
        let std = (2.0_f64 / 9.0).sqrt();
        Ok(EdgeOperator::Learned {
            kx: b.normal("kx", &[channels, 1, 3, 3], std)?,
            ky: b.normal("ky", &[channels, 1, 3, 3], std)?,
        })
    }

    pub fn responses<T: Element>(
        &self,
        ctx: &Ctx<'_, T>,
        f: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        match self {
            EdgeOperator::Sobel => sobel_gradients(f),
            EdgeOperator::Learned { kx, ky } => {
                let c = f.dims()[1];
                let padded = f.pad2d((1, 1, 1, 1), PadMode::Replicate)?;
                let mx = conv2d(&padded, ctx.param(*kx), None, 1, 0, c)?;
                let my = conv2d(&padded, ctx.param(*ky), None, 1, 0, c)?;
                note_conv(mx.dims(), 1, 3);
                note_conv(my.dims(), 1, 3);
                Ok((mx, my))
            }
        }
    }
}

/// Fixed `2C → C` 1×1 projection averaging channel `c` of `M_x` with
/// channel `c` of `M_y`.
fn averaging_projection<T: Element>(channels: usize) -> Result<Tensor<T>> {
    let mut k = vec![T::zero(); channels * 2 * channels];
    for c in 0..channels {
        k[c * 2 * channels + c] = T::lit(0.5);
        k[c * 2 * channels + channels + c] = T::lit(0.5);
    }
    Ok(Tensor::new(k, &[channels, 2 * channels, 1, 1])?)
}

/// `F_e = F_c ⊙ σ(P·[M_x ‖ M_y])` with `P` the fixed averaging projection.
pub fn bem_enhance<T: Element>(
    ctx: &Ctx<'_, T>,
    edges: &EdgeOperator,
    f_c: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (mx, my) = edges.responses(ctx, f_c)?;
    let c = f_c.dims()[1];
    let mxy = concat_channels(&[&mx, &my])?;
    let gate = conv2d(&mxy, &averaging_projection(c)?, None, 1, 0, 1)?;
    note_conv(gate.dims(), 2 * c, 1);
    let gate = gate.sigmoid();
    Ok(f_c.mul(&gate)?)
}

/// Boundary feature and boundary logits at the shallow level's resolution.
#[derive(Clone, Debug)]
pub struct BoundaryBundle<T: Element> {
    pub feature: Tensor<T>,
    pub logits: Tensor<T>,
}

/// Edge gating of the shallowest and deepest encoder levels followed by
/// their fusion into a boundary feature and a one-channel boundary head.
#[derive(Clone, Debug)]
pub struct BoundaryExtractor {
    pub shallow_edges: EdgeOperator,
    pub deep_edges: EdgeOperator,
    pub deep_proj: Conv2d,
    pub deep_align: Conv2d,
    pub shallow_proj: Conv2d,
    pub fuse: Vec<ConvBnRelu>,
    pub head: Conv2d,
    pub channels: usize,
}

impl BoundaryExtractor {
    pub fn new<T: Element>(
        b: &mut Builder<'_, T>,
        shallow_channels: usize,
        deep_channels: usize,
        channels: usize,
        learned_edges: bool,
    ) -> Result<Self> {
        let (shallow_edges, deep_edges) = if learned_edges {
            (
                b.nest("edges1", |b| EdgeOperator::learned(b, shallow_channels))?,
                b.nest("edges4", |b| EdgeOperator::learned(b, deep_channels))?,
            )
        } else {
            (EdgeOperator::Sobel, EdgeOperator::Sobel)
        };
        Ok(BoundaryExtractor {
            shallow_edges,
            deep_edges,
            deep_proj: b.conv("deep_proj", ConvSpec::same(deep_channels, channels, 1))?,
            deep_align: b.conv("deep_align", ConvSpec::same(channels, channels, 1))?,
            shallow_proj: b.conv("shallow_proj", ConvSpec::same(shallow_channels, channels, 1))?,
            fuse: vec![
                b.conv_bn_relu("fuse1", ConvSpec::same(2 * channels, channels, 3))?,
                b.conv_bn_relu("fuse2", ConvSpec::same(channels, channels, 3))?,
            ],
            head: b.conv("head", ConvSpec::same(channels, 1, 1))?,
            channels,
        })
    }

    /// Gates `f1` and `f4` with their edge responses, then fuses.
    pub fn forward<T: Element>(
        &self,
        ctx: &Ctx<'_, T>,
        f1: &Tensor<T>,
        f4: &Tensor<T>,
    ) -> Result<BoundaryBundle<T>> {
        let e1 = bem_enhance(ctx, &self.shallow_edges, f1)?;
        let e4 = bem_enhance(ctx, &self.deep_edges, f4)?;
        self.fuse(ctx, &e1, &e4)
    }

    /// Fuses gated features `e1` (`H/4`) and `e4` (`H/32`).
    pub fn fuse<T: Element>(
        &self,
        ctx: &Ctx<'_, T>,
        e1: &Tensor<T>,
        e4: &Tensor<T>,
    ) -> Result<BoundaryBundle<T>> {
        let (_, _, h1, w1) = e1.shape().nchw("bem_fuse")?;
        let (_, _, h4, w4) = e4.shape().nchw("bem_fuse")?;
        if h1 != 8 * h4 || w1 != 8 * w4 {
            return Err(TensorError::invalid(
                "bem_fuse",
                format!("shallow level {h1}×{w1} is not 8× the deep level {h4}×{w4}"),
            )
            .into());
        }
        let deep = self.deep_proj.forward(ctx, e4)?.upsample_bilinear(h1, w1)?;
        let deep = self.deep_align.forward(ctx, &deep)?;
        let shallow = self.shallow_proj.forward(ctx, e1)?;
        let feature = chain(ctx, &self.fuse, &concat_channels(&[&shallow, &deep])?)?;
        let logits = self.head.forward(ctx, &feature)?;
        Ok(BoundaryBundle { feature, logits })
    }

    pub fn param_count(&self) -> usize {
        let learned = |e: &EdgeOperator, c: usize| match e {
            EdgeOperator::Sobel => 0,
            EdgeOperator::Learned { .. } => 2 * c * 9,
        };
        learned(&self.shallow_edges, self.shallow_proj.spec.cin)
            + learned(&self.deep_edges, self.deep_proj.spec.cin)
            + self.deep_proj.spec.param_count()
            + self.deep_align.spec.param_count()
            + self.shallow_proj.spec.param_count()
            + self.fuse.iter().map(ConvBnRelu::param_count).sum::<usize>()
            + self.head.spec.param_count()
    }
}

/// Dual-path decoder block.
///
/// * foreground: `ConvBnRelu×2([F_b ‖ skip ‖ prev])`
/// * background: `ConvBnRelu×3((1 − σ(reduce(prev))) ⊙ skip)` with `reduce`
///   a 1×1 conv to a single map broadcast over the skip channels
/// * output: `ConvBnRelu([fg ‖ bg ‖ prev])`
#[derive(Clone, Debug)]
pub struct InjectionBlock {
    pub foreground: Vec<ConvBnRelu>,
    pub reduce: Conv2d,
    pub background: Vec<ConvBnRelu>,
    pub merge: ConvBnRelu,
}

impl InjectionBlock {
    pub fn new<T: Element>(
        b: &mut Builder<'_, T>,
        boundary: usize,
        skip: usize,
        prev: usize,
        out: usize,
    ) -> Result<Self> {
        Ok(InjectionBlock {
            foreground: vec![
                b.conv_bn_relu("fg1", ConvSpec::same(boundary + skip + prev, out, 3))?,
                b.conv_bn_relu("fg2", ConvSpec::same(out, out, 3))?,
            ],
            reduce: b.conv("reduce", ConvSpec::same(prev, 1, 1))?,
            background: vec![
                b.conv_bn_relu("bg1", ConvSpec::same(skip, out, 3))?,
                b.conv_bn_relu("bg2", ConvSpec::same(out, out, 3))?,
                b.conv_bn_relu("bg3", ConvSpec::same(out, out, 3))?,
            ],
            merge: b.conv_bn_relu("merge", ConvSpec::same(2 * out + prev, out, 3))?,
        })
    }

    /// All inputs share spatial dims; the caller resizes `f_b` and `prev`.
    pub fn forward<T: Element>(
        &self,
        ctx: &Ctx<'_, T>,
        f_b: &Tensor<T>,
        skip: &Tensor<T>,
        prev: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let fg = chain(ctx, &self.foreground, &concat_channels(&[f_b, skip, prev])?)?;
        let attn = background_attention(&self.reduce.forward(ctx, prev)?);
        let gated = attn.expand_channels(skip.dims()[1])?.mul(skip)?;
        let bg = chain(ctx, &self.background, &gated)?;
        self.merge.forward(ctx, &concat_channels(&[&fg, &bg, prev])?)
    }

    pub fn param_count(&self) -> usize {
        self.foreground.iter().map(ConvBnRelu::param_count).sum::<usize>()
            + self.reduce.spec.param_count()
            + self.background.iter().map(ConvBnRelu::param_count).sum::<usize>()
            + self.merge.param_count()
    }
}

/// `1 − σ(x)`, the complement of the foreground attention.
pub fn background_attention<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.sigmoid().one_minus()
}

#[cfg(test)]
mod tests {
    use cto_tensor::{BnMode, ParamStore};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random(seed: u64, dims: &[usize]) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = dims.iter().product();
        Tensor::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), dims).unwrap()
    }

    #[test]
    fn kernels_are_zero_sum_and_transposed() {
        for k in [SOBEL_X, SOBEL_Y] {
            assert_eq!(k.iter().flatten().sum::<f64>(), 0.0);
        }
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(SOBEL_X[i][j], SOBEL_Y[j][i]);
            }
        }
    }

    #[test]
    fn constant_input_has_no_edges_and_halves_under_gating() {
        let f = Tensor::<f64>::full(&[1, 2, 5, 5], 0.7).unwrap();
        let (mx, my) = sobel_gradients(&f).unwrap();
        assert!(mx.data().iter().chain(my.data()).all(|&v| v == 0.0));
        let store = ParamStore::new();
        let e = bem_enhance(&Ctx::new(&store, BnMode::Eval), &EdgeOperator::Sobel, &f).unwrap();
        assert!(e.data().iter().all(|&v| v == 0.7 * 0.5));
    }

    #[test]
    fn horizontal_ramp_gives_eight() {
        let data = (0..36).map(|i| (i % 6) as f64).collect();
        let f = Tensor::new(data, &[1, 1, 6, 6]).unwrap();
        let (mx, my) = sobel_gradients(&f).unwrap();
        for r in 1..5 {
            for c in 1..5 {
                assert_eq!(mx.data()[r * 6 + c], 8.0);
                assert_eq!(my.data()[r * 6 + c], 0.0);
            }
        }
    }

    #[test]
    fn gating_never_grows_magnitude() {
        let store = ParamStore::new();
        let f = random(2, &[2, 3, 6, 7]);
        let e = bem_enhance(&Ctx::new(&store, BnMode::Eval), &EdgeOperator::Sobel, &f).unwrap();
        for (a, b) in e.data().iter().zip(f.data()) {
            assert!(a.abs() <= b.abs());
        }
    }

    #[test]
    fn fusion_rejects_wrong_ratio() {
        let mut store = ParamStore::<f32>::new();
        let bem = BoundaryExtractor::new(&mut Builder::new(&mut store, 0), 4, 8, 4, false).unwrap();
        let ctx = Ctx::new(&store, BnMode::Eval);
        let e1 = Tensor::zeros(&[1, 4, 16, 16]).unwrap();
        assert!(bem.fuse(&ctx, &e1, &Tensor::zeros(&[1, 8, 4, 4]).unwrap()).is_err());
        let out = bem.fuse(&ctx, &e1, &Tensor::zeros(&[1, 8, 2, 2]).unwrap()).unwrap();
        assert_eq!(out.logits.dims(), &[1, 1, 16, 16]);
    }

    #[test]
    fn attention_maps_sum_to_one() {
        let x = random(4, &[1, 1, 4, 4]).scale(5.0);
        let fg = x.sigmoid();
        let bg = background_attention(&x);
        for (a, b) in fg.data().iter().zip(bg.data()) {
            assert_eq!(a + b, 1.0);
        }
    }
}
