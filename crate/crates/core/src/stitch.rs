//! Transformer stream with stitched (phase-offset strided) self-attention.
//!
//! At stitch rate `s` a feature grid is split into `s²` interleaved
//! sub-grids; phase `(a, b)` (1-based) holds the pixels `(a + i·s, b + j·s)`.
//! Attention runs independently inside each sub-grid, so every token still
//! sees a sparse sample of the whole image while the token-mixing cost drops
//! by `s²` against dense attention.

use cto_tensor::{
    concat, concat_channels, matmul, profile, Element, PadMode, Tensor, TensorError,
};
use serde::Serialize;

use crate::cnn::check_divisible;
use crate::error::Result;
use crate::nn::{scoped, Builder, Conv2d, ConvBnRelu, ConvSpec, Ctx};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StitchConfig {
    /// Ascending stitch rates, one channel group per rate.
    pub rates: Vec<usize>,
    pub heads: usize,
    /// Per-head query/key width.
    pub head_dim: usize,
    /// Width of the stream's own image stem and of the rate-group features.
    pub channels: usize,
}

impl Default for StitchConfig {
    fn default() -> Self {
        StitchConfig {
            rates: vec![2, 4, 8, 16],
            heads: 2,
            head_dim: 4,
            channels: 32,
        }
    }
}

impl StitchConfig {
    pub fn validate(&self, errors: &mut Vec<String>) {
        if self.rates.is_empty() {
            errors.push("vit.rates must not be empty".into());
        }
        if self.rates.windows(2).any(|w| w[0] >= w[1]) {
            errors.push("vit.rates must be strictly ascending".into());
        }
        if self.rates.contains(&0) {
            errors.push("vit.rates must be positive".into());
        }
        if self.heads == 0 || self.head_dim == 0 {
            errors.push("vit.heads and vit.head_dim must be positive".into());
        }
        if self.channels < self.rates.len() {
            errors.push(format!(
                "vit.channels ({}) must be at least the number of rates ({})",
                self.channels,
                self.rates.len()
            ));
        }
    }

    /// Channels per rate group; the remainder goes to the smallest rate.
    pub fn group_channels(&self) -> Vec<usize> {
        let g = self.rates.len();
        let base = self.channels / g;
        let mut out = vec![base; g];
        out[0] += self.channels - base * g;
        out
    }

    pub fn max_rate(&self) -> usize {
        self.rates.iter().copied().max().unwrap_or(1)
    }
}

/// `s²` sub-grids stacked as `[N, s², C, H/s, W/s]`, phase `(a, b)` at
/// index `(a−1)·s + (b−1)`.
#[derive(Clone, Debug)]
pub struct PatchGroup<T: Element> {
    pub tensor: Tensor<T>,
    pub rate: usize,
}

pub fn stitch<T: Element>(x: &Tensor<T>, s: usize) -> Result<PatchGroup<T>> {
    let (n, c, h, w) = x.shape().nchw("stitch")?;
    check_divisible("stitch", x, s)?;
    let (gh, gw) = (h / s, w / s);
    let mut phases = Vec::with_capacity(s * s);
    for a in 1..=s {
        for b in 1..=s {
            phases.push(x.strided_subsample(s, a, b)?.reshape(&[n, 1, c, gh, gw])?);
        }
    }
    let parts: Vec<&Tensor<T>> = phases.iter().collect();
    Ok(PatchGroup {
        tensor: concat(&parts, 1)?,
        rate: s,
    })
}

/// Inverse of [`stitch`], written as a reshape/permute scatter.
pub fn unstitch<T: Element>(g: &PatchGroup<T>, s: usize) -> Result<Tensor<T>> {
    let dims = g.tensor.dims();
    if dims.len() != 5 || dims[1] != s * s {
        return Err(TensorError::invalid(
            "unstitch",
            format!("expected [N, {}, C, h, w] for rate {s}, got {:?}", s * s, dims),
        )
        .into());
    }
    let (n, c, gh, gw) = (dims[0], dims[2], dims[3], dims[4]);
    // [N, a, b, C, i, j] → [N, C, i, a, j, b]
    let t = g.tensor.reshape(&[n, s, s, c, gh, gw])?;
    let t = t.permute(&[0, 3, 4, 1, 5, 2])?;
    Ok(t.reshape(&[n, c, gh * s, gw * s])?)
}

/// Query/key/value projections `[C, heads·d_k]` and output projection
/// `[heads·d_k, C]`. No biases and no positional embedding.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub wq: cto_tensor::ParamId,
    pub wk: cto_tensor::ParamId,
    pub wv: cto_tensor::ParamId,
    pub wo: cto_tensor::ParamId,
    pub heads: usize,
    pub head_dim: usize,
    pub channels: usize,
}

impl AttentionParams {
    pub fn new<T: Element>(
        b: &mut Builder<'_, T>,
        channels: usize,
        heads: usize,
        head_dim: usize,
    ) -> Result<Self> {
        let inner = heads * head_dim;
        let std_in = (1.0 / channels as f64).sqrt();
        let std_out = (1.0 / inner as f64).sqrt();
        Ok(AttentionParams {
            wq: b.normal("wq", &[channels, inner], std_in)?,
            wk: b.normal("wk", &[channels, inner], std_in)?,
            wv: b.normal("wv", &[channels, inner], std_in)?,
            wo: b.normal("wo", &[inner, channels], std_out)?,
            heads,
            head_dim,
            channels,
        })
    }

    pub fn param_count(&self) -> usize {
        4 * self.channels * self.heads * self.head_dim
    }
}

/// Multi-head self-attention inside each sub-grid of `g`.
///
/// MACs are attributed to the scopes `proj` (the four projections),
/// `scores` (`QKᵀ`) and `mix` (attention-weighted values).
pub fn group_mhsa<T: Element>(
    ctx: &Ctx<'_, T>,
    g: &PatchGroup<T>,
    p: &AttentionParams,
) -> Result<PatchGroup<T>> {
    let dims = g.tensor.dims();
    if dims.len() != 5 {
        return Err(TensorError::invalid("group_mhsa", "expected a 5-D patch group").into());
    }
    let (n, patches, c, gh, gw) = (dims[0], dims[1], dims[2], dims[3], dims[4]);
    if c != p.channels {
        return Err(TensorError::DimMismatch {
            op: "group_mhsa",
            dim: "channels",
            lhs: c,
            rhs: p.channels,
        }
        .into());
    }
    let (batch, tokens, heads, dk) = (n * patches, gh * gw, p.heads, p.head_dim);
    let inner = heads * dk;
    let x = g.tensor.reshape(&[batch, c, tokens])?.permute(&[0, 2, 1])?;

    let split_heads = |t: Tensor<T>| -> Result<Tensor<T>> {
        Ok(t.reshape(&[batch, tokens, heads, dk])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[batch * heads, tokens, dk])?)
    };
    let (q, k, v) = scoped("proj", || -> Result<_> {
        Ok((
            split_heads(matmul(&x, ctx.param(p.wq))?)?,
            split_heads(matmul(&x, ctx.param(p.wk))?)?,
            split_heads(matmul(&x, ctx.param(p.wv))?)?,
        ))
    })?;
    let scores = scoped("scores", || matmul(&q, &k.transpose_last()?))?;
    let attn = scores.scale(1.0 / (dk as f64).sqrt()).softmax_lastdim();
    let mixed = scoped("mix", || matmul(&attn, &v))?;
    let merged = mixed
        .reshape(&[batch, heads, tokens, dk])?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[batch, tokens, inner])?;
    let out = scoped("proj", || matmul(&merged, ctx.param(p.wo)))?;
    let out = out.permute(&[0, 2, 1])?.reshape(&[n, patches, c, gh, gw])?;
    Ok(PatchGroup {
        tensor: out,
        rate: g.rate,
    })
}

/// `conv3×3 → ReLU → conv3×3`, channel-preserving.
#[derive(Clone, Debug)]
pub struct ConvFfn {
    pub first: Conv2d,
    pub second: Conv2d,
}

impl ConvFfn {
    pub fn new<T: Element>(b: &mut Builder<'_, T>, channels: usize) -> Result<Self> {
        Ok(ConvFfn {
            first: b.conv("conv1", ConvSpec::same(channels, channels, 3))?,
            second: b.conv("conv2", ConvSpec::same(channels, channels, 3))?,
        })
    }

    pub fn forward<T: Element>(&self, ctx: &Ctx<'_, T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.first.forward(ctx, x)?.relu();
        self.second.forward(ctx, &h)
    }

    pub fn param_count(&self) -> usize {
        self.first.spec.param_count() + self.second.spec.param_count()
    }
}

/// One rate group: stitched attention and a conv FFN, each residual.
#[derive(Clone, Debug)]
pub struct RateBlock {
    pub rate: usize,
    pub attn: AttentionParams,
    pub ffn: ConvFfn,
}

impl RateBlock {
    pub fn forward<T: Element>(&self, ctx: &Ctx<'_, T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let g = stitch(x, self.rate)?;
        let a = unstitch(&group_mhsa(ctx, &g, &self.attn)?, self.rate)?;
        let x = x.add(&a)?;
        Ok(x.add(&self.ffn.forward(ctx, &x)?)?)
    }
}

/// Output of the transformer stream: the `H/32` feature plus the
/// intermediate resolutions of the alignment ladder.
#[derive(Clone, Debug)]
pub struct VitFeatures<T: Element> {
    /// Fused rate outputs at `H/4`.
    pub fused: Tensor<T>,
    /// Ladder outputs at `H/8`, `H/16`, `H/32`.
    pub ladder: Vec<Tensor<T>>,
}

impl<T: Element> VitFeatures<T> {
    pub fn deepest(&self) -> &Tensor<T> {
        self.ladder.last().expect("ladder has three levels")
    }
}

#[derive(Clone, Debug)]
pub struct StitchVit {
    pub cfg: StitchConfig,
    pub stem: ConvBnRelu,
    pub blocks: Vec<RateBlock>,
    pub fuse: ConvBnRelu,
    pub ladder: Vec<ConvBnRelu>,
}

impl StitchVit {
    /// `ladder_channels` are the widths at `H/8`, `H/16` and `H/32`.
    pub fn new<T: Element>(
        b: &mut Builder<'_, T>,
        in_channels: usize,
        cfg: &StitchConfig,
        ladder_channels: [usize; 3],
    ) -> Result<Self> {
        let mut errors = Vec::new();
        cfg.validate(&mut errors);
        if !errors.is_empty() {
            return Err(crate::error::CtoError::InvalidConfig(errors));
        }
        let c = cfg.channels;
        let stem = b.conv_bn_relu(
            "stem",
            ConvSpec::same(in_channels, c, 4).stride(4).padding(0).no_bias(),
        )?;
        let blocks = cfg
            .rates
            .iter()
            .zip(cfg.group_channels())
            .map(|(&rate, cg)| {
                b.nest(&format!("rate{rate}"), |b| {
                    Ok(RateBlock {
                        rate,
                        attn: b.nest("attn", |b| AttentionParams::new(b, cg, cfg.heads, cfg.head_dim))?,
                        ffn: b.nest("ffn", |b| ConvFfn::new(b, cg))?,
                    })
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let fuse = b.conv_bn_relu("fuse", ConvSpec::same(c, c, 3).no_bias())?;
        let mut ladder = Vec::with_capacity(3);
        let mut cin = c;
        for (i, &cout) in ladder_channels.iter().enumerate() {
            ladder.push(b.conv_bn_relu(
                &format!("down{}", i + 1),
                ConvSpec::same(cin, cout, 3).stride(2),
            )?);
            cin = cout;
        }
        Ok(StitchVit {
            cfg: cfg.clone(),
            stem,
            blocks,
            fuse,
            ladder,
        })
    }

    /// Runs the rate groups on `H/4` features, then aligns to `H/32`.
    pub fn forward_features<T: Element>(
        &self,
        ctx: &Ctx<'_, T>,
        f: &Tensor<T>,
    ) -> Result<VitFeatures<T>> {
        let (_, c, h, w) = f.shape().nchw("stitch_vit")?;
        if c != self.cfg.channels {
            return Err(TensorError::DimMismatch {
                op: "stitch_vit",
                dim: "channels",
                lhs: c,
                rhs: self.cfg.channels,
            }
            .into());
        }
        let m = self.cfg.max_rate();
        let (ph, pw) = (h.next_multiple_of(m) - h, w.next_multiple_of(m) - w);
        let padded = if ph + pw > 0 {
            f.pad2d((ph / 2, ph - ph / 2, pw / 2, pw - pw / 2), PadMode::Reflect)?
        } else {
            f.clone()
        };
        let mut outs = Vec::with_capacity(self.blocks.len());
        let mut start = 0;
        for (block, cg) in self.blocks.iter().zip(self.cfg.group_channels()) {
            let part = padded.slice_channels(start, cg)?;
            start += cg;
            outs.push(scoped(&format!("rate{}", block.rate), || {
                block.forward(ctx, &part)
            })?);
        }
        let parts: Vec<&Tensor<T>> = outs.iter().collect();
        let mut y = concat_channels(&parts)?;
        if ph + pw > 0 {
            y = y.crop2d(ph / 2, pw / 2, h, w)?;
        }
        let fused = self.fuse.forward(ctx, &y)?;
        let mut ladder = Vec::with_capacity(3);
        let mut z = fused.clone();
        for layer in &self.ladder {
            z = layer.forward(ctx, &z)?;
            ladder.push(z.clone());
        }
        Ok(VitFeatures { fused, ladder })
    }

    /// Image → stem → rate groups → `H/32` features.
    pub fn forward<T: Element>(&self, ctx: &Ctx<'_, T>, image: &Tensor<T>) -> Result<VitFeatures<T>> {
        let f = self.stem.forward(ctx, image)?;
        self.forward_features(ctx, &f)
    }

    pub fn param_count(&self) -> usize {
        self.stem.param_count()
            + self
                .blocks
                .iter()
                .map(|b| b.attn.param_count() + b.ffn.param_count())
                .sum::<usize>()
            + self.fuse.param_count()
            + self.ladder.iter().map(ConvBnRelu::param_count).sum::<usize>()
    }
}

/// Token-mixing MACs (`QKᵀ`) at one rate, analytic and measured.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateMacs {
    pub rate: usize,
    pub analytic: u64,
    pub measured: u64,
    /// `dense / analytic`, which is `s²`.
    pub reduction: f64,
    /// MACs of the attention-weighted value product, reported separately.
    pub measured_mix: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionMacs {
    /// `n²·d` with `n = grid_h·grid_w`.
    pub dense: u64,
    pub per_rate: Vec<RateMacs>,
}

/// Analytic token-mixing cost of dense and stitched attention over a
/// `grid_h × grid_w × channels` map, with counts measured by running one
/// single-head attention of width `channels` per rate.
pub fn count_attention_macs(
    grid_h: usize,
    grid_w: usize,
    channels: usize,
    rates: &[usize],
) -> Result<AttentionMacs> {
    let n = (grid_h * grid_w) as u64;
    let d = channels as u64;
    let dense = n * n * d;
    let mut store = cto_tensor::ParamStore::<f32>::new();
    let attn = AttentionParams::new(&mut Builder::new(&mut store, 0), channels, 1, channels)?;
    let ctx = Ctx::new(&store, cto_tensor::BnMode::Eval);
    let x = Tensor::<f32>::zeros(&[1, channels, grid_h, grid_w])?;
    let mut per_rate = Vec::with_capacity(rates.len());
    for &s in rates {
        let s2 = (s * s) as u64;
        let analytic = dense / s2;
        let (res, ledger) = profile::measure(|| -> Result<_> {
            cto_tensor::no_grad(|| group_mhsa(&ctx, &stitch(&x, s)?, &attn))
        });
        res?;
        per_rate.push(RateMacs {
            rate: s,
            analytic,
            measured: ledger.leaf("scores"),
            reduction: dense as f64 / analytic as f64,
            measured_mix: ledger.leaf("mix"),
        });
    }
    Ok(AttentionMacs { dense, per_rate })
}
