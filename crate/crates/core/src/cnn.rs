//! Multi-scale convolutional encoder: a strided stem followed by four stages
//! of cascaded-group residual modules, yielding features at strides 4, 8, 16
//! and 32.

use cto_tensor::{concat_channels, Element, Tensor, TensorError};

use crate::error::Result;
use crate::nn::{BatchNorm2d, Builder, Conv2d, ConvBnRelu, ConvSpec, Ctx};

/// Number of channel groups inside one residual module.
pub const SCALES: usize = 4;

/// Residual module whose 3×3 path is split into [`SCALES`] cascaded groups.
///
/// After the input 1×1 conv the features are split into `X1..X4`;
/// `Y1 = X1` and `Yi = conv3×3(Xi + Y(i-1))`. The concatenated groups go
/// through a 1×1 conv and are added to the (projected) input.
#[derive(Clone, Debug)]
pub struct Res2Module {
    pub conv_in: ConvBnRelu,
    pub scale_convs: Vec<ConvBnRelu>,
    pub conv_out: Conv2d,
    pub bn_out: BatchNorm2d,
    pub shortcut: Option<(Conv2d, BatchNorm2d)>,
    /// 2×2 average pooling applied to the input of both paths.
    pub downsample: bool,
    pub width: usize,
}

impl Res2Module {
    pub fn new<T: Element>(
        b: &mut Builder<'_, T>,
        cin: usize,
        cout: usize,
        downsample: bool,
    ) -> Result<Self> {
        if !cout.is_multiple_of(SCALES) {
            return Err(TensorError::invalid(
                "res2_module",
                format!("channel count {cout} is not divisible by {SCALES}"),
            )
            .into());
        }
        let width = cout / SCALES;
        let conv_in = b.conv_bn_relu("conv_in", ConvSpec::same(cin, cout, 1))?;
        let scale_convs = (1..SCALES)
            .map(|i| b.conv_bn_relu(&format!("scale{i}"), ConvSpec::same(width, width, 3)))
            .collect::<Result<Vec<_>>>()?;
        let conv_out = b.conv("conv_out", ConvSpec::same(cout, cout, 1).no_bias())?;
        let bn_out = b.nest("bn_out", |b| BatchNorm2d::new(b, cout))?;
        let shortcut = if cin != cout {
            Some(b.nest("shortcut", |b| {
                Ok((
                    b.conv("conv", ConvSpec::same(cin, cout, 1).no_bias())?,
                    b.nest("bn", |b| BatchNorm2d::new(b, cout))?,
                ))
            })?)
        } else {
            None
        };
        Ok(Res2Module {
            conv_in,
            scale_convs,
            conv_out,
            bn_out,
            shortcut,
            downsample,
            width,
        })
    }

    pub fn forward<T: Element>(&self, ctx: &Ctx<'_, T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let x = if self.downsample {
            x.avg_pool2d(2)?
        } else {
            x.clone()
        };
        let h = self.conv_in.forward(ctx, &x)?;
        let mut ys = vec![h.slice_channels(0, self.width)?];
        for (i, conv) in self.scale_convs.iter().enumerate() {
            let xi = h.slice_channels((i + 1) * self.width, self.width)?;
            let prev = ys.last().expect("Y1 is present");
            ys.push(conv.forward(ctx, &xi.add(prev)?)?);
        }
        let parts: Vec<&Tensor<T>> = ys.iter().collect();
        let merged = self.conv_out.forward(ctx, &concat_channels(&parts)?)?;
        let merged = self.bn_out.forward(ctx, &merged)?;
        let skip = match &self.shortcut {
            Some((conv, bn)) => bn.forward(ctx, &conv.forward(ctx, &x)?)?,
            None => x,
        };
        Ok(merged.add(&skip)?.relu())
    }

    pub fn param_count(&self) -> usize {
        let c = self.bn_out.channels;
        self.conv_in.param_count()
            + self.scale_convs.iter().map(ConvBnRelu::param_count).sum::<usize>()
            + self.conv_out.spec.param_count()
            + 2 * c
            + self
                .shortcut
                .as_ref()
                .map_or(0, |(conv, _)| conv.spec.param_count() + 2 * c)
    }
}

/// Encoder outputs at strides 4, 8, 16 and 32.
#[derive(Clone, Debug)]
pub struct EncoderFeatures<T: Element> {
    pub f1: Tensor<T>,
    pub f2: Tensor<T>,
    pub f3: Tensor<T>,
    pub f4: Tensor<T>,
}

impl<T: Element> EncoderFeatures<T> {
    pub fn levels(&self) -> [&Tensor<T>; 4] {
        [&self.f1, &self.f2, &self.f3, &self.f4]
    }
}

#[derive(Clone, Debug)]
pub struct CnnStream {
    pub stem: ConvBnRelu,
    pub stages: Vec<Vec<Res2Module>>,
    pub channels: [usize; 4],
}

impl CnnStream {
    pub fn new<T: Element>(
        b: &mut Builder<'_, T>,
        in_channels: usize,
        channels: [usize; 4],
        depths: [usize; 4],
    ) -> Result<Self> {
        let stem = b.conv_bn_relu(
            "stem",
            ConvSpec::same(in_channels, channels[0], 7).stride(2).no_bias(),
        )?;
        let mut stages = Vec::with_capacity(4);
        let mut cin = channels[0];
        for (s, (&cout, &depth)) in channels.iter().zip(&depths).enumerate() {
            let stage = b.nest(&format!("stage{}", s + 1), |b| {
                (0..depth.max(1))
                    .map(|i| {
                        let (ci, down) = if i == 0 { (cin, s > 0) } else { (cout, false) };
                        b.nest(&format!("block{i}"), |b| Res2Module::new(b, ci, cout, down))
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
            stages.push(stage);
            cin = cout;
        }
        Ok(CnnStream {
            stem,
            stages,
            channels,
        })
    }

    pub fn forward<T: Element>(
        &self,
        ctx: &Ctx<'_, T>,
        image: &Tensor<T>,
    ) -> Result<EncoderFeatures<T>> {
        check_divisible("encoder", image, 32)?;
        let x = self.stem.forward(ctx, image)?.max_pool2d(3, 2, 1)?;
        let mut feats = Vec::with_capacity(4);
        let mut y = x;
        for stage in &self.stages {
            for module in stage {
                y = module.forward(ctx, &y)?;
            }
            feats.push(y.clone());
        }
        let mut it = feats.into_iter();
        let mut next = || it.next().expect("four stages");
        Ok(EncoderFeatures {
            f1: next(),
            f2: next(),
            f3: next(),
            f4: next(),
        })
    }

    pub fn param_count(&self) -> usize {
        self.stem.param_count()
            + self
                .stages
                .iter()
                .flatten()
                .map(Res2Module::param_count)
                .sum::<usize>()
    }
}

/// Errors unless the spatial dims of an NCHW tensor are multiples of `multiple`.
pub fn check_divisible<T: Element>(op: &'static str, x: &Tensor<T>, multiple: usize) -> Result<()> {
    let (_, _, h, w) = x.shape().nchw(op)?;
    if h % multiple != 0 || w % multiple != 0 {
        return Err(TensorError::invalid(
            op,
            format!("input size {h}×{w} must be a multiple of {multiple} in both dimensions"),
        )
        .into());
    }
    Ok(())
}
