//! The full network: dual-stream encoder, boundary extraction, a three-level
//! boundary-guided decoder and one prediction head per decoder level.

use std::fmt;
use std::str::FromStr;

use cto_tensor::{concat_channels, BnMode, Element, ParamStore, Tensor};
use serde::Serialize;

use crate::boundary::{BoundaryExtractor, InjectionBlock};
use crate::cnn::{check_divisible, CnnStream};
use crate::error::{CtoError, Result};
use crate::nn::{chain, scoped, Builder, Conv2d, ConvBnRelu, ConvSpec, Ctx};
use crate::stitch::{StitchConfig, StitchVit};

/// Number of decoder levels, each with its own supervised head.
pub const LEVELS: usize = 3;

/// Which encoder streams and boundary components are present.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Variant {
    CnnOnly,
    VitOnly,
    Dual,
    /// Dual encoder with learned edge kernels in place of Sobel.
    DualCbm,
    /// Dual encoder with Sobel boundary extraction and a plain decoder.
    DualBem,
    /// Dual encoder, Sobel boundary extraction and boundary injection.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::CnnOnly,
        Variant::VitOnly,
        Variant::Dual,
        Variant::DualCbm,
        Variant::DualBem,
        Variant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::CnnOnly => "cnn_only",
            Variant::VitOnly => "vit_only",
            Variant::Dual => "dual",
            Variant::DualCbm => "dual+cbm",
            Variant::DualBem => "dual+bem",
            Variant::Full => "dual+bem+bim",
        }
    }

    pub fn has_cnn(self) -> bool {
        self != Variant::VitOnly
    }

    pub fn has_vit(self) -> bool {
        self != Variant::CnnOnly
    }

    pub fn has_boundary(self) -> bool {
        matches!(self, Variant::DualCbm | Variant::DualBem | Variant::Full)
    }

    pub fn learned_edges(self) -> bool {
        self == Variant::DualCbm
    }

    pub fn has_injection(self) -> bool {
        self == Variant::Full
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                format!("unknown variant `{s}` (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub stage_channels: [usize; 4],
    pub stage_depths: [usize; 4],
    pub vit: StitchConfig,
    /// Widths of the decoder levels at `H/16`, `H/8`, `H/4`.
    pub decoder_channels: [usize; 3],
    pub boundary_channels: usize,
    /// 1 selects a sigmoid head, more selects softmax.
    pub num_classes: usize,
    pub alpha: f64,
    pub levels: usize,
    pub input_size: (usize, usize),
    pub seed: u64,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 3,
            stage_channels: [16, 32, 64, 128],
            stage_depths: [1, 1, 1, 1],
            vit: StitchConfig::default(),
            decoder_channels: [64, 32, 16],
            boundary_channels: 16,
            num_classes: 2,
            alpha: 3.0,
            levels: LEVELS,
            input_size: (64, 64),
            seed: 0,
            variant: Variant::Full,
        }
    }
}

impl ModelConfig {
    /// Every violated invariant, empty when the config is usable.
    pub fn violations(&self) -> Vec<String> {
        let mut errors = Vec::new();
        if self.in_channels == 0 {
            errors.push("model.in_channels must be positive".into());
        }
        for (i, &c) in self.stage_channels.iter().enumerate() {
            if c == 0 || c % crate::cnn::SCALES != 0 {
                errors.push(format!(
                    "model.stage_channels[{i}] = {c} must be a positive multiple of {}",
                    crate::cnn::SCALES
                ));
            }
        }
        if self.stage_depths.contains(&0) {
            errors.push("model.stage_depths must all be at least 1".into());
        }
        if self.decoder_channels.contains(&0) || self.boundary_channels == 0 {
            errors.push("decoder and boundary widths must be positive".into());
        }
        if self.num_classes == 0 {
            errors.push("model.num_classes must be at least 1".into());
        }
        if !(self.alpha > 0.0) {
            errors.push(format!("loss.alpha = {} must be positive", self.alpha));
        }
        if self.levels != LEVELS {
            errors.push(format!("model.levels = {} must be {LEVELS}", self.levels));
        }
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            errors.push(format!("model.input_size {h}×{w} must be a positive multiple of 32"));
        }
        self.vit.validate(&mut errors);
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

    pub fn with_variant(&self, variant: Variant) -> Self {
        ModelConfig {
            variant,
            ..self.clone()
        }
    }
}

/// The six encoder/boundary combinations, in increasing order of components.
pub fn ablation_variants(config: &ModelConfig) -> Vec<(String, ModelConfig)> {
    Variant::ALL
        .into_iter()
        .map(|v| (v.name().to_owned(), config.with_variant(v)))
        .collect()
}

/// Decoder level: boundary injection, or a concat-and-convolve block when
/// injection is disabled.
#[derive(Clone, Debug)]
pub enum DecoderBlock {
    Injection(Box<InjectionBlock>),
    Plain(Vec<ConvBnRelu>),
}

impl DecoderBlock {
    fn param_count(&self) -> usize {
        match self {
            DecoderBlock::Injection(b) => b.param_count(),
            DecoderBlock::Plain(layers) => layers.iter().map(ConvBnRelu::param_count).sum(),
        }
    }
}

/// Wiring of the network; parameter values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Network {
    pub config: ModelConfig,
    pub cnn: Option<CnnStream>,
    pub vit: Option<StitchVit>,
    pub bottleneck: ConvBnRelu,
    pub boundary: Option<BoundaryExtractor>,
    /// Per-level 1×1 conv applied to the resized boundary feature.
    pub boundary_taps: Vec<Conv2d>,
    pub decoder: Vec<DecoderBlock>,
    pub heads: Vec<Conv2d>,
}

/// Seg logits per decoder level (coarsest first), each `[N, classes, H, W]`,
/// and boundary logits `[N, 1, H/4, W/4]` when a boundary module exists.
#[derive(Clone, Debug)]
pub struct ModelOutputs<T: Element> {
    pub seg_logits: Vec<Tensor<T>>,
    pub boundary_logits: Option<Tensor<T>>,
}

impl<T: Element> ModelOutputs<T> {
    /// Logits of the finest decoder level.
    pub fn final_logits(&self) -> &Tensor<T> {
        self.seg_logits.last().expect("at least one level")
    }
}

impl Network {
    pub fn build<T: Element>(config: &ModelConfig, store: &mut ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let v = config.variant;
        let c = config.stage_channels;
        let mut b = Builder::new(store, config.seed);
        let cnn = if v.has_cnn() {
            Some(b.nest("cnn", |b| {
                CnnStream::new(b, config.in_channels, c, config.stage_depths)
            })?)
        } else {
            None
        };
        let vit = if v.has_vit() {
            Some(b.nest("vit", |b| {
                StitchVit::new(b, config.in_channels, &config.vit, [c[1], c[2], c[3]])
            })?)
        } else {
            None
        };
        let skips = if v.has_cnn() {
            [c[0], c[1], c[2]]
        } else {
            [config.vit.channels, c[1], c[2]]
        };
        let deep = if v.has_cnn() && v.has_vit() { 2 * c[3] } else { c[3] };
        let bottleneck = b.conv_bn_relu("bottleneck", ConvSpec::same(deep, c[3], 3))?;
        let cb = config.boundary_channels;
        let boundary = if v.has_boundary() {
            Some(b.nest("bem", |b| {
                BoundaryExtractor::new(b, c[0], c[3], cb, v.learned_edges())
            })?)
        } else {
            None
        };
        let mut boundary_taps = Vec::new();
        let mut decoder = Vec::with_capacity(LEVELS);
        let mut heads = Vec::with_capacity(LEVELS);
        let mut prev = c[3];
        for level in 0..LEVELS {
            let skip = skips[LEVELS - 1 - level];
            let out = config.decoder_channels[level];
            let fb = if boundary.is_some() { cb } else { 0 };
            b.nest(&format!("decoder.level{}", level + 1), |b| {
                if boundary.is_some() {
                    boundary_taps.push(b.conv("boundary_tap", ConvSpec::same(cb, cb, 1))?);
                }
                let block = if v.has_injection() {
                    DecoderBlock::Injection(Box::new(b.nest("bim", |b| {
                        InjectionBlock::new(b, fb, skip, prev, out)
                    })?))
                } else {
                    DecoderBlock::Plain(vec![
                        b.conv_bn_relu("plain1", ConvSpec::same(fb + skip + prev, out, 3))?,
                        b.conv_bn_relu("plain2", ConvSpec::same(out, out, 3))?,
                    ])
                };
                decoder.push(block);
                Ok(())
            })?;
            heads.push(b.conv(
                &format!("heads.level{}", level + 1),
                ConvSpec::same(out, config.num_classes, 1),
            )?);
            prev = out;
        }
        Ok(Network {
            config: config.clone(),
            cnn,
            vit,
            bottleneck,
            boundary,
            boundary_taps,
            decoder,
            heads,
        })
    }

    pub fn forward<T: Element>(&self, ctx: &Ctx<'_, T>, image: &Tensor<T>) -> Result<ModelOutputs<T>> {
        check_divisible("model", image, 32)?;
        let (_, _, h, w) = image.shape().nchw("model")?;
        let cnn = match &self.cnn {
            Some(s) => Some(scoped("cnn", || s.forward(ctx, image))?),
            None => None,
        };
        let vit = match &self.vit {
            Some(s) => Some(scoped("vit", || s.forward(ctx, image))?),
            None => None,
        };
        let (skips, deep): ([Tensor<T>; 3], Vec<&Tensor<T>>) = match (&cnn, &vit) {
            (Some(c), v) => {
                let mut deep = vec![&c.f4];
                deep.extend(v.as_ref().map(|v| v.deepest()));
                ([c.f1.clone(), c.f2.clone(), c.f3.clone()], deep)
            }
            (None, Some(v)) => (
                [v.fused.clone(), v.ladder[0].clone(), v.ladder[1].clone()],
                vec![v.deepest()],
            ),
            (None, None) => unreachable!("every variant has an encoder"),
        };
        let mut x = scoped("bottleneck", || {
            self.bottleneck.forward(ctx, &concat_channels(&deep)?)
        })?;

        let bundle = match (&self.boundary, &cnn) {
            (Some(bem), Some(c)) => Some(scoped("bem", || bem.forward(ctx, &c.f1, &c.f4))?),
            _ => None,
        };

        let mut seg_logits = Vec::with_capacity(LEVELS);
        for level in 0..LEVELS {
            let skip = &skips[LEVELS - 1 - level];
            let (sh, sw) = (skip.dims()[2], skip.dims()[3]);
            x = scoped("decoder", || -> Result<Tensor<T>> {
                let prev = x.upsample_bilinear(sh, sw)?;
                let fb = match &bundle {
                    Some(bd) => {
                        let r = bd.feature.upsample_bilinear(sh, sw)?;
                        Some(self.boundary_taps[level].forward(ctx, &r)?)
                    }
                    None => None,
                };
                match &self.decoder[level] {
                    DecoderBlock::Injection(block) => {
                        let fb = fb.expect("injection implies a boundary module");
                        block.forward(ctx, &fb, skip, &prev)
                    }
                    DecoderBlock::Plain(layers) => {
                        let mut parts: Vec<&Tensor<T>> = fb.iter().collect();
                        parts.push(skip);
                        parts.push(&prev);
                        chain(ctx, layers, &concat_channels(&parts)?)
                    }
                }
            })?;
            let logits = scoped("heads", || self.heads[level].forward(ctx, &x))?;
            seg_logits.push(logits.upsample_bilinear(h, w)?);
        }
        Ok(ModelOutputs {
            seg_logits,
            boundary_logits: bundle.map(|b| b.logits),
        })
    }

    /// Parameter count summed over the layer structure.
    pub fn param_count(&self) -> usize {
        self.cnn.as_ref().map_or(0, CnnStream::param_count)
            + self.vit.as_ref().map_or(0, StitchVit::param_count)
            + self.bottleneck.param_count()
            + self.boundary.as_ref().map_or(0, BoundaryExtractor::param_count)
            + self.boundary_taps.iter().map(|c| c.spec.param_count()).sum::<usize>()
            + self.decoder.iter().map(DecoderBlock::param_count).sum::<usize>()
            + self.heads.iter().map(|c| c.spec.param_count()).sum::<usize>()
    }
}

/// Top-level parameter namespaces, one per architectural component.
pub const COMPONENTS: [&str; 6] = ["cnn", "vit", "bottleneck", "bem", "decoder", "heads"];

/// A network together with its parameter values.
#[derive(Debug)]
pub struct Model<T: Element = f32> {
    pub net: Network,
    pub store: ParamStore<T>,
}

impl<T: Element> Model<T> {
    pub fn build(config: &ModelConfig) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = Network::build(config, &mut store)?;
        Ok(Model { net, store })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    pub fn forward(&self, image: &Tensor<T>, mode: BnMode) -> Result<ModelOutputs<T>> {
        self.net.forward(&Ctx::new(&self.store, mode), image)
    }

    pub fn num_params(&self) -> usize {
        self.store.num_elements()
    }

    /// Parameter count per entry of [`COMPONENTS`].
    pub fn params_by_component(&self) -> Vec<(&'static str, usize)> {
        COMPONENTS
            .iter()
            .map(|&c| {
                let n = self
                    .store
                    .iter()
                    .filter(|(_, p)| p.name.split('.').next() == Some(c))
                    .map(|(_, p)| p.value.numel())
                    .sum();
                (c, n)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("dual+vit".parse::<Variant>().is_err());
    }

    #[test]
    fn violations_are_listed_together() {
        let cfg = ModelConfig {
            num_classes: 0,
            alpha: -1.0,
            input_size: (48, 64),
            ..ModelConfig::default()
        };
        let errors = cfg.violations();
        assert_eq!(errors.len(), 3, "{errors:?}");
    }

    #[test]
    fn structural_count_matches_store() {
        for (_, cfg) in ablation_variants(&ModelConfig::default()) {
            let m = Model::<f32>::build(&cfg).unwrap();
            assert_eq!(m.net.param_count(), m.num_params(), "{}", cfg.variant);
            let by_component: usize = m.params_by_component().iter().map(|(_, n)| n).sum();
            assert_eq!(by_component, m.num_params());
        }
    }
}
