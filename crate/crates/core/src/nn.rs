//! Parameterized building blocks shared by every part of the network.
//!
//! Layers only hold [`ParamId`]s; values live in a [`ParamStore`] so that one
//! wiring can be evaluated against different parameter sets (an `f32` model
//! and its `f64` twin, or a checkpoint loaded from disk).

use std::cell::RefCell;

use cto_tensor::{
    batch_norm, conv2d, profile, BnMode, Element, ParamId, ParamStore, StatsId, Tensor, BN_EPS,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;

/// Everything a forward pass reads besides its input.
#[derive(Clone, Copy)]
pub struct Ctx<'a, T: Element> {
    pub store: &'a ParamStore<T>,
    pub mode: BnMode,
}

impl<'a, T: Element> Ctx<'a, T> {
    pub fn new(store: &'a ParamStore<T>, mode: BnMode) -> Self {
        Ctx { store, mode }
    }

    pub fn param(&self, id: ParamId) -> &'a Tensor<T> {
        self.store.get(id)
    }
}

/// Allocates named parameters in a store with seeded initialization.
///
/// Draws happen in construction order, so the same seed and wiring give the
/// same values at any element type.
pub struct Builder<'a, T: Element> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
    path: Vec<String>,
}

impl<'a, T: Element> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, seed: u64) -> Self {
        Builder {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
            path: Vec::new(),
        }
    }

    pub fn nest<R>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<R>) -> Result<R> {
        self.path.push(name.to_owned());
        let out = f(self);
        self.path.pop();
        out
    }

    fn full_name(&self, leaf: &str) -> String {
        let mut parts = self.path.clone();
        parts.push(leaf.to_owned());
        parts.join(".")
    }

    /// Normal draws with standard deviation `std`.
    pub fn normal(&mut self, leaf: &str, dims: &[usize], std: f64) -> Result<ParamId> {
        let n: usize = dims.iter().product();
        let dist = Normal::new(0.0, std).expect("std is finite and non-negative");
        let data = (0..n).map(|_| T::lit(dist.sample(&mut self.rng))).collect();
        self.tensor(leaf, Tensor::new(data, dims)?)
    }

    pub fn constant(&mut self, leaf: &str, dims: &[usize], value: f64) -> Result<ParamId> {
        self.tensor(leaf, Tensor::full(dims, T::lit(value))?)
    }

    pub fn tensor(&mut self, leaf: &str, value: Tensor<T>) -> Result<ParamId> {
        let name = self.full_name(leaf);
        Ok(self.store.add(name, value)?)
    }

    pub fn stats(&mut self, leaf: &str, channels: usize) -> Result<StatsId> {
        let name = self.full_name(leaf);
        Ok(self.store.add_stats(name, channels)?)
    }

    pub fn conv(&mut self, name: &str, spec: ConvSpec) -> Result<Conv2d> {
        self.nest(name, |b| Conv2d::new(b, spec))
    }

    pub fn conv_bn_relu(&mut self, name: &str, spec: ConvSpec) -> Result<ConvBnRelu> {
        self.nest(name, |b| {
            Ok(ConvBnRelu {
                conv: b.conv("conv", spec.no_bias())?,
                bn: b.nest("bn", |b| BatchNorm2d::new(b, spec.cout))?,
            })
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// Stride 1, "same" padding, dense, with bias.
    pub fn same(cin: usize, cout: usize, kernel: usize) -> Self {
        ConvSpec {
            cin,
            cout,
            kernel,
            stride: 1,
            padding: kernel / 2,
            groups: 1,
            bias: true,
        }
    }

    pub fn stride(self, stride: usize) -> Self {
        ConvSpec { stride, ..self }
    }

    pub fn padding(self, padding: usize) -> Self {
        ConvSpec { padding, ..self }
    }

    pub fn groups(self, groups: usize) -> Self {
        ConvSpec { groups, ..self }
    }

    pub fn no_bias(self) -> Self {
        ConvSpec { bias: false, ..self }
    }

    pub fn fan_in(&self) -> usize {
        self.cin / self.groups * self.kernel * self.kernel
    }

    pub fn param_count(&self) -> usize {
        self.cout * self.fan_in() + if self.bias { self.cout } else { 0 }
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
}

impl Conv2d {
    /// Kaiming fan-in normal weights, zero bias.
    pub fn new<T: Element>(b: &mut Builder<'_, T>, spec: ConvSpec) -> Result<Self> {
        let std = (2.0 / spec.fan_in() as f64).sqrt();
        let weight = b.normal(
            "weight",
            &[spec.cout, spec.cin / spec.groups, spec.kernel, spec.kernel],
            std,
        )?;
        let bias = if spec.bias {
            Some(b.constant("bias", &[spec.cout], 0.0)?)
        } else {
            None
        };
        Ok(Conv2d { weight, bias, spec })
    }

    pub fn forward<T: Element>(&self, ctx: &Ctx<'_, T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = &self.spec;
        let y = conv2d(
            x,
            ctx.param(self.weight),
            self.bias.map(|id| ctx.param(id)),
            s.stride,
            s.padding,
            s.groups,
        )?;
        note_conv(y.dims(), s.cin / s.groups, s.kernel);
        Ok(y)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: StatsId,
    pub channels: usize,
}

impl BatchNorm2d {
    pub fn new<T: Element>(b: &mut Builder<'_, T>, channels: usize) -> Result<Self> {
        Ok(BatchNorm2d {
            gamma: b.constant("gamma", &[channels], 1.0)?,
            beta: b.constant("beta", &[channels], 0.0)?,
            stats: b.stats("running", channels)?,
            channels,
        })
    }

    pub fn forward<T: Element>(&self, ctx: &Ctx<'_, T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(batch_norm(
            x,
            ctx.param(self.gamma),
            ctx.param(self.beta),
            ctx.store.stats(self.stats),
            ctx.mode,
            BN_EPS,
        )?)
    }
}

/// Bias-free convolution, batch normalization, ReLU.
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBnRelu {
    pub fn forward<T: Element>(&self, ctx: &Ctx<'_, T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.conv.forward(ctx, x)?;
        Ok(self.bn.forward(ctx, &y)?.relu())
    }

    pub fn param_count(&self) -> usize {
        self.conv.spec.param_count() + 2 * self.bn.channels
    }
}

/// Applies `layers` in order.
pub fn chain<T: Element>(
    ctx: &Ctx<'_, T>,
    layers: &[ConvBnRelu],
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut y = x.clone();
    for layer in layers {
        y = layer.forward(ctx, &y)?;
    }
    Ok(y)
}

thread_local! {
    static CONV_TRACE: RefCell<Option<Vec<(String, u64)>>> = const { RefCell::new(None) };
}

/// Runs `f` and returns, for every convolution it executed, the scope path
/// and the closed-form MAC count `N·Cout·(Cin/groups)·k²·H'·W'`.
pub fn trace_convs<R>(f: impl FnOnce() -> R) -> (R, Vec<(String, u64)>) {
    let outer = CONV_TRACE.with(|t| t.borrow_mut().replace(Vec::new()));
    let out = f();
    let trace = CONV_TRACE.with(|t| std::mem::replace(&mut *t.borrow_mut(), outer));
    (out, trace.unwrap_or_default())
}

/// Adds one convolution with output dims `out` to the active trace.
pub fn note_conv(out: &[usize], cin_per_group: usize, kernel: usize) {
    CONV_TRACE.with(|t| {
        if let Some(trace) = t.borrow_mut().as_mut() {
            let macs = out.iter().product::<usize>() * cin_per_group * kernel * kernel;
            trace.push((profile::current_scope(), macs as u64));
        }
    });
}

/// Runs `f` with MACs attributed to `name` in the active ledger.
pub fn scoped<R>(name: &str, f: impl FnOnce() -> R) -> R {
    profile::scope(name, f)
}
