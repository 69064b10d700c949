//! Spatial resampling over `[N, C, H, W]`: bilinear resize, pooling,
//! border padding and cropping.

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::shape::Shape;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    /// Mirror about the edge pixel, which is not repeated.
    Reflect,
    /// Repeat the edge pixel.
    Replicate,
}

/// Source taps of one output coordinate under the half-pixel
/// (align-corners = false) convention.
fn bilinear_taps(out: usize, input: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / out as f64;
    (0..out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Maps a possibly out-of-range coordinate back into `0..len`.
fn border_index(i: isize, len: usize, mode: PadMode) -> usize {
    let n = len as isize;
    match mode {
        PadMode::Replicate => i.clamp(0, n - 1) as usize,
        PadMode::Reflect => {
            if n == 1 {
                return 0;
            }
            let period = 2 * (n - 1);
            let m = i.rem_euclid(period);
            (if m < n { m } else { period - m }) as usize
        }
    }
}

/// Linear map from input elements to output elements, as weighted taps.
/// Applies it forward and scatters its transpose backward.
fn linear_map<T: Element>(
    x: &Tensor<T>,
    shape: Shape,
    op: &'static str,
    taps: Vec<[(usize, T); 4]>,
) -> Tensor<T> {
    let out = taps
        .iter()
        .map(|t| {
            t.iter()
                .fold(T::zero(), |acc, &(i, w)| acc + w * x.data()[i])
        })
        .collect();
    let n = x.numel();
    Tensor::from_op(shape, out, op, &[x], move |g| {
        let mut dx = vec![T::zero(); n];
        for (t, &gv) in taps.iter().zip(g) {
            for &(i, w) in t {
                dx[i] += w * gv;
            }
        }
        vec![Some(dx)]
    })
}

impl<T: Element> Tensor<T> {
    /// Bilinear resize with align-corners = false. Same-size resizes are
    /// the identity and constant maps stay constant.
    pub fn upsample_bilinear(&self, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
        const OP: &str = "upsample_bilinear";
        let (n, c, h, w) = self.shape().nchw(OP)?;
        if out_h == 0 || out_w == 0 {
            return Err(TensorError::invalid(OP, "target size must be positive"));
        }
        let ys = bilinear_taps(out_h, h);
        let xs = bilinear_taps(out_w, w);
        let mut taps = Vec::with_capacity(n * c * out_h * out_w);
        for plane in 0..n * c {
            let base = plane * h * w;
            for &(y0, y1, ly) in &ys {
                for &(x0, x1, lx) in &xs {
                    taps.push([
                        (base + y0 * w + x0, T::lit((1.0 - ly) * (1.0 - lx))),
                        (base + y0 * w + x1, T::lit((1.0 - ly) * lx)),
                        (base + y1 * w + x0, T::lit(ly * (1.0 - lx))),
                        (base + y1 * w + x1, T::lit(ly * lx)),
                    ]);
                }
            }
        }
        Ok(linear_map(
            self,
            Shape::new(vec![n, c, out_h, out_w])?,
            OP,
            taps,
        ))
    }

    /// Non-overlapping `k×k` average pooling; H and W must be multiples of `k`.
    pub fn avg_pool2d(&self, k: usize) -> Result<Tensor<T>> {
        const OP: &str = "avg_pool2d";
        let (n, c, h, w) = self.shape().nchw(OP)?;
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(TensorError::invalid(
                OP,
                format!("{h}x{w} not divisible by {k}"),
            ));
        }
        let (oh, ow) = (h / k, w / k);
        let inv = T::one() / T::lit((k * k) as f64);
        let mut out = vec![T::zero(); n * c * oh * ow];
        for plane in 0..n * c {
            for y in 0..h {
                for x in 0..w {
                    out[plane * oh * ow + (y / k) * ow + x / k] +=
                        self.data()[plane * h * w + y * w + x] * inv;
                }
            }
        }
        Ok(Tensor::from_op(
            Shape::new(vec![n, c, oh, ow])?,
            out,
            OP,
            &[self],
            move |g| {
                let mut dx = vec![T::zero(); n * c * h * w];
                for plane in 0..n * c {
                    for y in 0..h {
                        for x in 0..w {
                            dx[plane * h * w + y * w + x] =
                                g[plane * oh * ow + (y / k) * ow + x / k] * inv;
                        }
                    }
                }
                vec![Some(dx)]
            },
        ))
    }

    /// Max pooling with implicit −∞ padding; ties go to the first maximum
    /// in row-major window order.
    pub fn max_pool2d(&self, k: usize, stride: usize, padding: usize) -> Result<Tensor<T>> {
        const OP: &str = "max_pool2d";
        let (n, c, h, w) = self.shape().nchw(OP)?;
        if k == 0 || stride == 0 || h + 2 * padding < k || w + 2 * padding < k {
            return Err(TensorError::invalid(
                OP,
                format!("window {k} does not fit {h}x{w}"),
            ));
        }
        let oh = (h + 2 * padding - k) / stride + 1;
        let ow = (w + 2 * padding - k) / stride + 1;
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut at = usize::MAX;
                    for i in 0..k {
                        let y = (oy * stride + i) as isize - padding as isize;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        for j in 0..k {
                            let x = (ox * stride + j) as isize - padding as isize;
                            if x < 0 || x >= w as isize {
                                continue;
                            }
                            let idx = base + y as usize * w + x as usize;
                            if at == usize::MAX || self.data()[idx] > best {
                                best = self.data()[idx];
                                at = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(at);
                }
            }
        }
        let len = self.numel();
        Ok(Tensor::from_op(
            Shape::new(vec![n, c, oh, ow])?,
            out,
            OP,
            &[self],
            move |g| {
                let mut dx = vec![T::zero(); len];
                for (&i, &gv) in argmax.iter().zip(g) {
                    dx[i] += gv;
                }
                vec![Some(dx)]
            },
        ))
    }

    /// Pads `(top, bottom, left, right)` pixels using `mode`.
    pub fn pad2d(&self, pads: (usize, usize, usize, usize), mode: PadMode) -> Result<Tensor<T>> {
        const OP: &str = "pad2d";
        let (n, c, h, w) = self.shape().nchw(OP)?;
        let (top, bottom, left, right) = pads;
        let (oh, ow) = (h + top + bottom, w + left + right);
        let mut index = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            for y in 0..oh {
                let sy = border_index(y as isize - top as isize, h, mode);
                for x in 0..ow {
                    let sx = border_index(x as isize - left as isize, w, mode);
                    index.push(plane * h * w + sy * w + sx);
                }
            }
        }
        let out = index.iter().map(|&i| self.data()[i]).collect();
        let len = self.numel();
        Ok(Tensor::from_op(
            Shape::new(vec![n, c, oh, ow])?,
            out,
            OP,
            &[self],
            move |g| {
                let mut dx = vec![T::zero(); len];
                for (&i, &gv) in index.iter().zip(g) {
                    dx[i] += gv;
                }
                vec![Some(dx)]
            },
        ))
    }

    /// Spatial window `[top, top + h) × [left, left + w)`.
    pub fn crop2d(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor<T>> {
        self.shape().nchw("crop2d")?;
        self.narrow(2, top, h)?.narrow(3, left, w)
    }
}

pub fn upsample_bilinear<T: Element>(
    x: &Tensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    x.upsample_bilinear(out_h, out_w)
}
