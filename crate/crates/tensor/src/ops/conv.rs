//! 2-D convolution lowered to GEMM through im2col.
//!
//! Cross-correlation convention: the kernel is applied as stored, with no
//! flip, so `out[n, o, y, x] = Σ k[o, c, i, j] · in[n, c, y·s + i − p, x·s + j − p]`.
//! Output size is `(H + 2p − kh) / s + 1`, rounded down. Padding is zeros.

use rayon::prelude::*;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::profile;
use crate::shape::Shape;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    groups: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }

    /// Rows of one group's column matrix.
    fn col_rows(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    fn in_item(&self) -> usize {
        self.cin * self.h * self.w
    }

    fn out_item(&self) -> usize {
        self.cout * self.oh * self.ow
    }

    /// 1×1, stride 1, unpadded: the input slice already is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn macs(&self) -> u64 {
        (self.n * self.cout * self.cin_g() * self.kh * self.kw * self.oh * self.ow) as u64
    }
}

fn im2col<T: Element>(x: &[T], g: &Geometry, group: usize, col: &mut [T]) {
    let cols = g.col_cols();
    let c0 = group * g.cin_g();
    for c in 0..g.cin_g() {
        let plane = &x[(c0 + c) * g.h * g.w..(c0 + c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(col: &[T], g: &Geometry, group: usize, dx: &mut [T]) {
    let cols = g.col_cols();
    let c0 = group * g.cin_g();
    for c in 0..g.cin_g() {
        let plane = &mut dx[(c0 + c) * g.h * g.w..(c0 + c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            line[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn forward_item<T: Element>(x: &[T], k: &[T], g: &Geometry, out: &mut [T], col: &mut Vec<T>) {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    for group in 0..g.groups {
        let w = &k[group * g.cout_g() * rows..(group + 1) * g.cout_g() * rows];
        let dst = &mut out[group * g.cout_g() * cols..(group + 1) * g.cout_g() * cols];
        let col: &[T] = if g.is_pointwise() {
            &x[group * g.cin_g() * cols..(group + 1) * g.cin_g() * cols]
        } else {
            col.resize(rows * cols, T::zero());
            im2col(x, g, group, col);
            col
        };
        T::gemm(
            g.cout_g(),
            rows,
            cols,
            w,
            (rows, 1),
            col,
            (cols, 1),
            dst,
            cols,
            false,
        );
    }
}

fn input_grad_item<T: Element>(gout: &[T], k: &[T], g: &Geometry, dx: &mut [T]) {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut dcol = vec![T::zero(); rows * cols];
    for group in 0..g.groups {
        let w = &k[group * g.cout_g() * rows..(group + 1) * g.cout_g() * rows];
        let go = &gout[group * g.cout_g() * cols..(group + 1) * g.cout_g() * cols];
        if g.is_pointwise() {
            let dst = &mut dx[group * g.cin_g() * cols..(group + 1) * g.cin_g() * cols];
            T::gemm(
                rows,
                g.cout_g(),
                cols,
                w,
                (1, rows),
                go,
                (cols, 1),
                dst,
                cols,
                true,
            );
        } else {
            T::gemm(
                rows,
                g.cout_g(),
                cols,
                w,
                (1, rows),
                go,
                (cols, 1),
                &mut dcol,
                cols,
                false,
            );
            col2im(&dcol, g, group, dx);
        }
    }
}

fn kernel_grad_item<T: Element>(gout: &[T], x: &[T], g: &Geometry) -> Vec<T> {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut dk = vec![T::zero(); g.cout * rows];
    let mut col = Vec::new();
    for group in 0..g.groups {
        let go = &gout[group * g.cout_g() * cols..(group + 1) * g.cout_g() * cols];
        let col: &[T] = if g.is_pointwise() {
            &x[group * g.cin_g() * cols..(group + 1) * g.cin_g() * cols]
        } else {
            col.resize(rows * cols, T::zero());
            im2col(x, g, group, &mut col);
            &col
        };
        let dst = &mut dk[group * g.cout_g() * rows..(group + 1) * g.cout_g() * rows];
        T::gemm(
            g.cout_g(),
            cols,
            rows,
            go,
            (cols, 1),
            col,
            (1, cols),
            dst,
            rows,
            false,
        );
    }
    dk
}

/// 2-D cross-correlation over `[N, Cin, H, W]` with a `[Cout, Cin/groups, kh, kw]`
/// kernel and an optional `[Cout]` bias.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Tensor<T>> {
    const OP: &str = "conv2d";
    let (n, cin, h, w) = input.shape().nchw(OP)?;
    let (cout, cin_g, kh, kw) = kernel.shape().nchw(OP)?;
    if stride == 0 || groups == 0 {
        return Err(TensorError::invalid(
            OP,
            "stride and groups must be positive",
        ));
    }
    if cin % groups != 0 || cin / groups != cin_g {
        return Err(TensorError::DimMismatch {
            op: OP,
            dim: "input channels",
            lhs: cin,
            rhs: cin_g * groups,
        });
    }
    if cout % groups != 0 {
        return Err(TensorError::DimMismatch {
            op: OP,
            dim: "output channels / groups",
            lhs: cout,
            rhs: groups,
        });
    }
    if h + 2 * padding < kh {
        return Err(TensorError::DimMismatch {
            op: OP,
            dim: "height",
            lhs: h + 2 * padding,
            rhs: kh,
        });
    }
    if w + 2 * padding < kw {
        return Err(TensorError::DimMismatch {
            op: OP,
            dim: "width",
            lhs: w + 2 * padding,
            rhs: kw,
        });
    }
    if let Some(b) = bias {
        if b.dims() != [cout] {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                lhs: b.shape().clone(),
                rhs: Shape::new(vec![cout])?,
            });
        }
    }
    let g = Geometry {
        n,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        stride,
        pad: padding,
        groups,
        oh: (h + 2 * padding - kh) / stride + 1,
        ow: (w + 2 * padding - kw) / stride + 1,
    };
    profile::record(OP, g.macs());

    let mut out = vec![T::zero(); n * g.out_item()];
    {
        let x = input.data();
        let k = kernel.data();
        out.par_chunks_mut(g.out_item())
            .enumerate()
            .for_each_init(Vec::new, |col, (i, dst)| {
                forward_item(&x[i * g.in_item()..(i + 1) * g.in_item()], k, &g, dst, col);
            });
    }
    if let Some(b) = bias {
        let plane = g.oh * g.ow;
        for (idx, chunk) in out.chunks_mut(plane).enumerate() {
            let bv = b.data()[idx % cout];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }

    let shape = Shape::new(vec![n, cout, g.oh, g.ow])?;
    let (xi, ki, bi) = (input.clone(), kernel.clone(), bias.cloned());
    let mut inputs = vec![input, kernel];
    if let Some(b) = bias {
        inputs.push(b);
    }
    Ok(Tensor::from_op(shape, out, OP, &inputs, move |gout| {
        let dx = xi.requires_grad().then(|| {
            let mut dx = vec![T::zero(); n * g.in_item()];
            dx.par_chunks_mut(g.in_item())
                .enumerate()
                .for_each(|(i, dst)| {
                    input_grad_item(
                        &gout[i * g.out_item()..(i + 1) * g.out_item()],
                        ki.data(),
                        &g,
                        dst,
                    )
                });
            dx
        });
        let dk = ki.requires_grad().then(|| {
            let partials: Vec<Vec<T>> = (0..n)
                .into_par_iter()
                .map(|i| {
                    kernel_grad_item(
                        &gout[i * g.out_item()..(i + 1) * g.out_item()],
                        &xi.data()[i * g.in_item()..(i + 1) * g.in_item()],
                        &g,
                    )
                })
                .collect();
            let mut dk = vec![T::zero(); ki.numel()];
            for p in &partials {
                dk.iter_mut().zip(p).for_each(|(a, &b)| *a += b);
            }
            dk
        });
        let mut grads = vec![dx, dk];
        if let Some(b) = &bi {
            grads.push(b.requires_grad().then(|| {
                let plane = g.oh * g.ow;
                let mut db = vec![T::zero(); cout];
                for (idx, chunk) in gout.chunks(plane).enumerate() {
                    db[idx % cout] += chunk.iter().copied().sum::<T>();
                }
                db
            }));
        }
        grads
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ones_three_by_three_sums_to_nine() {
        let x = Tensor::<f64>::ones(&[1, 1, 3, 3]).unwrap();
        let k = Tensor::<f64>::ones(&[1, 1, 3, 3]).unwrap();
        let y = conv2d(&x, &k, None, 1, 0, 1).unwrap();
        assert_eq!(y.dims(), &[1, 1, 1, 1]);
        assert_eq!(y.item(), 9.0);
    }

    #[test]
    fn unit_pointwise_kernel_is_identity() {
        let data: Vec<f32> = (0..2 * 3 * 4 * 5).map(|v| v as f32 * 0.25 - 3.0).collect();
        let x = Tensor::new(data.clone(), &[2, 3, 4, 5]).unwrap();
        let mut k = vec![0.0f32; 9];
        for c in 0..3 {
            k[c * 3 + c] = 1.0;
        }
        let k = Tensor::new(k, &[3, 3, 1, 1]).unwrap();
        let y = conv2d(&x, &k, None, 1, 0, 1).unwrap();
        assert_eq!(y.data(), &data[..]);
    }

    #[test]
    fn stride_two_output_size_rounds_down() {
        let x = Tensor::<f32>::zeros(&[1, 3, 64, 64]).unwrap();
        let k = Tensor::<f32>::zeros(&[8, 3, 7, 7]).unwrap();
        let y = conv2d(&x, &k, None, 2, 3, 1).unwrap();
        assert_eq!(y.dims(), &[1, 8, 32, 32]);
    }

    #[test]
    fn reports_offending_dimension() {
        let x = Tensor::<f32>::zeros(&[1, 3, 4, 4]).unwrap();
        let k = Tensor::<f32>::zeros(&[2, 2, 3, 3]).unwrap();
        let err = conv2d(&x, &k, None, 1, 1, 1).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");

        let k = Tensor::<f32>::zeros(&[2, 3, 5, 5]).unwrap();
        let err = conv2d(&x, &k, None, 1, 0, 1).unwrap_err();
        assert!(err.to_string().contains("height"), "{err}");
    }

    #[test]
    fn counts_macs() {
        let x = Tensor::<f32>::zeros(&[2, 4, 6, 6]).unwrap();
        let k = Tensor::<f32>::zeros(&[6, 2, 3, 3]).unwrap();
        let (y, ledger) = profile::measure(|| conv2d(&x, &k, None, 1, 1, 2).unwrap());
        assert_eq!(y.dims(), &[2, 6, 6, 6]);
        assert_eq!(ledger.by_kind("conv2d"), 2 * 6 * 2 * 9 * 36);
    }
}
