//! Data-movement ops. Each is a gather whose gradient is the matching
//! scatter-add.

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::shape::Shape;
use crate::tensor::Tensor;

/// Output gathered through `index[i]` into the input buffer.
fn gather<T: Element>(
    x: &Tensor<T>,
    shape: Shape,
    op: &'static str,
    index: Vec<usize>,
) -> Tensor<T> {
    let out = index.iter().map(|&i| x.data()[i]).collect();
    let n = x.numel();
    Tensor::from_op(shape, out, op, &[x], move |g| {
        let mut dx = vec![T::zero(); n];
        for (&i, &gv) in index.iter().zip(g) {
            dx[i] += gv;
        }
        vec![Some(dx)]
    })
}

impl<T: Element> Tensor<T> {
    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor<T>> {
        let shape = Shape::new(dims.to_vec())?;
        if shape.numel() != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().clone(),
                rhs: shape,
            });
        }
        Ok(Tensor::from_op(
            shape,
            self.to_vec(),
            "reshape",
            &[self],
            |g| vec![Some(g.to_vec())],
        ))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<T>> {
        let rank = self.shape().rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank
            || perm
                .iter()
                .any(|&p| p >= rank || std::mem::replace(&mut seen[p], true))
        {
            return Err(TensorError::invalid(
                "permute",
                format!("{perm:?} is not a permutation of {rank} axes"),
            ));
        }
        let in_strides = self.shape().strides();
        let dims: Vec<usize> = perm.iter().map(|&p| self.dims()[p]).collect();
        let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut index = Vec::with_capacity(self.numel());
        let mut pos = vec![0usize; rank];
        let mut offset = 0usize;
        for _ in 0..self.numel() {
            index.push(offset);
            for ax in (0..rank).rev() {
                pos[ax] += 1;
                offset += strides[ax];
                if pos[ax] < dims[ax] {
                    break;
                }
                offset -= strides[ax] * dims[ax];
                pos[ax] = 0;
            }
        }
        Ok(gather(self, Shape::new(dims)?, "permute", index))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self) -> Result<Tensor<T>> {
        let rank = self.shape().rank();
        if rank < 2 {
            return Err(TensorError::Rank {
                op: "transpose",
                expected: 2,
                shape: self.shape().clone(),
            });
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(&perm)
    }

    /// `len` entries of axis `dim` starting at `start`.
    pub fn narrow(&self, dim: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        let dims = self.dims();
        if dim >= dims.len() || len == 0 || start + len > dims[dim] {
            return Err(TensorError::invalid(
                "narrow",
                format!(
                    "range {start}..{} outside axis {dim} of {}",
                    start + len,
                    self.shape()
                ),
            ));
        }
        let outer: usize = dims[..dim].iter().product();
        let inner: usize = dims[dim + 1..].iter().product();
        let mut out_dims = dims.to_vec();
        out_dims[dim] = len;
        let mut index = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dims[dim] + start) * inner;
            index.extend(base..base + len * inner);
        }
        Ok(gather(self, Shape::new(out_dims)?, "narrow", index))
    }

    /// Channel slice `[start, start + len)` of a 4-D tensor.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Tensor<T>> {
        self.shape().nchw("slice_channels")?;
        self.narrow(1, start, len)
    }

    /// Repeats a single-channel `[N, 1, H, W]` map across `c` channels.
    pub fn expand_channels(&self, c: usize) -> Result<Tensor<T>> {
        let (n, c1, h, w) = self.shape().nchw("expand_channels")?;
        if c1 != 1 {
            return Err(TensorError::DimMismatch {
                op: "expand_channels",
                dim: "channels",
                lhs: c1,
                rhs: 1,
            });
        }
        let plane = h * w;
        let mut index = Vec::with_capacity(n * c * plane);
        for b in 0..n {
            for _ in 0..c {
                index.extend(b * plane..(b + 1) * plane);
            }
        }
        Ok(gather(
            self,
            Shape::new(vec![n, c, h, w])?,
            "expand_channels",
            index,
        ))
    }

    /// Phase sub-grid with stride `s` and 1-based offsets:
    /// `out[.., i, j] = x[.., offset_r − 1 + i·s, offset_c − 1 + j·s]`.
    pub fn strided_subsample(
        &self,
        s: usize,
        offset_r: usize,
        offset_c: usize,
    ) -> Result<Tensor<T>> {
        const OP: &str = "strided_subsample";
        let (n, c, h, w) = self.shape().nchw(OP)?;
        if s == 0 || h % s != 0 || w % s != 0 {
            return Err(TensorError::invalid(
                OP,
                format!("spatial size {h}x{w} is not divisible by stride {s}"),
            ));
        }
        if !(1..=s).contains(&offset_r) || !(1..=s).contains(&offset_c) {
            return Err(TensorError::invalid(
                OP,
                format!("offsets ({offset_r}, {offset_c}) must lie in 1..={s}"),
            ));
        }
        let (oh, ow) = (h / s, w / s);
        let mut index = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            for i in 0..oh {
                let row = offset_r - 1 + i * s;
                for j in 0..ow {
                    index.push(plane * h * w + row * w + offset_c - 1 + j * s);
                }
            }
        }
        Ok(gather(self, Shape::new(vec![n, c, oh, ow])?, OP, index))
    }
}

/// Joins tensors along axis `dim`; every other axis must agree.
pub fn concat<T: Element>(parts: &[&Tensor<T>], dim: usize) -> Result<Tensor<T>> {
    const OP: &str = "concat";
    let first = parts
        .first()
        .ok_or_else(|| TensorError::invalid(OP, "no tensors to concatenate"))?;
    let rank = first.shape().rank();
    if dim >= rank {
        return Err(TensorError::invalid(
            OP,
            format!("axis {dim} out of range for rank {rank}"),
        ));
    }
    for p in parts {
        let same = p.shape().rank() == rank
            && p.dims()
                .iter()
                .zip(first.dims())
                .enumerate()
                .all(|(i, (a, b))| i == dim || a == b);
        if !same {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                lhs: first.shape().clone(),
                rhs: p.shape().clone(),
            });
        }
    }
    let outer: usize = first.dims()[..dim].iter().product();
    let inner: usize = first.dims()[dim + 1..].iter().product();
    let sizes: Vec<usize> = parts.iter().map(|p| p.dims()[dim]).collect();
    let total: usize = sizes.iter().sum();

    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (p, &sz) in parts.iter().zip(&sizes) {
            out.extend_from_slice(&p.data()[o * sz * inner..(o + 1) * sz * inner]);
        }
    }
    let mut dims = first.dims().to_vec();
    dims[dim] = total;
    let handles: Vec<Tensor<T>> = parts.iter().map(|p| (*p).clone()).collect();
    Ok(Tensor::from_op(
        Shape::new(dims)?,
        out,
        OP,
        parts,
        move |g| {
            let mut grads: Vec<Option<Vec<T>>> = handles
                .iter()
                .map(|h| h.requires_grad().then(|| Vec::with_capacity(h.numel())))
                .collect();
            let mut cursor = 0;
            for _ in 0..outer {
                for (gr, &sz) in grads.iter_mut().zip(&sizes) {
                    let len = sz * inner;
                    if let Some(gr) = gr {
                        gr.extend_from_slice(&g[cursor..cursor + len]);
                    }
                    cursor += len;
                }
            }
            grads
        },
    ))
}

/// Concatenation along channels of `[N, Ci, H, W]` parts, in input order.
pub fn concat_channels<T: Element>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    for p in parts {
        p.shape().nchw("concat_channels")?;
    }
    concat(parts, 1)
}
