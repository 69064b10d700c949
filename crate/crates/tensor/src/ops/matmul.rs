use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::profile;
use crate::shape::Shape;
use crate::tensor::Tensor;

/// Broadcast bookkeeping for the leading (batch) dimensions.
struct BatchPlan {
    dims: Vec<usize>,
    a_offsets: Vec<usize>,
    b_offsets: Vec<usize>,
}

fn batch_plan(a: &[usize], b: &[usize], a_mat: usize, b_mat: usize) -> Option<BatchPlan> {
    let rank = a.len().max(b.len());
    let pad = |d: &[usize]| -> Vec<usize> {
        let mut v = vec![1; rank - d.len()];
        v.extend_from_slice(d);
        v
    };
    let (pa, pb) = (pad(a), pad(b));
    let mut dims = Vec::with_capacity(rank);
    for (&x, &y) in pa.iter().zip(&pb) {
        if x != y && x != 1 && y != 1 {
            return None;
        }
        dims.push(x.max(y));
    }
    let strides = |d: &[usize], mat: usize| -> Vec<usize> {
        let mut s = vec![0; rank];
        let mut acc = mat;
        for i in (0..rank).rev() {
            s[i] = if d[i] == 1 { 0 } else { acc };
            acc *= d[i];
        }
        s
    };
    let (sa, sb) = (strides(&pa, a_mat), strides(&pb, b_mat));
    let total: usize = dims.iter().product();
    let mut a_offsets = Vec::with_capacity(total);
    let mut b_offsets = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    for _ in 0..total {
        a_offsets.push(idx.iter().zip(&sa).map(|(i, s)| i * s).sum());
        b_offsets.push(idx.iter().zip(&sb).map(|(i, s)| i * s).sum());
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < dims[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Some(BatchPlan {
        dims,
        a_offsets,
        b_offsets,
    })
}

/// Matrix product over the last two dimensions, `[..., m, k] · [..., k, n]`.
/// Leading dimensions must be equal or 1; a rank-2 operand is shared by
/// every batch entry of the other.
pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    const OP: &str = "matmul";
    let (ad, bd) = (a.dims(), b.dims());
    if ad.len() < 2 {
        return Err(TensorError::Rank {
            op: OP,
            expected: 2,
            shape: a.shape().clone(),
        });
    }
    if bd.len() < 2 {
        return Err(TensorError::Rank {
            op: OP,
            expected: 2,
            shape: b.shape().clone(),
        });
    }
    let (m, k) = (ad[ad.len() - 2], ad[ad.len() - 1]);
    let (k2, n) = (bd[bd.len() - 2], bd[bd.len() - 1]);
    if k != k2 {
        return Err(TensorError::DimMismatch {
            op: OP,
            dim: "inner",
            lhs: k,
            rhs: k2,
        });
    }
    let plan =
        batch_plan(&ad[..ad.len() - 2], &bd[..bd.len() - 2], m * k, k * n).ok_or_else(|| {
            TensorError::ShapeMismatch {
                op: OP,
                lhs: a.shape().clone(),
                rhs: b.shape().clone(),
            }
        })?;
    let batches = plan.a_offsets.len();
    profile::record(OP, (batches * m * k * n) as u64);

    let mut out = vec![T::zero(); batches * m * n];
    for (bi, dst) in out.chunks_mut(m * n).enumerate() {
        let ao = plan.a_offsets[bi];
        let bo = plan.b_offsets[bi];
        T::gemm(
            m,
            k,
            n,
            &a.data()[ao..ao + m * k],
            (k, 1),
            &b.data()[bo..bo + k * n],
            (n, 1),
            dst,
            n,
            false,
        );
    }

    let mut dims = plan.dims.clone();
    dims.extend_from_slice(&[m, n]);
    let shape = Shape::new(dims)?;
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(shape, out, OP, &[a, b], move |g| {
        let da = ac.requires_grad().then(|| {
            let mut da = vec![T::zero(); ac.numel()];
            for bi in 0..batches {
                let (ao, bo) = (plan.a_offsets[bi], plan.b_offsets[bi]);
                // da[m,k] += g[m,n] · bᵀ
                T::gemm(
                    m,
                    n,
                    k,
                    &g[bi * m * n..(bi + 1) * m * n],
                    (n, 1),
                    &bc.data()[bo..bo + k * n],
                    (1, n),
                    &mut da[ao..ao + m * k],
                    k,
                    true,
                );
            }
            da
        });
        let db = bc.requires_grad().then(|| {
            let mut db = vec![T::zero(); bc.numel()];
            for bi in 0..batches {
                let (ao, bo) = (plan.a_offsets[bi], plan.b_offsets[bi]);
                // db[k,n] += aᵀ · g[m,n]
                T::gemm(
                    k,
                    m,
                    n,
                    &ac.data()[ao..ao + m * k],
                    (1, k),
                    &g[bi * m * n..(bi + 1) * m * n],
                    (n, 1),
                    &mut db[bo..bo + k * n],
                    n,
                    true,
                );
            }
            db
        });
        vec![da, db]
    }))
}
