use crate::element::Element;
use crate::tensor::Tensor;

impl<T: Element> Tensor<T> {
    /// Softmax over the last dimension with max subtraction.
    pub fn softmax_lastdim(&self) -> Tensor<T> {
        let d = *self.dims().last().expect("shape has rank >= 1");
        let mut out = self.to_vec();
        for row in out.chunks_mut(d) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        let y = out.clone();
        Tensor::from_op(self.shape().clone(), out, "softmax", &[self], move |g| {
            let mut dx = vec![T::zero(); y.len()];
            for ((dxr, yr), gr) in dx.chunks_mut(d).zip(y.chunks(d)).zip(g.chunks(d)) {
                let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                for ((o, &yv), &gv) in dxr.iter_mut().zip(yr).zip(gr) {
                    *o = yv * (gv - dot);
                }
            }
            vec![Some(dx)]
        })
    }
}

pub fn softmax_lastdim<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.softmax_lastdim()
}
