use crate::element::Element;
use crate::shape::Shape;
use crate::tensor::Tensor;

impl<T: Element> Tensor<T> {
    pub fn sum_all(&self) -> Tensor<T> {
        let total = self.data().iter().copied().sum::<T>();
        let n = self.numel();
        Tensor::from_op(Shape::scalar(), vec![total], "sum", &[self], move |g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = self.numel();
        let inv = T::one() / T::lit(n as f64);
        let mean = self.data().iter().copied().sum::<T>() * inv;
        Tensor::from_op(Shape::scalar(), vec![mean], "mean", &[self], move |g| {
            vec![Some(vec![g[0] * inv; n])]
        })
    }
}
