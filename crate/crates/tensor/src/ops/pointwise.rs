//! Elementwise arithmetic. Binary ops take equal shapes, or a one-element
//! operand on either side that is applied to every element.

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pointwise {
    Sigmoid,
    Relu,
    OneMinus,
    Scale(f64),
    Add,
    Mul,
}

pub enum Operand<'a, T: Element> {
    Tensor(&'a Tensor<T>),
    Scalar(f64),
}

/// Dispatches on `kind`; binary kinds need `rhs`.
pub fn pointwise<T: Element>(
    kind: Pointwise,
    a: &Tensor<T>,
    rhs: Option<Operand<'_, T>>,
) -> Result<Tensor<T>> {
    let missing = || TensorError::invalid("pointwise", format!("{kind:?} needs a right operand"));
    match kind {
        Pointwise::Sigmoid => Ok(a.sigmoid()),
        Pointwise::Relu => Ok(a.relu()),
        Pointwise::OneMinus => Ok(a.one_minus()),
        Pointwise::Scale(s) => Ok(a.scale(s)),
        Pointwise::Add => match rhs.ok_or_else(missing)? {
            Operand::Tensor(b) => a.add(b),
            Operand::Scalar(s) => Ok(a.add_scalar(s)),
        },
        Pointwise::Mul => match rhs.ok_or_else(missing)? {
            Operand::Tensor(b) => a.mul(b),
            Operand::Scalar(s) => Ok(a.scale(s)),
        },
    }
}

pub(crate) fn sigmoid_scalar<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Element> Tensor<T> {
    /// Elementwise map whose derivative is expressed through input and output.
    fn unary<F, D>(&self, op: &'static str, f: F, df: D) -> Tensor<T>
    where
        F: Fn(T) -> T,
        D: Fn(T, T) -> T + Send + Sync + 'static,
    {
        let out: Vec<T> = self.data().iter().map(|&v| f(v)).collect();
        let x = self.clone();
        let y = out.clone();
        Tensor::from_op(self.shape().clone(), out, op, &[self], move |g| {
            let dx = x
                .data()
                .iter()
                .zip(&y)
                .zip(g)
                .map(|((&xv, &yv), &gv)| gv * df(xv, yv))
                .collect();
            vec![Some(dx)]
        })
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary("sigmoid", sigmoid_scalar, |_, y| y * (T::one() - y))
    }

    pub fn relu(&self) -> Tensor<T> {
        self.unary(
            "relu",
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn one_minus(&self) -> Tensor<T> {
        self.unary("one_minus", |x| T::one() - x, |_, _| -T::one())
    }

    pub fn scale(&self, s: f64) -> Tensor<T> {
        let s = T::lit(s);
        self.unary("scale", move |x| x * s, move |_, _| s)
    }

    pub fn add_scalar(&self, s: f64) -> Tensor<T> {
        let s = T::lit(s);
        self.unary("add_scalar", move |x| x + s, |_, _| T::one())
    }

    pub fn neg(&self) -> Tensor<T> {
        self.scale(-1.0)
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary("exp", |x| x.exp(), |_, y| y)
    }

    /// Natural log; callers clamp away from zero first.
    pub fn log(&self) -> Tensor<T> {
        self.unary("log", |x| x.ln(), |x, _| T::one() / x)
    }

    pub fn square(&self) -> Tensor<T> {
        self.unary("square", |x| x * x, |x, _| x + x)
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor<T> {
        let (lo, hi) = (T::lit(lo), T::lit(hi));
        self.unary(
            "clamp",
            move |x| x.max(lo).min(hi),
            move |x, _| {
                if x >= lo && x <= hi {
                    T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    fn binary(
        &self,
        other: &Tensor<T>,
        op: &'static str,
        f: fn(T, T) -> T,
        // partial derivatives (∂/∂a, ∂/∂b) at (a, b)
        df: fn(T, T) -> (T, T),
    ) -> Result<Tensor<T>> {
        let (na, nb) = (self.numel(), other.numel());
        let shape = if self.shape() == other.shape() || nb == 1 {
            self.shape().clone()
        } else if na == 1 {
            other.shape().clone()
        } else {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape().clone(),
                rhs: other.shape().clone(),
            });
        };
        let len = shape.numel();
        let at = |v: &[T], i: usize| if v.len() == 1 { v[0] } else { v[i] };
        let out = (0..len)
            .map(|i| f(at(self.data(), i), at(other.data(), i)))
            .collect();
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(shape, out, op, &[self, other], move |g| {
            let mut da = a.requires_grad().then(|| vec![T::zero(); a.numel()]);
            let mut db = b.requires_grad().then(|| vec![T::zero(); b.numel()]);
            for (i, &gv) in g.iter().enumerate() {
                let (pa, pb) = df(at(a.data(), i), at(b.data(), i));
                if let Some(da) = da.as_mut() {
                    let j = if da.len() == 1 { 0 } else { i };
                    da[j] += gv * pa;
                }
                if let Some(db) = db.as_mut() {
                    let j = if db.len() == 1 { 0 } else { i };
                    db[j] += gv * pb;
                }
            }
            vec![da, db]
        }))
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, "add", |a, b| a + b, |_, _| (T::one(), T::one()))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, "sub", |a, b| a - b, |_, _| (T::one(), -T::one()))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, "mul", |a, b| a * b, |a, b| (b, a))
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(
            other,
            "div",
            |a, b| a / b,
            |a, b| (T::one() / b, -a / (b * b)),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_values() {
        let x = Tensor::<f64>::new(vec![0.0, -3.0, 3.0], &[3]).unwrap();
        assert_eq!(x.sigmoid().data()[0], 0.5);
        assert_eq!(x.relu().data(), &[0.0, 0.0, 3.0]);
        let total = x.sigmoid().one_minus().add(&x.sigmoid()).unwrap();
        for v in total.data() {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        let x = Tensor::<f32>::new(vec![-1000.0, 1000.0], &[2]).unwrap();
        let y = x.sigmoid();
        assert_eq!(y.data(), &[0.0, 1.0]);
    }

    #[test]
    fn scalar_operand_broadcasts() {
        let x = Tensor::<f64>::new(vec![1.0, 2.0], &[2]).unwrap();
        let s = Tensor::scalar(3.0);
        assert_eq!(x.mul(&s).unwrap().data(), &[3.0, 6.0]);
        assert_eq!(s.sub(&x).unwrap().data(), &[2.0, 1.0]);
        let y = pointwise(Pointwise::Add, &x, Some(Operand::Scalar(1.0))).unwrap();
        assert_eq!(y.data(), &[2.0, 3.0]);
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let a = Tensor::<f32>::zeros(&[2, 3]).unwrap();
        let b = Tensor::<f32>::zeros(&[3, 2]).unwrap();
        assert!(a.add(&b).is_err());
        assert!(pointwise(Pointwise::Mul, &a, None).is_err());
    }
}
