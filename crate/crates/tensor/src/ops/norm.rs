use std::sync::Mutex;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics and update the running estimates.
    Train,
    /// Normalize with the running estimates; no state changes.
    Eval,
}

/// Per-channel running mean and (unbiased) variance.
#[derive(Debug)]
pub struct RunningStats<T: Element> {
    mean: Mutex<Vec<T>>,
    var: Mutex<Vec<T>>,
    momentum: T,
}

impl<T: Element> RunningStats<T> {
    /// Mean 0 and variance 1 for every channel.
    pub fn new(channels: usize) -> Self {
        Self::from_parts(vec![T::zero(); channels], vec![T::one(); channels])
    }

    pub fn from_parts(mean: Vec<T>, var: Vec<T>) -> Self {
        RunningStats {
            mean: Mutex::new(mean),
            var: Mutex::new(var),
            momentum: T::lit(BN_MOMENTUM),
        }
    }

    pub fn channels(&self) -> usize {
        self.mean().len()
    }

    pub fn mean(&self) -> Vec<T> {
        self.mean.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn var(&self) -> Vec<T> {
        self.var.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn set(&self, mean: Vec<T>, var: Vec<T>) {
        *self.mean.lock().unwrap_or_else(|p| p.into_inner()) = mean;
        *self.var.lock().unwrap_or_else(|p| p.into_inner()) = var;
    }

    fn update(&self, batch_mean: &[T], batch_var_unbiased: &[T]) {
        let m = self.momentum;
        let keep = T::one() - m;
        let mut mean = self.mean.lock().unwrap_or_else(|p| p.into_inner());
        let mut var = self.var.lock().unwrap_or_else(|p| p.into_inner());
        for c in 0..mean.len() {
            mean[c] = keep * mean[c] + m * batch_mean[c];
            var[c] = keep * var[c] + m * batch_var_unbiased[c];
        }
    }
}

/// Batch normalization over `[N, C, H, W]`:
/// `y = γ·(x − μ)/√(σ² + eps) + β` per channel.
pub fn batch_norm<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &RunningStats<T>,
    mode: BnMode,
    eps: f64,
) -> Result<Tensor<T>> {
    const OP: &str = "batch_norm";
    let (n, c, h, w) = x.shape().nchw(OP)?;
    for (p, name) in [(gamma, "gamma"), (beta, "beta")] {
        if p.dims() != [c] {
            return Err(TensorError::invalid(
                OP,
                format!("{name} has shape {}, expected [{c}]", p.shape()),
            ));
        }
    }
    if stats.channels() != c {
        return Err(TensorError::DimMismatch {
            op: OP,
            dim: "running statistics",
            lhs: stats.channels(),
            rhs: c,
        });
    }
    let plane = h * w;
    let count = n * plane;
    if mode == BnMode::Train && count < 2 {
        return Err(TensorError::invalid(
            OP,
            "training mode needs at least two values per channel",
        ));
    }
    let xd = x.data();
    let chan = |b: usize, ch: usize| &xd[(b * c + ch) * plane..(b * c + ch + 1) * plane];

    let (mean, var) = match mode {
        BnMode::Train => {
            let inv = T::one() / T::lit(count as f64);
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mu = (0..n)
                    .map(|b| chan(b, ch).iter().copied().sum::<T>())
                    .sum::<T>()
                    * inv;
                let ss = (0..n)
                    .map(|b| chan(b, ch).iter().map(|&v| (v - mu) * (v - mu)).sum::<T>())
                    .sum::<T>();
                mean[ch] = mu;
                var[ch] = ss * inv;
            }
            let unbiased: Vec<T> = var
                .iter()
                .map(|&v| v * T::lit(count as f64 / (count - 1) as f64))
                .collect();
            stats.update(&mean, &unbiased);
            (mean, var)
        }
        BnMode::Eval => (stats.mean(), stats.var()),
    };
    let inv_std: Vec<T> = var
        .iter()
        .map(|&v| T::one() / (v + T::lit(eps)).sqrt())
        .collect();

    let mut xhat = vec![T::zero(); x.numel()];
    let mut out = vec![T::zero(); x.numel()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            let (g, bt) = (gamma.data()[ch], beta.data()[ch]);
            for i in 0..plane {
                let xh = (xd[off + i] - mean[ch]) * inv_std[ch];
                xhat[off + i] = xh;
                out[off + i] = g * xh + bt;
            }
        }
    }

    let (xc, gc, bc) = (x.clone(), gamma.clone(), beta.clone());
    Ok(Tensor::from_op(
        x.shape().clone(),
        out,
        OP,
        &[x, gamma, beta],
        move |gy| {
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * plane;
                    for i in 0..plane {
                        dgamma[ch] += gy[off + i] * xhat[off + i];
                        dbeta[ch] += gy[off + i];
                    }
                }
            }
            let dx = xc.requires_grad().then(|| {
                let mut dx = vec![T::zero(); xhat.len()];
                let inv_count = T::one() / T::lit(count as f64);
                for b in 0..n {
                    for ch in 0..c {
                        let off = (b * c + ch) * plane;
                        let scale = gc.data()[ch] * inv_std[ch];
                        for i in 0..plane {
                            dx[off + i] = match mode {
                                BnMode::Eval => gy[off + i] * scale,
                                // batch statistics depend on x as well
                                BnMode::Train => {
                                    scale
                                        * (gy[off + i]
                                            - dbeta[ch] * inv_count
                                            - xhat[off + i] * dgamma[ch] * inv_count)
                                }
                            };
                        }
                    }
                }
                dx
            });
            vec![
                dx,
                gc.requires_grad().then_some(dgamma),
                bc.requires_grad().then_some(dbeta),
            ]
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize, c: usize, h: usize, w: usize) -> Tensor<f64> {
        let data = (0..n * c * h * w)
            .map(|v| ((v * 37 % 23) as f64) * 0.3 - 2.0)
            .collect();
        Tensor::new(data, &[n, c, h, w]).unwrap()
    }

    fn channel_moments(t: &Tensor<f64>, ch: usize) -> (f64, f64) {
        let (n, c, h, w) = t.shape().nchw("test").unwrap();
        let vals: Vec<f64> = (0..n)
            .flat_map(|b| t.data()[(b * c + ch) * h * w..(b * c + ch + 1) * h * w].to_vec())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        (mean, var)
    }

    #[test]
    fn train_mode_standardizes_channels() {
        let x = ramp(2, 3, 4, 4);
        let stats = RunningStats::new(3);
        let g = Tensor::ones(&[3]).unwrap();
        let b = Tensor::zeros(&[3]).unwrap();
        let y = batch_norm(&x, &g, &b, &stats, BnMode::Train, BN_EPS).unwrap();
        for ch in 0..3 {
            let (m, v) = channel_moments(&y, ch);
            assert!(m.abs() < 1e-5);
            assert!((v - 1.0).abs() < 1e-3);
        }
        assert_ne!(stats.mean(), vec![0.0; 3]);
    }

    #[test]
    fn affine_parameters_set_mean_and_std() {
        let x = ramp(2, 2, 3, 3);
        let stats = RunningStats::new(2);
        let g = Tensor::full(&[2], 2.0).unwrap();
        let b = Tensor::full(&[2], 3.0).unwrap();
        let y = batch_norm(&x, &g, &b, &stats, BnMode::Train, BN_EPS).unwrap();
        for ch in 0..2 {
            let (m, v) = channel_moments(&y, ch);
            assert!((m - 3.0).abs() < 1e-4);
            assert!((v.sqrt() - 2.0).abs() < 1e-4);
        }
    }

    #[test]
    fn eval_mode_uses_running_stats_without_mutation() {
        let x = ramp(1, 2, 2, 2);
        let stats = RunningStats::from_parts(vec![0.5, -1.0], vec![4.0, 0.25]);
        let g = Tensor::new(vec![1.5, -0.5], &[2]).unwrap();
        let b = Tensor::new(vec![0.1, 0.2], &[2]).unwrap();
        let y = batch_norm(&x, &g, &b, &stats, BnMode::Eval, BN_EPS).unwrap();
        for ch in 0..2 {
            for i in 0..4 {
                let xv = x.data()[ch * 4 + i];
                let expect = (xv - stats.mean()[ch]) / (stats.var()[ch] + BN_EPS).sqrt()
                    * g.data()[ch]
                    + b.data()[ch];
                assert!((y.data()[ch * 4 + i] - expect).abs() < 1e-12);
            }
        }
        assert_eq!(stats.mean(), vec![0.5, -1.0]);
    }

    #[test]
    fn singleton_statistics_rejected_in_train_mode() {
        let x = Tensor::<f32>::zeros(&[1, 2, 1, 1]).unwrap();
        let stats = RunningStats::new(2);
        let g = Tensor::ones(&[2]).unwrap();
        let b = Tensor::zeros(&[2]).unwrap();
        assert!(batch_norm(&x, &g, &b, &stats, BnMode::Train, BN_EPS).is_err());
        assert!(batch_norm(&x, &g, &b, &stats, BnMode::Eval, BN_EPS).is_ok());
    }
}
