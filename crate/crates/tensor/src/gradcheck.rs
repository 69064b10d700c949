//! Central finite-difference verification of analytic gradients.
//!
//! Meant to run in `f64` on deterministic functions (fixed inputs,
//! normalization in eval mode). Each checked coordinate compares the
//! analytic derivative `a` with `n = (f(θ+ε) − f(θ−ε)) / 2ε` through
//! `|a − n| / max(1e-8, |a| + |n|)`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{no_grad, Tensor};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Coordinates sampled per parameter (all of them when fewer exist).
    pub coords_per_param: usize,
    pub seed: u64,
    /// Multiplies the analytic gradient of one parameter before comparing.
    /// Used to confirm that the check detects a wrong gradient.
    pub fault: Option<(ParamId, f64)>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            tolerance: 1e-4,
            coords_per_param: 8,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst: Option<CoordCheck>,
    pub failing_params: Vec<String>,
    pub checks: Vec<CoordCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failing_params.is_empty()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Checks the gradient of the scalar `f(store)` with respect to `params`.
pub fn finite_diff_check<F>(
    store: &mut ParamStore<f64>,
    params: &[ParamId],
    opts: &GradCheckOptions,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore<f64>) -> Result<Tensor<f64>>,
{
    let first = no_grad(|| f(store))?.item();
    let second = no_grad(|| f(store))?.item();
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::Nondeterministic { first, second });
    }

    store.zero_grad();
    let loss = f(store)?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|&id| {
            let mut g = store
                .grad(id)
                .unwrap_or_else(|| vec![0.0; store.get(id).numel()]);
            if let Some((fid, scale)) = opts.fault {
                if fid == id {
                    g.iter_mut().for_each(|v| *v *= scale);
                }
            }
            g
        })
        .collect();
    store.zero_grad();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut checks = Vec::new();
    let mut failing = Vec::new();
    for (&id, grad) in params.iter().zip(&analytic) {
        let original = store.get(id).to_vec();
        let numel = original.len();
        let coords: Vec<usize> = if numel <= opts.coords_per_param {
            (0..numel).collect()
        } else {
            let mut v = sample(&mut rng, numel, opts.coords_per_param).into_vec();
            v.sort_unstable();
            v
        };
        let mut param_failed = false;
        for idx in coords {
            let mut probe = original.clone();
            probe[idx] = original[idx] + opts.epsilon;
            store.set_value(id, probe.clone())?;
            let plus = no_grad(|| f(store))?.item();
            probe[idx] = original[idx] - opts.epsilon;
            store.set_value(id, probe)?;
            let minus = no_grad(|| f(store))?.item();
            let numeric = (plus - minus) / (2.0 * opts.epsilon);
            let rel_err = relative_error(grad[idx], numeric);
            param_failed |= !(rel_err < opts.tolerance);
            checks.push(CoordCheck {
                param: store.name(id).to_owned(),
                index: idx,
                analytic: grad[idx],
                numeric,
                rel_err,
            });
        }
        store.set_value(id, original)?;
        if param_failed {
            failing.push(store.name(id).to_owned());
        }
    }

    let worst = checks
        .iter()
        .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
        .cloned();
    Ok(GradCheckReport {
        max_rel_err: worst.as_ref().map_or(0.0, |w| w.rel_err),
        worst,
        failing_params: failing,
        checks,
        tolerance: opts.tolerance,
    })
}

/// Gradient check of `f` with respect to each of `inputs`.
pub fn check_inputs<F>(
    inputs: &[Tensor<f64>],
    opts: &GradCheckOptions,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let mut store = ParamStore::from_tensors(inputs);
    let ids: Vec<ParamId> = store.ids().collect();
    finite_diff_check(&mut store, &ids, opts, |s| {
        let xs: Vec<Tensor<f64>> = ids.iter().map(|&id| s.get(id).clone()).collect();
        f(&xs)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.01) - 0.01 / 2.01).abs() < 1e-15);
    }

    #[test]
    fn nondeterminism_is_reported() {
        let x = Tensor::<f64>::new(vec![1.0, 2.0], &[2]).unwrap();
        let mut calls = 0.0;
        let err = check_inputs(&[x], &GradCheckOptions::default(), |xs| {
            calls += 1.0;
            Ok(xs[0].sum_all().add_scalar(calls))
        })
        .unwrap_err();
        assert!(matches!(err, TensorError::Nondeterministic { .. }));
    }
}
