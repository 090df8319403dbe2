//! Finite-difference check of parameter gradients collected through a [`Ctx`].

use super::ctx::{Ctx, Mode};
use super::params::ParamStore;
use crate::autograd::{mul, sum, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Gradient norms below this are compared in absolute terms. Scale-invariant
/// parameters (a gain feeding a normalization) have true gradients near zero,
/// where central differences only resolve rounding noise.
pub const GRADIENT_FLOOR: f64 = 1e-3;

/// Worst per-parameter relative error between analytic and central-difference
/// gradients, probing up to `per_param` evenly spaced entries of every
/// trainable tensor. Runs in eval mode so the forward pass is deterministic.
pub fn max_param_relative_error<F>(store: &ParamStore<f64>, per_param: usize, h: f64, f: F) -> Result<f64>
where
    F: Fn(&Ctx<'_, f64>) -> Result<Var<f64>>,
{
    max_param_relative_error_in(store, Mode::Eval, per_param, h, f)
}

/// [`max_param_relative_error`] in a chosen mode. `Mode::Calibrate` checks
/// gradients through batch statistics; the forward must not use dropout.
pub fn max_param_relative_error_in<F>(store: &ParamStore<f64>, mode: Mode, per_param: usize, h: f64, f: F) -> Result<f64>
where
    F: Fn(&Ctx<'_, f64>) -> Result<Var<f64>>,
{
    let (analytic, weights) = {
        let ctx = Ctx::new(store, mode, true, 0);
        let y = f(&ctx)?;
        let weights = Tensor::from_fn(y.shape(), |i| 0.5 + ((i as f64 + 1.0) * 0.754_877_666).fract());
        sum(&mul(&y, &Var::constant(weights.clone()))?).backward()?;
        (ctx.param_grads(), weights)
    };
    let objective = |s: &ParamStore<f64>| -> Result<f64> {
        let ctx = Ctx::new(s, mode, false, 0);
        let y = f(&ctx)?;
        Ok(y.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum())
    };

    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    for id in store.ids().filter(|id| store.get(*id).trainable) {
        let numel = store.tensor(id).numel();
        let grad = analytic
            .iter()
            .find(|(g, _)| *g == id)
            .map(|(_, t)| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; numel]);
        let stride = numel.div_ceil(per_param.max(1)).max(1);
        let (mut diff, mut an, mut nu) = (0.0, 0.0, 0.0);
        for k in (0..numel).step_by(stride) {
            let base = store.tensor(id).clone();
            let mut eval = |delta: f64| -> Result<f64> {
                let mut t = base.clone();
                t.data_mut()[k] += delta;
                probe.set(id, t)?;
                objective(&probe)
            };
            let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
            probe.set(id, base)?;
            diff += (grad[k] - numeric).powi(2);
            an += grad[k].powi(2);
            nu += numeric.powi(2);
        }
        let scale = an.sqrt().max(nu.sqrt());
        worst = worst.max(diff.sqrt() / scale.max(GRADIENT_FLOOR));
    }
    Ok(worst)
}
