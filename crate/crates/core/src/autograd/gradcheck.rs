//! Central finite-difference gradient checks.
//!
//! The check reduces the function output with fixed pseudo-random weights so
//! that outputs whose plain sum is constant (normalizations, softmax) are
//! still exercised in every direction.

use super::{mul, sum, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Worst relative error over all inputs, measured as
/// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` per input.
pub fn max_relative_error<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<f64>
where
    F: Fn(&[Var<f64>]) -> Result<Var<f64>>,
{
    let leaves: Vec<Var<f64>> = inputs.iter().cloned().map(Var::leaf).collect();
    let probe = f(&leaves)?;
    let weights = Tensor::from_fn(probe.shape(), |i| 0.5 + ((i as f64 + 1.0) * 0.754_877_666).fract());
    let objective = |vars: &[Var<f64>]| -> Result<f64> {
        let out = f(vars)?;
        Ok(out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum())
    };

    let loss = sum(&mul(&probe, &Var::constant(weights.clone()))?);
    loss.backward()?;

    let mut worst: f64 = 0.0;
    for (idx, input) in inputs.iter().enumerate() {
        let analytic = leaves[idx]
            .grad()
            .map(Tensor::into_data)
            .unwrap_or_else(|| vec![0.0; input.numel()]);
        let mut numeric = Vec::with_capacity(input.numel());
        for k in 0..input.numel() {
            let eval = |delta: f64| -> Result<f64> {
                let vars: Vec<Var<f64>> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        let mut t = t.clone();
                        if j == idx {
                            t.data_mut()[k] += delta;
                        }
                        Var::constant(t)
                    })
                    .collect();
                objective(&vars)
            };
            numeric.push((eval(h)? - eval(-h)?) / (2.0 * h));
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale = analytic
            .iter()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt()
            .max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
        if scale > 0.0 {
            worst = worst.max(diff / scale);
        }
    }
    Ok(worst)
}
