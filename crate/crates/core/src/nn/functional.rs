//! Stateless layer functions over graph values.

use crate::autograd::{self as ag, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Variance floor used by every normalization.
pub const NORM_EPS: f64 = 1e-8;

/// Weight kept on the old running statistic per batch-norm update.
pub const BATCH_NORM_MOMENTUM: f64 = 0.99;

/// `z · W + b` for `z: N×Din`, `W: Din×Dout`, `b: Dout`.
pub fn dense<T: Scalar>(z: &Var<T>, w: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    ag::add_row(&ag::matmul(z, w)?, b)
}

/// Per-channel normalization over the time axis of an `N×D` matrix.
pub fn instance_norm<T: Scalar>(z: &Var<T>, gamma: &Var<T>, beta: &Var<T>) -> Result<Var<T>> {
    z.value().dims2("instance_norm")?;
    Ok(ag::normalize_columns(z, gamma, beta, T::c(NORM_EPS))?.0)
}

/// Per-frame normalization over the channel axis of an `N×D` matrix.
pub fn layer_norm<T: Scalar>(z: &Var<T>, gamma: &Var<T>, beta: &Var<T>) -> Result<Var<T>> {
    ag::normalize_rows(z, gamma, beta, T::c(NORM_EPS))
}

/// Running statistics of a batch-norm layer.
#[derive(Debug, Clone)]
pub struct BatchNormState<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub initialized: bool,
    pub momentum: f64,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            initialized: false,
            momentum: BATCH_NORM_MOMENTUM,
        }
    }
}

/// Batch normalization over every axis but the last (`B×N×D` or `N×D`).
///
/// In training mode the batch statistics normalize the input and update
/// `state` (the first update copies the batch statistics). In eval mode the
/// stored statistics are used and must have been initialized.
pub fn batch_norm<T: Scalar>(
    z: &Var<T>,
    gamma: &Var<T>,
    beta: &Var<T>,
    state: &mut BatchNormState<T>,
    training: bool,
) -> Result<Var<T>> {
    let d = *z.shape().last().expect("non-empty shape");
    if state.mean.len() != d || state.var.len() != d {
        return Err(Error::shape("batch_norm", z.shape(), &[state.mean.len()]));
    }
    let eps = T::c(NORM_EPS);
    if training {
        let (y, stats) = ag::normalize_columns(z, gamma, beta, eps)?;
        if state.initialized {
            let m = T::c(state.momentum);
            let one_m = T::one() - m;
            for c in 0..d {
                state.mean[c] = m * state.mean[c] + one_m * stats.mean[c];
                state.var[c] = m * state.var[c] + one_m * stats.var[c];
            }
        } else {
            state.mean = stats.mean;
            state.var = stats.var;
            state.initialized = true;
        }
        Ok(y)
    } else {
        if !state.initialized {
            return Err(Error::UninitializedRunningStats);
        }
        ag::channel_affine(z, &state.mean, &state.var, gamma, beta, eps)
    }
}
