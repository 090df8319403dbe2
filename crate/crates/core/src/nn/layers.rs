//! Trainable layers. Each layer stores [`ParamId`]s into a shared
//! [`ParamStore`] and reads them through a [`Ctx`] during the forward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ctx::Ctx;
use super::functional::{self, BatchNormState};
use super::params::{uniform, ParamId, ParamStore};
use crate::autograd::{self as ag, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Creates named parameters with seeded initial values.
pub struct Init<'s, T: Scalar> {
    pub store: &'s mut ParamStore<T>,
    pub rng: ChaCha8Rng,
}

impl<'s, T: Scalar> Init<'s, T> {
    pub fn new(store: &'s mut ParamStore<T>, seed: u64) -> Self {
        Init {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn param(&mut self, name: String, tensor: Tensor<T>) -> Result<ParamId> {
        self.store.add(name, tensor, true)
    }

    pub fn buffer(&mut self, name: String, tensor: Tensor<T>) -> Result<ParamId> {
        self.store.add(name, tensor, false)
    }

    pub fn uniform(&mut self, name: String, shape: &[usize], bound: f64) -> Result<ParamId> {
        let t = uniform(&mut self.rng, shape, bound);
        self.param(name, t)
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Dense {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        let bound = 1.0 / (d_in as f64).sqrt();
        Ok(Dense {
            weight: init.uniform(format!("{name}.weight"), &[d_in, d_out], bound)?,
            bias: init.param(format!("{name}.bias"), Tensor::zeros(&[d_out]))?,
            d_in,
            d_out,
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        functional::dense(x, &ctx.param(self.weight), &ctx.param(self.bias))
    }

    pub fn param_count(d_in: usize, d_out: usize) -> usize {
        d_in * d_out + d_out
    }
}

#[derive(Debug, Clone)]
pub struct DepthwiseConv {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub kernel_size: usize,
}

impl DepthwiseConv {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, channels: usize, kernel_size: usize) -> Result<Self> {
        if kernel_size % 2 == 0 {
            return Err(Error::invalid("depthwise_conv1d", format!("kernel size {kernel_size} must be odd")));
        }
        let bound = 1.0 / (kernel_size as f64).sqrt();
        Ok(DepthwiseConv {
            kernel: init.uniform(format!("{name}.kernel"), &[kernel_size, channels], bound)?,
            bias: init.param(format!("{name}.bias"), Tensor::zeros(&[channels]))?,
            kernel_size,
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>, dilation: usize) -> Result<Var<T>> {
        let y = ag::depthwise_conv1d(x, &ctx.param(self.kernel), dilation)?;
        ag::add_row(&y, &ctx.param(self.bias))
    }

    pub fn param_count(channels: usize, kernel_size: usize) -> usize {
        kernel_size * channels + channels
    }

    /// Frames of input that influence one output frame.
    pub fn receptive_field(kernel_size: usize, dilation: usize) -> usize {
        (kernel_size - 1) * dilation + 1
    }
}

/// Affine parameters shared by the normalization layers.
#[derive(Debug, Clone)]
pub struct Affine {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Affine {
    fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, channels: usize) -> Result<Self> {
        Ok(Affine {
            gamma: init.param(format!("{name}.gamma"), Tensor::full(&[channels], T::one()))?,
            beta: init.param(format!("{name}.beta"), Tensor::zeros(&[channels]))?,
        })
    }
}

/// Normalizes each channel over time.
#[derive(Debug, Clone)]
pub struct InstanceNorm(pub Affine);

impl InstanceNorm {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, channels: usize) -> Result<Self> {
        Ok(InstanceNorm(Affine::new(init, name, channels)?))
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        functional::instance_norm(x, &ctx.param(self.0.gamma), &ctx.param(self.0.beta))
    }
}

/// Normalizes each frame over channels.
#[derive(Debug, Clone)]
pub struct LayerNorm(pub Affine);

impl LayerNorm {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, channels: usize) -> Result<Self> {
        Ok(LayerNorm(Affine::new(init, name, channels)?))
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        functional::layer_norm(x, &ctx.param(self.0.gamma), &ctx.param(self.0.beta))
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub affine: Affine,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub tracked: ParamId,
}

impl BatchNorm {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            affine: Affine::new(init, name, channels)?,
            running_mean: init.buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels]))?,
            running_var: init.buffer(format!("{name}.running_var"), Tensor::full(&[channels], T::one()))?,
            tracked: init.buffer(format!("{name}.tracked"), Tensor::zeros(&[1]))?,
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let store = ctx.store();
        let mut state = BatchNormState {
            mean: store.tensor(self.running_mean).data().to_vec(),
            var: store.tensor(self.running_var).data().to_vec(),
            initialized: store.tensor(self.tracked).data()[0] > T::zero(),
            momentum: functional::BATCH_NORM_MOMENTUM,
        };
        let training = ctx.mode().uses_batch_stats();
        let y = functional::batch_norm(
            x,
            &ctx.param(self.affine.gamma),
            &ctx.param(self.affine.beta),
            &mut state,
            training,
        )?;
        if training {
            let d = state.mean.len();
            ctx.queue_buffer_update(self.running_mean, Tensor::new(&[d], state.mean)?);
            ctx.queue_buffer_update(self.running_var, Tensor::new(&[d], state.var)?);
            ctx.queue_buffer_update(self.tracked, Tensor::scalar(T::one()));
        }
        Ok(y)
    }

    /// Normalizes a batch of `N_b×D` matrices. Batch statistics pool all
    /// `ΣN_b` frames, so each output depends on every input.
    pub fn forward_batch<T: Scalar>(&self, ctx: &Ctx<'_, T>, xs: &[Var<T>]) -> Result<Vec<Var<T>>> {
        if xs.len() == 1 || !ctx.mode().uses_batch_stats() {
            return xs.iter().map(|x| self.forward(ctx, x)).collect();
        }
        let y = self.forward(ctx, &ag::concat_rows(xs)?)?;
        let mut start = 0;
        xs.iter()
            .map(|x| {
                let rows = x.shape()[0];
                let part = ag::slice_rows(&y, start, rows);
                start += rows;
                part
            })
            .collect()
    }
}

/// PReLU with one slope per channel.
#[derive(Debug, Clone)]
pub struct PRelu {
    pub slope: ParamId,
}

impl PRelu {
    pub const INIT_SLOPE: f64 = 0.25;

    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, channels: usize) -> Result<Self> {
        Ok(PRelu {
            slope: init.param(format!("{name}.slope"), Tensor::full(&[channels], T::c(Self::INIT_SLOPE)))?,
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        ag::prelu(x, &ctx.param(self.slope))
    }
}

/// A single trainable gain.
#[derive(Debug, Clone)]
pub struct Scale {
    pub gain: ParamId,
}

impl Scale {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, value: f64) -> Result<Self> {
        Ok(Scale {
            gain: init.param(format!("{name}.gain"), Tensor::scalar(T::c(value)))?,
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        ag::scale(x, &ctx.param(self.gain))
    }
}

pub fn dropout<T: Scalar>(ctx: &Ctx<'_, T>, x: &Var<T>, rate: f64) -> Result<Var<T>> {
    let training = ctx.mode().dropout_active();
    ctx.with_rng(|rng| ag::dropout(x, rate, training, rng))
}
