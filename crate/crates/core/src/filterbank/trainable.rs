use super::{framing, FilterbankConfig, FilterbankKind, Waveform};
use crate::autograd::{self as ag, Var};
use crate::error::{Error, Result};
use crate::nn::{Ctx, Init, ParamId};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Learned strided analysis basis with a rectifier, and a learned synthesis
/// basis followed by overlap-add.
#[derive(Debug, Clone)]
pub struct TrainableFilterbank {
    pub encoder: ParamId,
    pub decoder: ParamId,
    pub window: usize,
    pub hop: usize,
    pub d_e: usize,
}

impl TrainableFilterbank {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, cfg: &FilterbankConfig, sample_rate: u32) -> Result<Self> {
        if cfg.kind != FilterbankKind::Trainable {
            return Err(Error::invalid("filterbank", "trainable filterbank built from a non-trainable config"));
        }
        cfg.validate(sample_rate)?;
        let window = cfg.window_samples(sample_rate);
        let bound = 1.0 / (window as f64).sqrt();
        Ok(TrainableFilterbank {
            encoder: init.uniform(format!("{name}.encoder"), &[window, cfg.d_e], bound)?,
            decoder: init.uniform(format!("{name}.decoder"), &[cfg.d_e, window], bound)?,
            window,
            hop: cfg.hop_samples(sample_rate),
            d_e: cfg.d_e,
        })
    }

    pub fn param_count(cfg: &FilterbankConfig, sample_rate: u32) -> usize {
        2 * cfg.window_samples(sample_rate) * cfg.d_e
    }

    /// Framed projection before the rectifier. Linear in `x`.
    pub fn analyze<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let len = x.value().numel();
        if len == 0 || x.value().rank() != 1 {
            return Err(Error::invalid("encode", "expected a non-empty 1-D signal"));
        }
        let frames = ag::frame(x, framing(len, self.window, self.hop))?;
        ag::matmul(&frames, &ctx.param(self.encoder))
    }

    /// `N×D_e` nonnegative frame matrix with `N = ceil(len / hop)`.
    pub fn encode<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        Ok(ag::relu(&self.analyze(ctx, x)?))
    }

    /// Resynthesizes `len` samples from an `N×D_e` frame matrix.
    pub fn decode<T: Scalar>(&self, ctx: &Ctx<'_, T>, f: &Var<T>, len: usize) -> Result<Var<T>> {
        let geom = framing(len, self.window, self.hop);
        if f.value().rank() != 2 || f.shape()[1] != self.d_e || f.shape()[0] != geom.frames {
            return Err(Error::shape("decode", f.shape(), &[geom.frames, self.d_e]));
        }
        let frames = ag::matmul(f, &ctx.param(self.decoder))?;
        ag::overlap_add(&frames, geom)
    }

    pub fn encode_waveform<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Waveform<T>) -> Result<Tensor<T>> {
        if x.is_empty() {
            return Err(Error::invalid("encode", "empty signal"));
        }
        let v = Var::constant(Tensor::new(&[x.len()], x.samples.clone())?);
        Ok(self.encode(ctx, &v)?.value().clone())
    }

    pub fn decode_frames<T: Scalar>(&self, ctx: &Ctx<'_, T>, f: &Tensor<T>, len: usize, sample_rate: u32) -> Result<Waveform<T>> {
        let y = self.decode(ctx, &Var::constant(f.clone()), len)?;
        Waveform::new(y.value().data().to_vec(), sample_rate)
    }
}
