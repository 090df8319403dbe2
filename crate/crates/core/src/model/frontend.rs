use crate::autograd::{self as ag, Var};
use crate::error::{Error, Result};
use crate::filterbank::{sqrt_hann, FilterbankConfig, FilterbankKind, StftBasis, TrainableFilterbank};
use crate::nn::{Ctx, Init};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Keeps the STFT magnitude differentiable at silent bins.
const MAGNITUDE_EPS: f64 = 1e-12;

/// Encoder and decoder around the mask predictor.
#[derive(Debug, Clone)]
pub enum Frontend {
    Trainable(TrainableFilterbank),
    Stft { window: usize, hop: usize, fft_size: usize },
}

/// Encoded signal: the predictor input and what masks are applied to.
pub struct Encoded<T: Scalar> {
    /// `N×F` predictor input: rectified encoder output, or STFT magnitude.
    pub features: Var<T>,
    /// Real and imaginary STFT parts (STFT frontend only).
    pub spectrum: Option<(Var<T>, Var<T>)>,
}

impl Frontend {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, cfg: &FilterbankConfig, sample_rate: u32) -> Result<Self> {
        cfg.validate(sample_rate)?;
        Ok(match cfg.kind {
            FilterbankKind::Trainable => Frontend::Trainable(TrainableFilterbank::new(init, name, cfg, sample_rate)?),
            FilterbankKind::Stft => Frontend::Stft {
                window: cfg.window_samples(sample_rate),
                hop: cfg.hop_samples(sample_rate),
                fft_size: cfg.fft_size,
            },
        })
    }

    fn basis<T: Scalar>(window: usize, hop: usize, fft_size: usize) -> StftBasis<T> {
        StftBasis::new(&sqrt_hann::<T>(window), hop, fft_size)
    }

    pub fn encode<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Result<Encoded<T>> {
        match self {
            Frontend::Trainable(fb) => Ok(Encoded {
                features: fb.encode(ctx, x)?,
                spectrum: None,
            }),
            Frontend::Stft { window, hop, fft_size } => {
                let (re, im) = Self::basis::<T>(*window, *hop, *fft_size).analyze(x)?;
                let power = ag::add(&ag::mul(&re, &re)?, &ag::mul(&im, &im)?)?;
                Ok(Encoded {
                    features: ag::sqrt(&ag::add_const(&power, T::c(MAGNITUDE_EPS))),
                    spectrum: Some((re, im)),
                })
            }
        }
    }

    /// Applies one mask and resynthesizes `len` samples. Trainable masks are
    /// `N×D_e` gains; STFT masks are `N×2F` with real parts first.
    pub fn apply_mask<T: Scalar>(&self, ctx: &Ctx<'_, T>, enc: &Encoded<T>, mask: &Var<T>, len: usize) -> Result<Var<T>> {
        match self {
            Frontend::Trainable(fb) => fb.decode(ctx, &ag::mul(&enc.features, mask)?, len),
            Frontend::Stft { window, hop, fft_size } => {
                let (sr, si) = enc
                    .spectrum
                    .as_ref()
                    .ok_or_else(|| Error::invalid("apply_mask", "STFT frontend needs the complex spectrum"))?;
                let bins = sr.shape()[1];
                let (mr, mi) = (ag::slice_cols(mask, 0, bins)?, ag::slice_cols(mask, bins, bins)?);
                let yr = ag::sub(&ag::mul(sr, &mr)?, &ag::mul(si, &mi)?)?;
                let yi = ag::add(&ag::mul(sr, &mi)?, &ag::mul(si, &mr)?)?;
                Self::basis::<T>(*window, *hop, *fft_size).synthesize(&yr, &yi, len)
            }
        }
    }

    /// Plain analysis followed by synthesis, i.e. an all-pass mask.
    pub fn reconstruct<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let enc = self.encode(ctx, x)?;
        let n = enc.features.shape()[0];
        let mask = match self {
            Frontend::Trainable(fb) => Tensor::full(&[n, fb.d_e], T::one()),
            Frontend::Stft { .. } => {
                let bins = enc.features.shape()[1];
                Tensor::from_fn(&[n, 2 * bins], |i| if i % (2 * bins) < bins { T::one() } else { T::zero() })
            }
        };
        self.apply_mask(ctx, &enc, &Var::constant(mask), x.value().numel())
    }
}
