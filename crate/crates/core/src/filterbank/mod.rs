//! Analysis/synthesis filterbanks mapping waveforms to `N×D` frame matrices.
//!
//! Two encoder/decoder pairs are provided: a trainable strided projection
//! with a rectified encoder ([`TrainableFilterbank`]) and a square-root-Hann
//! STFT ([`Stft`]) with both an FFT path and a differentiable DFT-basis path.

mod stft;
mod trainable;

pub use stft::{apply_complex_mask, sqrt_hann, ComplexFrames, Stft, StftBasis};
pub use trainable::TrainableFilterbank;

use crate::autograd::Framing;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Time-domain mono signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform<T> {
    pub samples: Vec<T>,
    pub sample_rate: u32,
}

impl<T: Scalar> Waveform<T> {
    pub const DEFAULT_RATE: u32 = 16_000;

    pub fn new(samples: Vec<T>, sample_rate: u32) -> Result<Self> {
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("waveform"));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> T {
        self.samples.iter().map(|v| *v * *v).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterbankKind {
    Trainable,
    Stft,
}

impl FilterbankKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterbankKind::Trainable => "trainable",
            FilterbankKind::Stft => "stft",
        }
    }
}

impl std::str::FromStr for FilterbankKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trainable" => Ok(FilterbankKind::Trainable),
            "stft" => Ok(FilterbankKind::Stft),
            other => Err(Error::invalid("filterbank", format!("unknown kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterbankConfig {
    pub kind: FilterbankKind,
    pub window_ms: f64,
    pub hop_ms: f64,
    /// Encoder output width (trainable kind).
    pub d_e: usize,
    /// FFT length (stft kind).
    pub fft_size: usize,
}

impl FilterbankConfig {
    /// 2.5 ms window, 1.25 ms hop, 256 channels.
    pub fn trainable() -> Self {
        FilterbankConfig {
            kind: FilterbankKind::Trainable,
            window_ms: 2.5,
            hop_ms: 1.25,
            d_e: 256,
            fft_size: 512,
        }
    }

    /// 30 ms window, 10 ms hop, 512-point FFT.
    pub fn stft() -> Self {
        FilterbankConfig {
            kind: FilterbankKind::Stft,
            window_ms: 30.0,
            hop_ms: 10.0,
            d_e: 257,
            fft_size: 512,
        }
    }

    pub fn window_samples(&self, sample_rate: u32) -> usize {
        (self.window_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        (self.hop_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    /// Width of the frame matrix the mask predictor sees.
    pub fn feature_dim(&self) -> usize {
        match self.kind {
            FilterbankKind::Trainable => self.d_e,
            FilterbankKind::Stft => self.fft_size / 2 + 1,
        }
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let (w, h) = (self.window_samples(sample_rate), self.hop_samples(sample_rate));
        if h == 0 || w == 0 {
            return Err(Error::invalid("filterbank", "window and hop must span at least one sample"));
        }
        if h > w {
            return Err(Error::invalid("filterbank", format!("hop {h} exceeds window {w}")));
        }
        if self.d_e == 0 {
            return Err(Error::invalid("filterbank", "encoder dimension must be positive"));
        }
        if self.kind == FilterbankKind::Stft && self.fft_size < w {
            return Err(Error::invalid(
                "filterbank",
                format!("fft size {} shorter than window {w}", self.fft_size),
            ));
        }
        Ok(())
    }
}

/// Frame count for a signal of `len` samples: `ceil(len / hop)`.
pub fn frame_count(len: usize, hop: usize) -> usize {
    len.div_ceil(hop)
}

/// Centered framing: frame `i` starts `(window - hop) / 2` samples before
/// `i·hop`, so zero padding is split between both ends.
pub fn framing(len: usize, window: usize, hop: usize) -> Framing {
    Framing {
        window,
        hop,
        offset: (window - hop) / 2,
        frames: frame_count(len, hop),
        len,
    }
}
