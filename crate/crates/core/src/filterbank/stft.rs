use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{frame_count, framing, FilterbankConfig, FilterbankKind};
use crate::autograd::{self as ag, Framing, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `frames × bins` complex spectrogram, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexFrames<T> {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex<T>>,
}

impl<T: Scalar> ComplexFrames<T> {
    pub fn zeros(frames: usize, bins: usize) -> Self {
        ComplexFrames {
            frames,
            bins,
            data: vec![Complex::new(T::zero(), T::zero()); frames * bins],
        }
    }

    pub fn get(&self, frame: usize, bin: usize) -> Complex<T> {
        self.data[frame * self.bins + bin]
    }

    /// Splits into real and imaginary `frames × bins` tensors.
    pub fn to_parts(&self) -> (Tensor<T>, Tensor<T>) {
        let shape = [self.frames, self.bins];
        (
            Tensor::from_fn(&shape, |i| self.data[i].re),
            Tensor::from_fn(&shape, |i| self.data[i].im),
        )
    }

    pub fn from_parts(re: &Tensor<T>, im: &Tensor<T>) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::shape("complex_frames", re.shape(), im.shape()));
        }
        let (frames, bins) = re.dims2("complex_frames")?;
        let data = re.data().iter().zip(im.data()).map(|(&r, &i)| Complex::new(r, i)).collect();
        Ok(ComplexFrames { frames, bins, data })
    }
}

/// Elementwise complex product `S ⊙ M`.
pub fn apply_complex_mask<T: Scalar>(s: &ComplexFrames<T>, m: &ComplexFrames<T>) -> Result<ComplexFrames<T>> {
    if (s.frames, s.bins) != (m.frames, m.bins) {
        return Err(Error::shape("apply_complex_mask", &[s.frames, s.bins], &[m.frames, m.bins]));
    }
    Ok(ComplexFrames {
        frames: s.frames,
        bins: s.bins,
        data: s.data.iter().zip(&m.data).map(|(a, b)| a * b).collect(),
    })
}

/// Periodic square-root Hann window: `sin(π t / W)`.
pub fn sqrt_hann<T: Scalar>(len: usize) -> Vec<T> {
    (0..len).map(|t| T::c((PI * t as f64 / len as f64).sin())).collect()
}

fn window_square_sum<T: Scalar>(window: &[T], hop: usize, len: usize) -> Vec<T> {
    let g = framing(len, window.len(), hop);
    let mut out = vec![T::zero(); len];
    for f in 0..g.frames {
        for (w, wv) in window.iter().enumerate() {
            let t = (f * g.hop + w) as isize - g.offset as isize;
            if t >= 0 && (t as usize) < len {
                out[t as usize] += *wv * *wv;
            }
        }
    }
    out
}

/// Short-time Fourier transform with a square-root Hann analysis and
/// synthesis window. Synthesis divides by the per-sample window-square sum,
/// so reconstruction is exact at the padded edges too.
#[derive(Clone)]
pub struct Stft<T: Scalar> {
    pub window: Vec<T>,
    pub hop: usize,
    pub fft_size: usize,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

impl<T: Scalar> std::fmt::Debug for Stft<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft")
            .field("window", &self.window.len())
            .field("hop", &self.hop)
            .field("fft_size", &self.fft_size)
            .finish()
    }
}

impl<T: Scalar> Stft<T> {
    pub fn new(cfg: &FilterbankConfig, sample_rate: u32) -> Result<Self> {
        if cfg.kind != FilterbankKind::Stft {
            return Err(Error::invalid("stft", "built from a non-stft config"));
        }
        cfg.validate(sample_rate)?;
        let mut planner = FftPlanner::new();
        Ok(Stft {
            window: sqrt_hann(cfg.window_samples(sample_rate)),
            hop: cfg.hop_samples(sample_rate),
            fft_size: cfg.fft_size,
            forward: planner.plan_fft_forward(cfg.fft_size),
            inverse: planner.plan_fft_inverse(cfg.fft_size),
        })
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn win_len(&self) -> usize {
        self.window.len()
    }

    pub fn framing(&self, len: usize) -> Framing {
        framing(len, self.win_len(), self.hop)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len < self.win_len() {
            return Err(Error::invalid(
                "stft",
                format!("signal of {len} samples is shorter than one window ({})", self.win_len()),
            ));
        }
        Ok(())
    }

    /// Σ over frames of the squared window at each sample.
    pub fn window_square_sum(&self, len: usize) -> Vec<T> {
        window_square_sum(&self.window, self.hop, len)
    }

    pub fn encode(&self, x: &[T]) -> Result<ComplexFrames<T>> {
        self.check_len(x.len())?;
        let g = self.framing(x.len());
        let bins = self.bins();
        let mut out = ComplexFrames::zeros(g.frames, bins);
        let mut buf = vec![Complex::new(T::zero(), T::zero()); self.fft_size];
        for f in 0..g.frames {
            buf.iter_mut().for_each(|v| *v = Complex::new(T::zero(), T::zero()));
            for (w, wv) in self.window.iter().enumerate() {
                let t = (f * g.hop + w) as isize - g.offset as isize;
                if t >= 0 && (t as usize) < x.len() {
                    buf[w].re = x[t as usize] * *wv;
                }
            }
            self.forward.process(&mut buf);
            out.data[f * bins..(f + 1) * bins].copy_from_slice(&buf[..bins]);
        }
        Ok(out)
    }

    pub fn decode(&self, s: &ComplexFrames<T>, len: usize) -> Result<Vec<T>> {
        self.check_len(len)?;
        let g = self.framing(len);
        if s.frames != g.frames || s.bins != self.bins() {
            return Err(Error::shape("stft_decode", &[s.frames, s.bins], &[g.frames, self.bins()]));
        }
        let n = self.fft_size;
        let scale = T::one() / T::c(n as f64);
        let mut out = vec![T::zero(); len];
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        for f in 0..g.frames {
            let row = &s.data[f * s.bins..(f + 1) * s.bins];
            buf[..s.bins].copy_from_slice(row);
            // Hermitian extension; DC and Nyquist imaginary parts are dropped.
            buf[0].im = T::zero();
            if n % 2 == 0 {
                buf[n / 2].im = T::zero();
            }
            for k in s.bins..n {
                buf[k] = buf[n - k].conj();
            }
            self.inverse.process(&mut buf);
            for (w, wv) in self.window.iter().enumerate() {
                let t = (f * g.hop + w) as isize - g.offset as isize;
                if t >= 0 && (t as usize) < len {
                    out[t as usize] += buf[w].re * scale * *wv;
                }
            }
        }
        for (o, d) in out.iter_mut().zip(self.window_square_sum(len)) {
            *o /= d;
        }
        Ok(out)
    }

    /// Dense DFT matrices for the differentiable path.
    pub fn basis(&self) -> StftBasis<T> {
        StftBasis::new(&self.window, self.hop, self.fft_size)
    }
}

/// Windowed forward and inverse real-DFT matrices, so analysis and synthesis
/// become matmuls that autodiff can see through.
#[derive(Debug, Clone)]
pub struct StftBasis<T: Scalar> {
    /// `W×F`: `w[t]·cos(2πkt/n)`.
    pub analysis_re: Tensor<T>,
    /// `W×F`: `−w[t]·sin(2πkt/n)`.
    pub analysis_im: Tensor<T>,
    /// `F×W`: `c_k/n·cos(2πkt/n)·w[t]`.
    pub synthesis_re: Tensor<T>,
    /// `F×W`: `−c_k/n·sin(2πkt/n)·w[t]`.
    pub synthesis_im: Tensor<T>,
    window: Vec<T>,
    hop: usize,
}

impl<T: Scalar> StftBasis<T> {
    pub fn new(window: &[T], hop: usize, fft_size: usize) -> Self {
        let wl = window.len();
        let bins = fft_size / 2 + 1;
        let ang = |k: usize, t: usize| 2.0 * PI * ((k * t) % fft_size) as f64 / fft_size as f64;
        let weight = |k: usize| {
            if k == 0 || (fft_size % 2 == 0 && k == fft_size / 2) {
                1.0
            } else {
                2.0
            }
        };
        let w = |t: usize| window[t].as_f64();
        StftBasis {
            analysis_re: Tensor::from_fn(&[wl, bins], |i| T::c(w(i / bins) * ang(i % bins, i / bins).cos())),
            analysis_im: Tensor::from_fn(&[wl, bins], |i| T::c(-w(i / bins) * ang(i % bins, i / bins).sin())),
            synthesis_re: Tensor::from_fn(&[bins, wl], |i| {
                let (k, t) = (i / wl, i % wl);
                T::c(weight(k) / fft_size as f64 * ang(k, t).cos() * w(t))
            }),
            synthesis_im: Tensor::from_fn(&[bins, wl], |i| {
                let (k, t) = (i / wl, i % wl);
                T::c(-weight(k) / fft_size as f64 * ang(k, t).sin() * w(t))
            }),
            window: window.to_vec(),
            hop,
        }
    }

    pub fn frames(&self, len: usize) -> usize {
        frame_count(len, self.hop)
    }

    fn framing(&self, len: usize) -> Framing {
        framing(len, self.window.len(), self.hop)
    }

    /// Real and imaginary `N×F` spectrogram of a 1-D signal.
    pub fn analyze(&self, x: &Var<T>) -> Result<(Var<T>, Var<T>)> {
        let len = x.value().numel();
        if len < self.window.len() {
            return Err(Error::invalid("stft", "signal shorter than one window"));
        }
        let frames = ag::frame(x, self.framing(len))?;
        Ok((
            ag::matmul(&frames, &Var::constant(self.analysis_re.clone()))?,
            ag::matmul(&frames, &Var::constant(self.analysis_im.clone()))?,
        ))
    }

    /// Inverse of [`analyze`](Self::analyze), trimmed to `len` samples.
    pub fn synthesize(&self, re: &Var<T>, im: &Var<T>, len: usize) -> Result<Var<T>> {
        let a = ag::matmul(re, &Var::constant(self.synthesis_re.clone()))?;
        let b = ag::matmul(im, &Var::constant(self.synthesis_im.clone()))?;
        let y = ag::overlap_add(&ag::add(&a, &b)?, self.framing(len))?;
        let mut inv = window_square_sum(&self.window, self.hop, len);
        inv.iter_mut().for_each(|v| *v = T::one() / *v);
        ag::mul(&y, &Var::constant(Tensor::new(&[len], inv)?))
    }
}
