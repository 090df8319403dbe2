use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Mixing SNR range accepted by [`synth_example`].
pub const SNR_RANGE_DB: (f64, f64) = (-40.0, 45.0);

/// Samples sit on this grid so `s + n` is exact in `f64`.
const GRID: f64 = 1.0 / (1u64 << 30) as f64;

/// RMS level of the speech-like source.
const SPEECH_RMS: f64 = 0.1;

/// Clean speech-like source, noise, and their exact sum.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthExample {
    pub s: Vec<f64>,
    pub n: Vec<f64>,
    pub x: Vec<f64>,
    pub snr_db: f64,
    pub sample_rate: u32,
}

fn quantize(v: f64) -> f64 {
    (v / GRID).round() * GRID
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|a| a * a).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

/// Harmonic stack on a slowly drifting `f₀ ∈ [80, 300]` Hz under a 2–8 Hz
/// syllabic envelope.
fn speech_like(rng: &mut ChaCha8Rng, len: usize, sr: f64) -> Vec<f64> {
    let f0 = rng.gen_range(80.0..300.0);
    let (drift_rate, drift_depth, drift_phase) = (rng.gen_range(0.2..1.5), rng.gen_range(0.02..0.15), rng.gen_range(0.0..2.0 * PI));
    let (syl_rate, syl_phase) = (rng.gen_range(2.0..8.0), rng.gen_range(0.0..2.0 * PI));
    let harmonics = ((0.45 * sr / (f0 * (1.0 + drift_depth))) as usize).clamp(1, 40);
    let amps: Vec<f64> = (1..=harmonics).map(|k| rng.gen_range(0.5..1.0) / k as f64).collect();
    let phases: Vec<f64> = (0..harmonics).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let mut phase = 0.0;
    (0..len)
        .map(|i| {
            let t = i as f64 / sr;
            let f = f0 * (1.0 + drift_depth * (2.0 * PI * drift_rate * t + drift_phase).sin());
            phase += 2.0 * PI * f / sr;
            let env = 0.5 * (1.0 - (2.0 * PI * syl_rate * t + syl_phase).cos());
            let tone: f64 = amps.iter().zip(&phases).enumerate().map(|(k, (a, p))| a * ((k + 1) as f64 * phase + p).sin()).sum();
            env * tone
        })
        .collect()
}

/// White noise through a random two-pole resonator.
fn resonant_noise(rng: &mut ChaCha8Rng, len: usize, sr: f64) -> Vec<f64> {
    let fc = rng.gen_range(100.0..0.4 * sr);
    let r: f64 = rng.gen_range(0.5..0.95);
    let (a1, a2) = (2.0 * r * (2.0 * PI * fc / sr).cos(), -r * r);
    let (mut y1, mut y2) = (0.0, 0.0);
    (0..len)
        .map(|_| {
            let w: f64 = rng.sample(StandardNormal);
            let y = w + a1 * y1 + a2 * y2;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

/// Deterministic synthetic mixture at the requested SNR.
pub fn synth_example(seed: u64, duration_s: f64, sample_rate: u32, snr_db: f64) -> Result<SynthExample> {
    if !(SNR_RANGE_DB.0..=SNR_RANGE_DB.1).contains(&snr_db) {
        return Err(Error::invalid(
            "synth_example",
            format!("SNR {snr_db} dB outside [{}, {}]", SNR_RANGE_DB.0, SNR_RANGE_DB.1),
        ));
    }
    let len = (duration_s * sample_rate as f64).round() as usize;
    if len == 0 {
        return Err(Error::invalid("synth_example", "duration shorter than one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = sample_rate as f64;
    let mut s = speech_like(&mut rng, len, sr);
    while rms(&s) < 1e-3 {
        s = speech_like(&mut rng, len, sr);
    }
    let gain = SPEECH_RMS / rms(&s);
    let s: Vec<f64> = s.iter().map(|v| quantize(v * gain)).collect();
    let n = resonant_noise(&mut rng, len, sr);
    let target = rms(&s) * 10f64.powf(-snr_db / 20.0);
    let gain = target / rms(&n);
    let n: Vec<f64> = n.iter().map(|v| quantize(v * gain)).collect();
    let x = s.iter().zip(&n).map(|(a, b)| a + b).collect();
    Ok(SynthExample {
        s,
        n,
        x,
        snr_db,
        sample_rate,
    })
}

/// Source of training batches.
pub trait DataSource {
    /// Examples for 1-based training step `step`.
    fn batch(&mut self, step: u64, size: usize) -> Result<Vec<SynthExample>>;
}

/// A fixed example set visited in order, wrapping around.
#[derive(Debug, Clone)]
pub struct FixedSet {
    pub examples: Vec<SynthExample>,
}

impl FixedSet {
    /// `count` examples seeded from `seed` with SNRs spread uniformly over
    /// `snr_range`.
    pub fn generate(seed: u64, count: usize, duration_s: f64, sample_rate: u32, snr_range: (f64, f64)) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let examples = (0..count)
            .map(|_| {
                let snr = rng.gen_range(snr_range.0..=snr_range.1);
                synth_example(rng.gen(), duration_s, sample_rate, snr)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FixedSet { examples })
    }
}

impl DataSource for FixedSet {
    fn batch(&mut self, step: u64, size: usize) -> Result<Vec<SynthExample>> {
        if self.examples.is_empty() {
            return Err(Error::invalid("fixed_set", "no examples"));
        }
        let start = (step.saturating_sub(1) as usize * size) % self.examples.len();
        Ok((0..size).map(|i| self.examples[(start + i) % self.examples.len()].clone()).collect())
    }
}

/// Fresh examples per step, derived from `(seed, step, index)`.
#[derive(Debug, Clone)]
pub struct SynthStream {
    pub seed: u64,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub snr_range: (f64, f64),
}

impl DataSource for SynthStream {
    fn batch(&mut self, step: u64, size: usize) -> Result<Vec<SynthExample>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ step.wrapping_mul(0xD1B5_4A32_D192_ED03));
        (0..size)
            .map(|_| {
                let snr = rng.gen_range(self.snr_range.0..=self.snr_range.1);
                synth_example(rng.gen(), self.duration_s, self.sample_rate, snr)
            })
            .collect()
    }
}
