//! Real-time-factor benchmark: wall time of the full enhancement pipeline
//! divided by the audio duration, single thread, median over repetitions
//! after warmup runs.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use dfconformer::filterbank::Waveform;
use dfconformer::model::{Model, ModelConfig};
use dfconformer::nn::ParamStore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, Result};

pub const CSV_HEADER: &str = "preset,duration_s,rtf_median,rtf_iqr";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSettings {
    pub durations: Vec<f64>,
    pub reps: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            durations: (1..=10).map(f64::from).collect(),
            reps: 5,
            warmup: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub preset: String,
    pub duration_s: f64,
    pub rtf_median: f64,
    pub rtf_iqr: f64,
}

impl BenchRow {
    pub fn to_csv(&self) -> String {
        format!("{},{},{:.6},{:.6}", self.preset, self.duration_s, self.rtf_median, self.rtf_iqr)
    }
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Interquartile range.
pub fn iqr(values: &[f64]) -> f64 {
    quantile(values, 0.75) - quantile(values, 0.25)
}

/// Average ranks, ties sharing the mean rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation: Pearson correlation of the ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn noise(seed: u64, len: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-0.3..0.3)).collect()
}

/// A freshly initialized `f32` model with batch-norm statistics primed on
/// one second of noise. Timing does not depend on the weight values.
pub fn bench_model(cfg: &ModelConfig, seed: u64) -> Result<(Model, ParamStore<f32>)> {
    let mut store = ParamStore::new();
    let model = Model::new(&mut store, cfg)?;
    model.calibrate(&mut store, &[noise(seed, cfg.sample_rate as usize)])?;
    Ok((model, store))
}

/// RTF of `model` per duration. Runs on the calling thread only.
pub fn measure(
    label: &str,
    model: &Model,
    store: &ParamStore<f32>,
    settings: &BenchSettings,
    mut on_row: impl FnMut(&BenchRow) -> Result<()>,
) -> Result<Vec<BenchRow>> {
    if settings.reps == 0 {
        return Err(CliError::Usage("bench-rtf needs at least one repetition".to_string()));
    }
    let sr = model.config.sample_rate;
    let mut rows = Vec::with_capacity(settings.durations.len());
    for (i, &d) in settings.durations.iter().enumerate() {
        let len = (d * sr as f64).round() as usize;
        if len == 0 {
            return Err(CliError::Usage(format!("duration {d} s is shorter than one sample")));
        }
        let x = Waveform::new(noise(settings.seed.wrapping_add(i as u64 + 1), len), sr)?;
        for _ in 0..settings.warmup {
            model.enhance_waveform(store, &x)?;
        }
        let mut rtf = Vec::with_capacity(settings.reps);
        for _ in 0..settings.reps {
            let start = Instant::now();
            let out = model.enhance_waveform(store, &x)?;
            rtf.push(start.elapsed().as_secs_f64() / d);
            std::hint::black_box(out);
        }
        let row = BenchRow {
            preset: label.to_string(),
            duration_s: d,
            rtf_median: median(&rtf),
            rtf_iqr: iqr(&rtf),
        };
        on_row(&row)?;
        rows.push(row);
    }
    Ok(rows)
}

/// Opens `path` for appending, writing the header first when the file is
/// new or empty. An existing file must carry the same header.
pub fn open_csv(path: &Path, header: &str) -> Result<std::fs::File> {
    if let Ok(existing) = std::fs::read_to_string(path) {
        if let Some(first) = existing.lines().next() {
            if first != header {
                return Err(CliError::input(path, format!("existing CSV header `{first}` differs from `{header}`")));
            }
        }
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::io(path, e))?;
    let empty = f.metadata().map_err(|e| CliError::io(path, e))?.len() == 0;
    if empty {
        writeln!(f, "{header}").map_err(|e| CliError::io(path, e))?;
    }
    Ok(f)
}
