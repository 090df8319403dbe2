//! Subcommand bodies. Each returns data or writes files; `main` maps errors
//! to exit codes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use dfconformer::filterbank::Waveform;
use dfconformer::model::Model;
use dfconformer::nn::{Ctx, ParamStore};
use dfconformer::trainer::{
    self, si_snr, DataSource, FixedSet, MetricRow, SynthExample, SynthStream, Trainer,
};
use dfconformer::Scalar;

use crate::bench::{self, BenchRow, BenchSettings};
use crate::checkpoint::{self, Checkpoint};
use crate::config::{DataKind, Precision, RunConfig};
use crate::error::{CliError, Result};
use crate::wav;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.dfc";
pub const CONFIG_FILE: &str = "config.txt";

/// Largest frame count `dump-attention` writes by default.
pub const DEFAULT_DUMP_LIMIT: usize = 2000;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps: u64,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub last: Option<MetricRow>,
}

/// Trains from `cfg`, writing `metrics.csv`, `config.txt` and the
/// checkpoint into `out`. On divergence the last good weights are saved
/// before the error is returned.
pub fn train(cfg: &RunConfig, out: &Path, reproducible: bool) -> Result<TrainSummary> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => train_as::<f32>(cfg, out, reproducible),
        Precision::F64 => train_as::<f64>(cfg, out, reproducible),
    }
}

fn train_as<T: Scalar>(cfg: &RunConfig, out: &Path, reproducible: bool) -> Result<TrainSummary> {
    create_dir(out)?;
    let config_path = out.join(CONFIG_FILE);
    fs::write(&config_path, cfg.to_text()).map_err(|e| CliError::io(&config_path, e))?;
    let metrics_path = out.join(METRICS_FILE);
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let mut metrics = fs::File::create(&metrics_path).map_err(|e| CliError::io(&metrics_path, e))?;
    writeln!(metrics, "{}", MetricRow::CSV_HEADER).map_err(|e| CliError::io(&metrics_path, e))?;

    let mut store = ParamStore::<T>::new();
    let model = Model::new(&mut store, &cfg.model)?;
    let t = &cfg.train;
    let mut data: Box<dyn DataSource> = match cfg.data {
        DataKind::Stream => Box::new(SynthStream {
            seed: t.seed,
            duration_s: t.clip_duration_s,
            sample_rate: cfg.model.sample_rate,
            snr_range: t.snr_range,
        }),
        DataKind::Fixed => Box::new(FixedSet::generate(
            t.seed,
            cfg.data_examples,
            t.clip_duration_s,
            cfg.model.sample_rate,
            t.snr_range,
        )?),
    };
    let mut trainer = Trainer::new(&model, t.clone())?;
    trainer.set_reproducible(reproducible);
    let mut last = None;
    let mut output_error: Option<CliError> = None;
    let result = trainer.run(&mut store, data.as_mut(), |row, s| {
        let written = writeln!(metrics, "{}", row.to_csv())
            .map_err(|e| CliError::io(&metrics_path, e))
            .and_then(|_| {
                if cfg.checkpoint_every > 0 && row.step % cfg.checkpoint_every == 0 && row.step < t.steps {
                    checkpoint::save(&ckpt_path, cfg, row.step, s)
                } else {
                    Ok(())
                }
            });
        last = Some(row.clone());
        written.map_err(|e| {
            output_error = Some(e);
            dfconformer::Error::InvalidArgument {
                op: "train",
                msg: "writing outputs failed".to_string(),
            }
        })
    });
    if let Some(e) = output_error {
        return Err(e);
    }
    metrics.flush().map_err(|e| CliError::io(&metrics_path, e))?;
    checkpoint::save(&ckpt_path, cfg, trainer.step, &store)?;
    result?;
    Ok(TrainSummary {
        steps: trainer.step,
        checkpoint: ckpt_path,
        metrics: metrics_path,
        last,
    })
}

fn stem_paths(input: &Path, out: &Path) -> (PathBuf, PathBuf) {
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("input");
    (out.join(format!("{stem}_speech.wav")), out.join(format!("{stem}_noise.wav")))
}

/// Enhances one WAV file into `<stem>_speech.wav` and `<stem>_noise.wav`
/// under `out`, with EMA weights unless `raw_weights`.
pub fn enhance(ckpt: &Path, input: &Path, out: &Path, raw_weights: bool) -> Result<(PathBuf, PathBuf)> {
    let ck: Checkpoint<f32> = checkpoint::load(ckpt)?;
    let store = if raw_weights { ck.store.clone() } else { ck.ema_store() };
    let x = wav::read(input)?;
    let x32 = Waveform::new(x.samples.iter().map(|v| *v as f32).collect(), x.sample_rate)?;
    let (s, n) = ck.model.enhance_waveform(&store, &x32)?;
    create_dir(out)?;
    let (sp, np) = stem_paths(input, out);
    let widen = |w: &Waveform<f32>| w.samples.iter().map(|v| *v as f64).collect::<Vec<f64>>();
    wav::write(&sp, &widen(&s), x.sample_rate)?;
    wav::write(&np, &widen(&n), x.sample_rate)?;
    Ok((sp, np))
}

pub const EVAL_HEADER: &str = "example,snr_db,si_snr_in,si_snr_out,si_snri";

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub example: String,
    pub snr_db: f64,
    pub si_snr_in: f64,
    pub si_snr_out: f64,
}

impl EvalRow {
    pub fn si_snri(&self) -> f64 {
        self.si_snr_out - self.si_snr_in
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{:.3},{:.6},{:.6},{:.6}",
            self.example,
            self.snr_db,
            self.si_snr_in,
            self.si_snr_out,
            self.si_snri()
        )
    }
}

fn eval_one(model: &Model, store: &ParamStore<f32>, name: String, x: &[f64], s: &[f64], snr_db: f64) -> Result<EvalRow> {
    let x32: Vec<f32> = x.iter().map(|v| *v as f32).collect();
    let est = model.enhance(&Ctx::eval(store), &x32)?;
    let y: Vec<f64> = est.speech.data().iter().map(|v| *v as f64).collect();
    Ok(EvalRow {
        example: name,
        snr_db,
        si_snr_in: si_snr(x, s)?,
        si_snr_out: si_snr(&y, s)?,
    })
}

/// SI-SNR of a checkpoint's speech estimates on the synthetic validation
/// set of `cfg` (validation seed, size, clip length and SNR range).
pub fn eval_synthetic(ckpt: &Path, cfg: &RunConfig, raw_weights: bool) -> Result<Vec<EvalRow>> {
    let ck: Checkpoint<f32> = checkpoint::load(ckpt)?;
    let store = if raw_weights { ck.store.clone() } else { ck.ema_store() };
    let t = &cfg.train;
    let set = FixedSet::generate(t.val_seed, t.val_size.max(1), t.clip_duration_s, ck.model.config.sample_rate, t.snr_range)?;
    set.examples
        .iter()
        .enumerate()
        .map(|(i, ex): (usize, &SynthExample)| eval_one(&ck.model, &store, i.to_string(), &ex.x, &ex.s, ex.snr_db))
        .collect()
}

/// SI-SNR of a checkpoint on one mixture WAV against a clean reference WAV.
pub fn eval_pair(ckpt: &Path, mixture: &Path, reference: &Path, raw_weights: bool) -> Result<EvalRow> {
    let ck: Checkpoint<f32> = checkpoint::load(ckpt)?;
    let store = if raw_weights { ck.store.clone() } else { ck.ema_store() };
    let x = wav::read(mixture)?;
    let s = wav::read(reference)?;
    if x.sample_rate != ck.model.config.sample_rate {
        return Err(CliError::input(
            mixture,
            format!("sample rate {} differs from the model's {}", x.sample_rate, ck.model.config.sample_rate),
        ));
    }
    if s.len() != x.len() || s.sample_rate != x.sample_rate {
        return Err(CliError::input(reference, "reference length or rate differs from the mixture"));
    }
    let snr = trainer::snr(&x.samples, &s.samples)?;
    eval_one(&ck.model, &store, mixture.display().to_string(), &x.samples, &s.samples, snr)
}

/// Mean SI-SNRi over rows.
pub fn mean_si_snri(rows: &[EvalRow]) -> f64 {
    rows.iter().map(EvalRow::si_snri).sum::<f64>() / rows.len().max(1) as f64
}

/// Parameter count report: total, then one line per module.
pub fn params(cfg: &RunConfig) -> String {
    let mut out = format!("preset {}\ntotal {}\n", cfg.preset, cfg.model.param_count());
    for (name, count) in cfg.model.param_breakdown() {
        out.push_str(&format!("{name} {count}\n"));
    }
    out
}

/// Runs the benchmark for every preset, appending rows to `out`.
pub fn bench_rtf(presets: &[String], settings: &BenchSettings, out: &Path) -> Result<Vec<BenchRow>> {
    let configs = presets
        .iter()
        .map(|p| RunConfig::from_preset(p).map(|c| (p.clone(), c)))
        .collect::<Result<Vec<_>>>()?;
    let mut file = bench::open_csv(out, bench::CSV_HEADER)?;
    let mut rows = Vec::new();
    for (name, cfg) in configs {
        let (model, store) = bench::bench_model(&cfg.model, settings.seed)?;
        rows.extend(bench::measure(&name, &model, &store, settings, |row| {
            writeln!(file, "{}", row.to_csv()).map_err(|e| CliError::io(out, e))
        })?);
    }
    Ok(rows)
}

/// Where `dump-attention` takes its weights from.
pub enum WeightSource<'a> {
    Checkpoint(&'a Path),
    /// Untrained preset weights from `seed`, batch norm primed on the input.
    Preset(&'a str, u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DumpSummary {
    pub frames: usize,
    /// Largest `|row sum − 1|`.
    pub row_sum_error: f64,
    /// Smallest matrix entry.
    pub min_entry: f64,
    /// Largest `|A·V − streaming output|`.
    pub streaming_error: f64,
}

/// Writes the `N×N` attention matrix of `head` in block `layer` for the
/// input WAV as CSV, and cross-checks it against the streaming output.
pub fn dump_attention(
    source: WeightSource<'_>,
    input: &Path,
    layer: usize,
    head: usize,
    limit: usize,
    out: &Path,
) -> Result<DumpSummary> {
    let x = wav::read(input)?;
    let (model, store) = match source {
        WeightSource::Checkpoint(path) => {
            let ck: Checkpoint<f64> = checkpoint::load(path)?;
            let store = ck.ema_store();
            (ck.model, store)
        }
        WeightSource::Preset(name, seed) => {
            let mut cfg = RunConfig::from_preset(name)?;
            cfg.model.seed = seed;
            let mut store = ParamStore::<f64>::new();
            let model = Model::new(&mut store, &cfg.model)?;
            model.calibrate(&mut store, std::slice::from_ref(&x.samples))?;
            (model, store)
        }
    };
    if x.sample_rate != model.config.sample_rate {
        return Err(CliError::input(
            input,
            format!("sample rate {} differs from the model's {}", x.sample_rate, model.config.sample_rate),
        ));
    }
    let dump = model.attention_dump(&Ctx::eval(&store), &x.samples, layer, head, limit)?;
    let (n, _) = dump.matrix.dims2("dump")?;
    let a = dump.matrix.data();
    let mut csv = String::with_capacity(n * n * 12);
    let mut row_sum_error: f64 = 0.0;
    for row in a.chunks_exact(n) {
        row_sum_error = row_sum_error.max((row.iter().sum::<f64>() - 1.0).abs());
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.9e}")).collect();
        csv.push_str(&cells.join(","));
        csv.push('\n');
    }
    let min_entry = a.iter().copied().fold(f64::INFINITY, f64::min);
    let (_, d) = dump.values.dims2("dump")?;
    let v = dump.values.data();
    let mut streaming_error: f64 = 0.0;
    for i in 0..n {
        for c in 0..d {
            let av: f64 = (0..n).map(|j| a[i * n + j] * v[j * d + c]).sum();
            streaming_error = streaming_error.max((av - dump.output.data()[i * d + c]).abs());
        }
    }
    fs::write(out, csv).map_err(|e| CliError::io(out, e))?;
    Ok(DumpSummary {
        frames: n,
        row_sum_error,
        min_entry,
        streaming_error,
    })
}
