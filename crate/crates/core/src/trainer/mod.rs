//! Optimization, synthetic data and evaluation metrics.

mod data;
mod metrics;
mod optim;

pub use data::{synth_example, DataSource, FixedSet, SynthExample, SynthStream, SNR_RANGE_DB};
pub use metrics::{si_snr, si_snri, snr, METRIC_CAP_DB};
pub use optim::{clip_global_norm, ema_update, global_norm, lr_at, Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use std::time::Instant;

use crate::autograd as ag;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{Ctx, Mode, ParamStore};
use crate::scalar::Scalar;

/// Environment variable that switches on reproducibility mode: wall times
/// are logged as zero so reruns produce byte-identical metric logs.
pub const REPRODUCIBLE_ENV: &str = "DFC_REPRODUCIBLE";

pub fn reproducible_mode() -> bool {
    std::env::var(REPRODUCIBLE_ENV).is_ok_and(|v| !v.is_empty() && v != "0")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub warmup_steps: u64,
    /// Multiplies the schedule; 1 gives the plain schedule.
    pub lr_scale: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub ema_decay: f64,
    pub seed: u64,
    pub clip_duration_s: f64,
    pub snr_range: (f64, f64),
    /// Size of the fixed validation set.
    pub val_size: usize,
    pub val_seed: u64,
    /// Steps between validation passes; 0 disables validation.
    pub val_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 8,
            warmup_steps: 25_000,
            lr_scale: 1.0,
            weight_decay: 1e-6,
            clip_norm: 5.0,
            ema_decay: 0.9999,
            seed: 0,
            clip_duration_s: 1.0,
            snr_range: (-5.0, 10.0),
            val_size: 32,
            val_seed: 0x5EED,
            val_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::invalid("train_config", msg.to_string()));
        if self.steps == 0 || self.batch_size == 0 || self.warmup_steps == 0 {
            return bad("steps, batch size and warmup must be positive");
        }
        if !(self.lr_scale > 0.0 && self.clip_norm > 0.0 && self.weight_decay >= 0.0) {
            return bad("learning-rate scale and clip norm must be positive, weight decay nonnegative");
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return bad("ema decay must lie in (0, 1)");
        }
        if self.clip_duration_s <= 0.0 {
            return bad("clip duration must be positive");
        }
        let (lo, hi) = self.snr_range;
        if !(SNR_RANGE_DB.0 <= lo && lo <= hi && hi <= SNR_RANGE_DB.1) {
            return bad("snr range must be ordered and inside [-40, 45] dB");
        }
        Ok(())
    }

    pub fn lr(&self, step: u64, d_b: usize) -> Result<f64> {
        Ok(self.lr_scale * lr_at(step, d_b, self.warmup_steps)?)
    }
}

/// One line of the metric log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub si_snri_val: Option<f64>,
    pub wall_time_s: f64,
}

impl MetricRow {
    pub const CSV_HEADER: &'static str = "step,lr,loss,grad_norm,si_snri_val,wall_time_s";

    pub fn to_csv(&self) -> String {
        let val = self.si_snri_val.map(|v| format!("{v:.6}")).unwrap_or_default();
        format!(
            "{},{:.9e},{:.9},{:.9},{},{:.3}",
            self.step, self.lr, self.loss, self.grad_norm, val, self.wall_time_s
        )
    }
}

/// Mean SI-SNRi of the model's speech estimates over `examples`, eval mode.
pub fn mean_si_snri<T: Scalar>(model: &Model, store: &ParamStore<T>, examples: &[SynthExample]) -> Result<f64> {
    let ctx = Ctx::eval(store);
    let mut total = 0.0;
    for ex in examples {
        let x: Vec<T> = ex.x.iter().map(|v| T::c(*v)).collect();
        let est = model.enhance(&ctx, &x)?;
        let y: Vec<f64> = est.speech.data().iter().map(|v| v.as_f64()).collect();
        total += si_snri(&y, &ex.s, &ex.x)?;
    }
    Ok(total / examples.len().max(1) as f64)
}

/// Runs the optimization loop. The store carries parameters, buffers and
/// EMA shadows; the optimizer state lives here.
pub struct Trainer<'m, T: Scalar> {
    pub model: &'m Model,
    pub config: TrainConfig,
    pub adam: Adam<T>,
    pub validation: Vec<SynthExample>,
    /// Last completed step.
    pub step: u64,
    reproducible: bool,
    started: Instant,
}

impl<'m, T: Scalar> Trainer<'m, T> {
    pub fn new(model: &'m Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let validation = if config.val_every > 0 && config.val_size > 0 {
            FixedSet::generate(
                config.val_seed,
                config.val_size,
                config.clip_duration_s,
                model.config.sample_rate,
                config.snr_range,
            )?
            .examples
        } else {
            Vec::new()
        };
        Ok(Trainer {
            model,
            adam: Adam::new(config.weight_decay),
            config,
            validation,
            step: 0,
            reproducible: reproducible_mode(),
            started: Instant::now(),
        })
    }

    pub fn set_reproducible(&mut self, on: bool) {
        self.reproducible = on;
    }

    /// Mean loss of a batch without updating anything.
    pub fn batch_loss(&self, store: &ParamStore<T>, batch: &[SynthExample], mode: Mode) -> Result<f64> {
        let ctx = Ctx::new(store, mode, false, self.config.seed);
        Ok(self.mean_loss(&ctx, batch)?.data()[0].as_f64())
    }

    fn mean_loss(&self, ctx: &Ctx<'_, T>, batch: &[SynthExample]) -> Result<ag::Var<T>> {
        if batch.is_empty() {
            return Err(Error::invalid("train_step", "empty batch"));
        }
        let cast = |v: &[f64]| v.iter().map(|a| T::c(*a)).collect::<Vec<T>>();
        let signals: Vec<(Vec<T>, Vec<T>)> = batch.iter().map(|ex| (cast(&ex.s), cast(&ex.n))).collect();
        let pairs: Vec<(&[T], &[T])> = signals.iter().map(|(s, n)| (s.as_slice(), n.as_slice())).collect();
        let losses = self.model.loss_batch(ctx, &pairs)?;
        let mut total = losses[0].clone();
        for l in &losses[1..] {
            total = ag::add(&total, l)?;
        }
        Ok(ag::scale_const(&total, T::c(1.0 / batch.len() as f64)))
    }

    /// One optimization step: forward, loss, backward, clip, Adam, EMA.
    /// A non-finite loss or gradient leaves the store untouched and returns
    /// [`Error::Diverged`].
    pub fn train_step(&mut self, store: &mut ParamStore<T>, batch: &[SynthExample]) -> Result<MetricRow> {
        if store.iter().any(|p| p.trainable && p.ema_shadow.is_none()) {
            ema_update(store, self.config.ema_decay);
        }
        let step = self.step + 1;
        let lr = self.config.lr(step, self.model.config.block.d_b)?;
        let seed = self.config.seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let ctx = Ctx::new(store, Mode::Train, true, seed);
        let loss = self.mean_loss(&ctx, batch)?;
        let loss_value = loss.data()[0].as_f64();
        if !loss_value.is_finite() {
            return Err(Error::Diverged { step });
        }
        loss.backward()?;
        let mut updates = ctx.finish();
        let grad_norm = clip_global_norm(&mut updates.grads, self.config.clip_norm);
        if !grad_norm.is_finite() {
            return Err(Error::Diverged { step });
        }
        self.adam.step(store, &updates.grads, lr)?;
        for (id, value) in updates.buffers {
            store.set(id, value)?;
        }
        ema_update(store, self.config.ema_decay);
        for stage in &self.model.stages {
            for block in &stage.predictor.blocks {
                if let Some(attn) = block.attention() {
                    attn.maybe_redraw(store, step)?;
                }
            }
        }
        self.step = step;
        let si_snri_val = if self.config.val_every > 0 && !self.validation.is_empty() && step % self.config.val_every == 0 {
            Some(mean_si_snri(self.model, &store.with_ema_weights(), &self.validation)?)
        } else {
            None
        };
        Ok(MetricRow {
            step,
            lr,
            loss: loss_value,
            grad_norm,
            si_snri_val,
            wall_time_s: if self.reproducible { 0.0 } else { self.started.elapsed().as_secs_f64() },
        })
    }

    /// Trains for the configured number of steps, calling `on_step` after
    /// every step. On divergence the store keeps the last good parameters.
    pub fn run(
        &mut self,
        store: &mut ParamStore<T>,
        data: &mut dyn DataSource,
        mut on_step: impl FnMut(&MetricRow, &ParamStore<T>) -> Result<()>,
    ) -> Result<Vec<MetricRow>> {
        let mut rows = Vec::with_capacity(self.config.steps as usize);
        while self.step < self.config.steps {
            let batch = data.batch(self.step + 1, self.config.batch_size)?;
            let row = self.train_step(store, &batch)?;
            on_step(&row, store)?;
            rows.push(row);
        }
        Ok(rows)
    }
}

#[cfg(test)]
mod tests;
