use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::blocks::{BlockConfig, BlockKind};
use crate::filterbank::FilterbankConfig;
use crate::model::ModelConfig;
use crate::nn::ParamId;
use crate::tensor::Tensor;

fn randn(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn learning_rate_schedule_values() {
    let peak = lr_at(25_000, 216, 25_000).unwrap();
    assert!((peak - 216f64.powf(-0.5) * 25_000f64.powf(-0.5)).abs() < 1e-15);
    assert!((peak - 4.30e-4).abs() < 1e-6);
    let first = lr_at(1, 216, 25_000).unwrap();
    assert!((first - 1.72e-8).abs() < 1e-10);
    assert!(lr_at(0, 216, 25_000).is_err());
    let below = lr_at(24_999, 216, 25_000).unwrap();
    let above = lr_at(25_001, 216, 25_000).unwrap();
    assert!(below < peak && above < peak);
    assert!((below - peak).abs() < 1e-7 && (above - peak).abs() < 1e-7);
    let rising: Vec<f64> = (1..100).map(|n| lr_at(n * 250, 216, 25_000).unwrap()).collect();
    assert!(rising.windows(2).all(|w| w[1] > w[0]));
    let falling: Vec<f64> = (100..200).map(|n| lr_at(n * 250, 216, 25_000).unwrap()).collect();
    assert!(falling.windows(2).all(|w| w[1] < w[0]));
}

fn grads(parts: &[Vec<f64>]) -> Vec<(ParamId, Tensor<f64>)> {
    parts
        .iter()
        .enumerate()
        .map(|(i, p)| (ParamId(i), Tensor::new(&[p.len()], p.clone()).unwrap()))
        .collect()
}

#[test]
fn clipping_rescales_only_large_gradients() {
    let mut small = grads(&[vec![1.5, 0.0], vec![2.0]]);
    assert!((clip_global_norm(&mut small, 5.0) - 2.5).abs() < 1e-12);
    assert_eq!(small[0].1.data(), &[1.5, 0.0]);

    let mut large = grads(&[vec![6.0, 0.0], vec![8.0]]);
    let before: Vec<f64> = large.iter().flat_map(|(_, g)| g.data().to_vec()).collect();
    assert!((clip_global_norm(&mut large, 5.0) - 10.0).abs() < 1e-12);
    let after: Vec<f64> = large.iter().flat_map(|(_, g)| g.data().to_vec()).collect();
    assert_eq!(after, [3.0, 0.0, 4.0]);
    assert!((global_norm(&large) - 5.0).abs() < 1e-9);
    let cos = dot(&before, &after) / (dot(&before, &before).sqrt() * dot(&after, &after).sqrt());
    assert!((cos - 1.0).abs() < 1e-12);
}

fn scalar_store(v: f64) -> (ParamStore<f64>, ParamId) {
    let mut store = ParamStore::new();
    let id = store.add("p", Tensor::new(&[1], vec![v]).unwrap(), true).unwrap();
    (store, id)
}

#[test]
fn adam_matches_hand_rolled_trajectory() {
    let (mut store, id) = scalar_store(0.7);
    let mut adam = Adam::new(1e-2);
    let (lr, g) = (0.05, 0.3);
    let (mut p, mut m, mut v) = (0.7f64, 0.0f64, 0.0f64);
    for t in 1..=3 {
        adam.step(&mut store, &grads(&[vec![g]]), lr).unwrap();
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let mhat = m / (1.0 - 0.9f64.powi(t));
        let vhat = v / (1.0 - 0.999f64.powi(t));
        p = p - lr * mhat / (vhat.sqrt() + 1e-8) - lr * 1e-2 * p;
        assert!((store.tensor(id).data()[0] - p).abs() < 1e-14, "step {t}");
    }
}

#[test]
fn adam_zero_gradient_applies_only_weight_decay() {
    let (mut store, id) = scalar_store(2.0);
    let mut adam = Adam::new(1e-6);
    adam.step(&mut store, &[], 0.1).unwrap();
    assert!((store.tensor(id).data()[0] - (2.0 - 0.1 * 1e-6 * 2.0)).abs() < 1e-15);
}

#[test]
fn adam_first_step_is_about_lr_regardless_of_scale() {
    for g in [1e-4, 1.0, 1e4] {
        let (mut store, id) = scalar_store(0.0);
        Adam::new(0.0).step(&mut store, &grads(&[vec![g]]), 1e-3).unwrap();
        assert!((store.tensor(id).data()[0] + 1e-3).abs() < 1e-6);
    }
    let (mut store, _) = scalar_store(0.0);
    assert!(Adam::new(0.0).step(&mut store, &grads(&[vec![1.0, 2.0]]), 1e-3).is_err());
}

#[test]
fn ema_follows_the_scalar_recurrence() {
    let (mut store, id) = scalar_store(1.0);
    ema_update(&mut store, 0.9);
    assert_eq!(store.get(id).ema_shadow.as_ref().unwrap().data()[0], 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut shadow = 1.0;
    for _ in 0..100 {
        let v: f64 = rng.gen_range(-1.0..1.0);
        store.set(id, Tensor::new(&[1], vec![v]).unwrap()).unwrap();
        ema_update(&mut store, 0.9);
        shadow = 0.9 * shadow + 0.1 * v;
    }
    assert!((store.get(id).ema_shadow.as_ref().unwrap().data()[0] - shadow).abs() < 1e-12);

    let (mut store, id) = scalar_store(0.0);
    ema_update(&mut store, 0.5);
    store.set(id, Tensor::new(&[1], vec![1.0]).unwrap()).unwrap();
    for k in 1..=5 {
        ema_update(&mut store, 0.5);
        let gap = 1.0 - store.get(id).ema_shadow.as_ref().unwrap().data()[0];
        assert!((gap - 0.5f64.powi(k)).abs() < 1e-15);
    }
    ema_update(&mut store, 0.0);
    assert_eq!(store.get(id).ema_shadow.as_ref().unwrap().data()[0], 1.0);
}

#[test]
fn synthetic_examples_are_exact_and_deterministic() {
    for (seed, snr) in [(1, -40.0), (2, -3.5), (3, 0.0), (4, 17.0), (5, 45.0)] {
        let ex = synth_example(seed, 0.5, 8_000, snr).unwrap();
        assert_eq!(ex.x.len(), 4_000);
        assert!(ex.x.iter().zip(&ex.s).zip(&ex.n).all(|((x, s), n)| x - s - n == 0.0));
        let measured = 10.0 * (dot(&ex.s, &ex.s) / dot(&ex.n, &ex.n)).log10();
        assert!((measured - snr).abs() < 0.1, "{measured} vs {snr}");
        assert_eq!(ex, synth_example(seed, 0.5, 8_000, snr).unwrap());
    }
    assert_ne!(synth_example(1, 0.5, 8_000, 0.0).unwrap().s, synth_example(2, 0.5, 8_000, 0.0).unwrap().s);
    assert!(synth_example(1, 0.5, 8_000, 50.0).is_err());
    assert!(synth_example(1, 0.0, 8_000, 0.0).is_err());
}

#[test]
fn speech_like_source_is_voiced_and_modulated() {
    let ex = synth_example(9, 1.0, 16_000, 0.0).unwrap();
    let frame = 320;
    let energies: Vec<f64> = ex.s.chunks(frame).map(|c| dot(c, c)).collect();
    let (lo, hi) = energies.iter().fold((f64::MAX, 0.0f64), |(a, b), e| (a.min(*e), b.max(*e)));
    assert!(hi > 10.0 * lo, "envelope should modulate the level");
    let lag_corr = |lag: usize| dot(&ex.s[..ex.s.len() - lag], &ex.s[lag..]) / dot(&ex.s, &ex.s);
    let best = (16_000 / 300..=16_000 / 80 + 20).map(lag_corr).fold(f64::MIN, f64::max);
    assert!(best > 0.3, "harmonic source should be periodic, got {best}");
}

#[test]
fn si_snr_cases() {
    let s = randn(1, 500);
    let scaled: Vec<f64> = s.iter().map(|v| -3.0 * v).collect();
    assert_eq!(si_snr(&scaled, &s).unwrap(), METRIC_CAP_DB);

    let e0 = randn(2, 500);
    let k = dot(&e0, &s) / dot(&s, &s);
    let e: Vec<f64> = e0.iter().zip(&s).map(|(a, b)| a - k * b).collect();
    let g = (dot(&s, &s) / dot(&e, &e)).sqrt();
    let y: Vec<f64> = s.iter().zip(&e).map(|(a, b)| a + g * b).collect();
    assert!(si_snr(&y, &s).unwrap().abs() < 1e-9);

    let y = randn(3, 500);
    let a = dot(&y, &s) / dot(&s, &s);
    let t: Vec<f64> = s.iter().map(|v| a * v).collect();
    let r: Vec<f64> = y.iter().zip(&t).map(|(p, q)| p - q).collect();
    let oracle = 10.0 * (dot(&t, &t) / dot(&r, &r)).log10();
    assert!((si_snr(&y, &s).unwrap() - oracle).abs() < 1e-9);

    assert!(si_snr(&y, &[0.0; 500]).is_err());
    assert!(si_snr(&y[..10], &s).is_err());
    assert_eq!(si_snr(&[0.0; 500], &s).unwrap(), -METRIC_CAP_DB);
}

#[test]
fn si_snri_cases() {
    let s = randn(4, 800);
    let e0 = randn(5, 800);
    let k = dot(&e0, &s) / dot(&s, &s);
    let e: Vec<f64> = e0.iter().zip(&s).map(|(a, b)| a - k * b).collect();
    let x: Vec<f64> = s.iter().zip(&e).map(|(a, b)| a + b).collect();
    assert_eq!(si_snri(&x, &s, &x).unwrap(), 0.0);
    let half: Vec<f64> = s.iter().zip(&e).map(|(a, b)| a + 0.5 * b).collect();
    assert!((si_snri(&half, &s, &x).unwrap() - 20.0 * 2f64.log10()).abs() < 0.1);
    let best = si_snri(&s, &s, &x).unwrap();
    assert!((best - (METRIC_CAP_DB - si_snr(&x, &s).unwrap())).abs() < 1e-9);
    assert!((snr(&x, &s).unwrap() - 10.0 * (dot(&s, &s) / dot(&e, &e)).log10()).abs() < 1e-9);
}

proptest! {
    #[test]
    fn si_snr_is_scale_invariant(seed in 0u64..10_000, c in 1e-3f64..1e3) {
        let (s, y) = (randn(seed, 200), randn(seed + 1, 200));
        let cy: Vec<f64> = y.iter().map(|v| c * v).collect();
        prop_assert!((si_snr(&cy, &s).unwrap() - si_snr(&y, &s).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn clipped_norm_never_exceeds_the_limit(seed in 0u64..10_000, scale in 1e-3f64..1e3) {
        let parts: Vec<Vec<f64>> = (0..3).map(|i| randn(seed + i, 7).iter().map(|v| v * scale).collect()).collect();
        let mut g = grads(&parts);
        let before = clip_global_norm(&mut g, 5.0);
        let after = global_norm(&g);
        prop_assert!(after <= 5.0 + 1e-9);
        prop_assert_eq!(before > 5.0, (after - before).abs() > 1e-12);
    }

    #[test]
    fn schedule_is_continuous_at_the_peak(d_b in 8usize..512, warmup in 10u64..100_000) {
        let w = warmup as f64;
        let warm = (d_b as f64).powf(-0.5) * w * w.powf(-1.5);
        let decay = (d_b as f64).powf(-0.5) * w.powf(-0.5);
        prop_assert!((warm - decay).abs() <= 1e-15 * decay.max(1.0));
        prop_assert!((lr_at(warmup, d_b, warmup).unwrap() - decay).abs() < 1e-15);
    }
}

fn smoke_setup(steps: u64) -> (ModelConfig, TrainConfig) {
    let mut cfg = ModelConfig::tiny();
    cfg.block = BlockConfig::conformer(BlockKind::DfConformer, 16, 2, 16);
    cfg.block.dropout = 0.0;
    cfg.filterbank = FilterbankConfig { d_e: 16, ..FilterbankConfig::trainable() };
    let train = TrainConfig {
        steps,
        batch_size: 2,
        warmup_steps: 20,
        lr_scale: 0.2,
        ema_decay: 0.9,
        clip_duration_s: 0.1,
        val_size: 4,
        val_every: 5,
        ..TrainConfig::default()
    };
    (cfg, train)
}

fn run_smoke(steps: u64) -> (Vec<MetricRow>, ParamStore<f64>) {
    let (cfg, train) = smoke_setup(steps);
    let mut store = ParamStore::new();
    let model = Model::new(&mut store, &cfg).unwrap();
    let mut data = FixedSet::generate(1, 4, train.clip_duration_s, cfg.sample_rate, (0.0, 5.0)).unwrap();
    let mut trainer = Trainer::new(&model, train).unwrap();
    trainer.set_reproducible(true);
    let rows = trainer.run(&mut store, &mut data, |_, _| Ok(())).unwrap();
    (rows, store)
}

#[test]
fn training_is_deterministic_and_logs_every_step() {
    let (a, store) = run_smoke(10);
    let (b, _) = run_smoke(10);
    assert_eq!(a, b);
    assert_eq!(a.len(), 10);
    assert!(a.iter().all(|r| r.wall_time_s == 0.0 && r.loss.is_finite()));
    assert_eq!(a.iter().filter(|r| r.si_snri_val.is_some()).count(), 2);
    assert!(store.iter().filter(|p| p.trainable).all(|p| p.ema_shadow.is_some()));
    let line = a[4].to_csv();
    assert_eq!(line.split(',').count(), MetricRow::CSV_HEADER.split(',').count());
}

#[test]
fn short_training_run_reduces_the_loss() {
    let (rows, _) = run_smoke(60);
    let head: f64 = rows[..5].iter().map(|r| r.loss).sum::<f64>() / 5.0;
    let tail: f64 = rows[55..].iter().map(|r| r.loss).sum::<f64>() / 5.0;
    assert!(tail < head - 1.0, "{head} -> {tail}");
}

#[test]
fn clip_is_active_iff_pre_clip_norm_exceeds_limit() {
    let (cfg, mut train) = smoke_setup(4);
    train.clip_norm = 1e-3;
    let mut store = ParamStore::new();
    let model = Model::new(&mut store, &cfg).unwrap();
    let data = FixedSet::generate(1, 4, train.clip_duration_s, cfg.sample_rate, (0.0, 5.0)).unwrap();
    let trainer = Trainer::new(&model, train.clone()).unwrap();
    let ctx = Ctx::new(&store, Mode::Train, true, 0);
    let ex = &data.examples[0];
    model.loss(&ctx, &ex.s, &ex.n).unwrap().backward().unwrap();
    let mut g = ctx.finish().grads;
    let raw = global_norm(&g);
    assert!(raw > train.clip_norm);
    clip_global_norm(&mut g, train.clip_norm);
    assert!((global_norm(&g) - train.clip_norm).abs() < 1e-12);
    assert!(trainer.batch_loss(&store, &data.examples, Mode::Train).unwrap().is_finite());
}

#[test]
fn divergence_leaves_parameters_untouched() {
    let (cfg, train) = smoke_setup(3);
    let mut store = ParamStore::new();
    let model = Model::new(&mut store, &cfg).unwrap();
    let id = store.id("model.predictor.input.weight").unwrap();
    let mut t = store.tensor(id).clone();
    t.data_mut()[0] = f64::NAN;
    store.set(id, t).unwrap();
    let before: Vec<Vec<f64>> = store.iter().map(|p| p.tensor.data().to_vec()).collect();
    let mut data = FixedSet::generate(1, 4, train.clip_duration_s, cfg.sample_rate, (0.0, 5.0)).unwrap();
    let mut trainer = Trainer::new(&model, train).unwrap();
    let err = trainer.run(&mut store, &mut data, |_, _| Ok(())).unwrap_err();
    assert_eq!(err, Error::Diverged { step: 1 });
    let after: Vec<Vec<f64>> = store.iter().map(|p| p.tensor.data().to_vec()).collect();
    assert_eq!(format!("{before:?}"), format!("{after:?}"));
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    for bad in [
        TrainConfig { ema_decay: 1.0, ..TrainConfig::default() },
        TrainConfig { steps: 0, ..TrainConfig::default() },
        TrainConfig { snr_range: (5.0, -5.0), ..TrainConfig::default() },
        TrainConfig { snr_range: (-50.0, 0.0), ..TrainConfig::default() },
    ] {
        assert!(bad.validate().is_err());
    }
}

#[test]
fn fixed_set_cycles_and_stream_is_seeded() {
    let mut set = FixedSet::generate(3, 5, 0.05, 8_000, (-5.0, 5.0)).unwrap();
    let b1 = set.batch(1, 3).unwrap();
    let b2 = set.batch(2, 3).unwrap();
    assert_eq!(b1[0], set.examples[0]);
    assert_eq!(b2[0], set.examples[3]);
    assert_eq!(b2[2], set.examples[0]);
    let mut stream = SynthStream {
        seed: 4,
        duration_s: 0.05,
        sample_rate: 8_000,
        snr_range: (-5.0, 5.0),
    };
    assert_eq!(stream.batch(7, 2).unwrap(), stream.batch(7, 2).unwrap());
    assert_ne!(stream.batch(7, 2).unwrap(), stream.batch(8, 2).unwrap());
}
