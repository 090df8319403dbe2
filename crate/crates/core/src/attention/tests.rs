use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::autograd::gradcheck::max_relative_error;
use crate::nn::{Ctx, Init, Mode, ParamStore};

fn gauss(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let g: f64 = StandardNormal.sample(rng);
        scale * g
    })
}

fn c(t: &Tensor<f64>) -> Var<f64> {
    Var::constant(t.clone())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rel_fro(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let num: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum();
    (num / b.sum_sq()).sqrt()
}

fn layer(kind: AttentionKind, d_b: usize, heads: usize, d_r: usize) -> (ParamStore<f64>, MultiHeadAttention) {
    let mut store = ParamStore::new();
    let mut cfg = AttentionConfig::new(d_b, heads, d_r);
    cfg.rng_seed = 5;
    let mha = {
        let mut init = Init::new(&mut store, 9);
        MultiHeadAttention::new(&mut init, "att", &cfg, kind).unwrap()
    };
    (store, mha)
}

#[test]
fn orthogonal_blocks_and_determinism() {
    let (d, d_r) = (8, 20);
    let map = draw_orthogonal_features(d, d_r, 3).unwrap();
    assert_eq!(map.omega.shape(), &[20, 8]);
    let rows: Vec<Vec<f64>> = map
        .omega
        .data()
        .chunks_exact(d)
        .map(|r| {
            let n = dot(r, r).sqrt();
            r.iter().map(|v| v / n).collect()
        })
        .collect();
    for block in rows.chunks(d) {
        for i in 0..block.len() {
            for j in 0..i {
                assert!(dot(&block[i], &block[j]).abs() < 1e-10);
            }
        }
    }
    assert!(map.omega.data().iter().all(|v| v.is_finite()));
    assert_eq!(map, draw_orthogonal_features(d, d_r, 3).unwrap());
    assert_ne!(map, draw_orthogonal_features(d, d_r, 4).unwrap());
}

#[test]
fn row_norms_follow_chi_distribution() {
    let d = 16;
    let map = draw_orthogonal_features(d, 10_000, 1).unwrap();
    let mean: f64 = map.omega.data().chunks_exact(d).map(|r| dot(r, r)).sum::<f64>() / 10_000.0;
    assert!((mean / d as f64 - 1.0).abs() < 0.03, "mean {mean}");
}

#[test]
fn features_positive_and_zero_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let omega = draw_orthogonal_features(4, 12, 0).unwrap().omega;
    let x = gauss(&mut rng, &[6, 4], 3.0);
    for s in [Stabilizer::None, Stabilizer::PerRow, Stabilizer::Global] {
        let phi = favor_features(&c(&x), &omega, s).unwrap();
        assert!(phi.data().iter().all(|v| *v > 0.0));
    }
    let phi = favor_features(&c(&Tensor::zeros(&[1, 4])), &omega, Stabilizer::PerRow).unwrap();
    let want = 1.0 / 12f64.sqrt();
    assert!(phi.data().iter().all(|v| (v - want).abs() < 1e-15));
}

#[test]
fn feature_kernel_estimates_exponential_dot_product() {
    // E[φ(q)·φ(k)] = exp(q·k) for Gaussian rows.
    let (d, d_r) = (16, 1024);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let q = gauss(&mut rng, &[1, d], 0.25);
    let k = gauss(&mut rng, &[1, d], 0.25);
    let mut est = 0.0;
    for seed in 0..50 {
        let omega = draw_orthogonal_features(d, d_r, 100 + seed).unwrap().omega;
        let pq = favor_features(&c(&q), &omega, Stabilizer::None).unwrap();
        let pk = favor_features(&c(&k), &omega, Stabilizer::None).unwrap();
        est += dot(pq.data(), pk.data()) / 50.0;
    }
    let want = dot(q.data(), k.data()).exp();
    assert!((est - want).abs() / want < 0.05, "est {est} want {want}");
}

#[test]
fn stabilizers_cancel_in_normalized_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let omega = draw_orthogonal_features(8, 32, 0).unwrap().omega;
    let q = gauss(&mut rng, &[5, 8], 1.0);
    let k = gauss(&mut rng, &[7, 8], 1.0);
    let norm = |sq: Stabilizer, sk: Stabilizer| {
        let pq = favor_features(&c(&q), &omega, sq).unwrap();
        let pk = favor_features(&c(&k), &omega, sk).unwrap();
        let a = ag::matmul_bt(&pq, &pk).unwrap();
        let mut m = a.value().clone();
        for row in m.data_mut().chunks_exact_mut(7) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        m
    };
    let raw = norm(Stabilizer::None, Stabilizer::None);
    let stab = norm(Stabilizer::PerRow, Stabilizer::Global);
    assert!(raw.max_abs_diff(&stab) < 1e-12);
}

#[test]
fn feature_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let omega = draw_orthogonal_features(3, 7, 0).unwrap().omega;
    let x = gauss(&mut rng, &[4, 3], 0.7);
    for s in [Stabilizer::None, Stabilizer::PerRow, Stabilizer::Global] {
        let err = max_relative_error(&[x.clone()], 1e-6, |v| {
            if s == Stabilizer::None {
                favor_features(&v[0], &omega, s)
            } else {
                // Only ratios are stabilizer-invariant; check through them.
                let phi = favor_features(&v[0], &omega, s)?;
                let den = ag::sum_rows(&ag::transpose(&phi)?)?;
                Ok(ag::div_rows_floored(&phi, &den, 1e-300)?.0)
            }
        })
        .unwrap();
        assert!(err < 1e-6, "{s:?}: {err}");
    }
}

#[test]
fn softmax_head_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (n, d) = (7, 4);
    let (q, k, v) = (gauss(&mut rng, &[n, d], 1.0), gauss(&mut rng, &[n, d], 1.0), gauss(&mut rng, &[n, 3], 1.0));
    let y = softmax_head(&c(&q), &c(&k), &c(&v)).unwrap();
    for i in 0..n {
        let s: Vec<f64> = (0..n)
            .map(|j| (dot(&q.data()[i * d..(i + 1) * d], &k.data()[j * d..(j + 1) * d]) / 2.0).exp())
            .collect();
        let z: f64 = s.iter().sum();
        for col in 0..3 {
            let want: f64 = (0..n).map(|j| s[j] / z * v.get2(j, col)).sum();
            assert!((y.value().get2(i, col) - want).abs() < 1e-10);
        }
    }
}

#[test]
fn head_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let omega = draw_orthogonal_features(4, 16, 1).unwrap().omega;
    let ins = [gauss(&mut rng, &[5, 4], 1.0), gauss(&mut rng, &[5, 4], 1.0), gauss(&mut rng, &[5, 3], 1.0)];
    let e = max_relative_error(&ins, 1e-6, |v| softmax_head(&v[0], &v[1], &v[2])).unwrap();
    assert!(e < 1e-6, "softmax {e}");
    let e = max_relative_error(&ins, 1e-6, |v| Ok(favor_head(&v[0], &v[1], &v[2], &omega)?.0)).unwrap();
    assert!(e < 1e-6, "favor {e}");
}

fn manual_projection(store: &ParamStore<f64>, d: &crate::nn::Dense, z: &Tensor<f64>) -> Tensor<f64> {
    let (w, b) = (store.tensor(d.weight), store.tensor(d.bias));
    let (n, din) = z.dims2("t").unwrap();
    let dout = b.numel();
    Tensor::from_fn(&[n, dout], |i| {
        let (r, col) = (i / dout, i % dout);
        b.data()[col] + (0..din).map(|p| z.get2(r, p) * w.get2(p, col)).sum::<f64>()
    })
}

#[test]
fn softmax_mhsa_matches_per_head_oracle() {
    let (store, mha) = layer(AttentionKind::Softmax, 12, 3, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let z = gauss(&mut rng, &[7, 12], 1.0);
    let ctx = Ctx::eval(&store);
    let y = mha.forward(&ctx, &c(&z)).unwrap();
    let (q, k, v) = (
        manual_projection(&store, &mha.q, &z),
        manual_projection(&store, &mha.k, &z),
        manual_projection(&store, &mha.v, &z),
    );
    let mut cat = Tensor::zeros(&[7, 12]);
    for h in 0..3 {
        for i in 0..7 {
            let s: Vec<f64> = (0..7)
                .map(|j| {
                    let qi: Vec<f64> = (0..4).map(|t| q.get2(i, h * 4 + t)).collect();
                    let kj: Vec<f64> = (0..4).map(|t| k.get2(j, h * 4 + t)).collect();
                    (dot(&qi, &kj) / 2.0).exp()
                })
                .collect();
            let zsum: f64 = s.iter().sum();
            for t in 0..4 {
                cat.data_mut()[i * 12 + h * 4 + t] = (0..7).map(|j| s[j] / zsum * v.get2(j, h * 4 + t)).sum();
            }
        }
    }
    let want = manual_projection(&store, &mha.o, &cat);
    assert!(y.value().max_abs_diff(&want) < 1e-10);
}

#[test]
fn single_frame_attention_is_value_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let z = gauss(&mut rng, &[1, 12], 1.0);
    // Same init seed and creation order, so both layers share weights.
    let (store, soft) = layer(AttentionKind::Softmax, 12, 3, 8);
    let (fstore, favor) = layer(AttentionKind::Favor, 12, 3, 8);
    let ys = soft.forward(&Ctx::eval(&store), &c(&z)).unwrap();
    let yf = favor.forward(&Ctx::eval(&fstore), &c(&z)).unwrap();
    let v = manual_projection(&store, &soft.v, &z);
    let want = manual_projection(&store, &soft.o, &v);
    assert!(ys.value().max_abs_diff(&want) < 1e-12);
    assert!(yf.value().max_abs_diff(&want) < 1e-12);
}

#[test]
fn zeroed_query_gives_mean_of_values() {
    let (mut store, mha) = layer(AttentionKind::Softmax, 8, 2, 8);
    store.set(mha.q.weight, Tensor::zeros(&[8, 8])).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let z = gauss(&mut rng, &[6, 8], 1.0);
    let y = mha.forward(&Ctx::eval(&store), &c(&z)).unwrap();
    let v = manual_projection(&store, &mha.v, &z);
    let mean = Tensor::from_fn(&[6, 8], |i| (0..6).map(|r| v.get2(r, i % 8)).sum::<f64>() / 6.0);
    let want = manual_projection(&store, &mha.o, &mean);
    assert!(y.value().max_abs_diff(&want) < 1e-12);
}

#[test]
fn favor_equals_dumped_matrix_times_values() {
    let (store, mha) = layer(AttentionKind::Favor, 12, 3, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let z = gauss(&mut rng, &[9, 12], 1.0);
    let ctx = Ctx::eval(&store);
    let h = mha.heads_of(&ctx, &c(&z)).unwrap();
    let mats = mha.attention_matrices(&ctx, &c(&z), DEFAULT_DUMP_LIMIT).unwrap();
    let omega = store.tensor(mha.omega.unwrap());
    for (i, m) in mats.iter().enumerate() {
        for row in m.data().chunks_exact(9) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|v| *v >= 0.0));
        }
        let (y, _) = favor_head(&h.q[i], &h.k[i], &h.v[i], omega).unwrap();
        let mv = ag::matmul(&c(m), &h.v[i]).unwrap();
        assert!(y.value().max_abs_diff(mv.value()) < 1e-8);
    }
}

#[test]
fn dump_refuses_long_inputs() {
    let (store, mha) = layer(AttentionKind::Favor, 8, 2, 8);
    let z = Tensor::zeros(&[20, 8]);
    let err = mha.attention_matrices(&Ctx::eval(&store), &c(&z), 10).unwrap_err();
    assert_eq!(err, Error::DumpLimit { frames: 20, limit: 10 });
    assert!(err.to_string().contains("shorten the input"));
}

#[test]
fn favor_error_shrinks_with_more_features() {
    // Entries N(0, 1/√D): after the D^(-1/4) fold the feature-map inputs
    // have unit expected squared norm.
    let (n, d) = (64, 32);
    let sigma = (d as f64).powf(-0.25);
    let mut medians = Vec::new();
    for d_r in [64, 256, 1024] {
        let mut errs: Vec<f64> = (0..20)
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
                let q = gauss(&mut rng, &[n, d], sigma);
                let k = gauss(&mut rng, &[n, d], sigma);
                let v = gauss(&mut rng, &[n, d], 1.0);
                let omega = draw_orthogonal_features(d, d_r, seed).unwrap().omega;
                let exact = softmax_head(&c(&q), &c(&k), &c(&v)).unwrap();
                let approx = favor_head(&c(&q), &c(&k), &c(&v), &omega).unwrap().0;
                rel_fro(approx.value(), exact.value())
            })
            .collect();
        errs.sort_by(f64::total_cmp);
        medians.push((errs[9] + errs[10]) / 2.0);
    }
    assert!(medians[0] >= medians[1] && medians[1] >= medians[2], "{medians:?}");
    assert!(medians[2] < 0.15, "{medians:?}");
}

#[test]
fn redraw_follows_interval() {
    let mut store = ParamStore::<f64>::new();
    let mut cfg = AttentionConfig::new(8, 2, 8);
    cfg.redraw_interval = 3;
    let mha = {
        let mut init = Init::new(&mut store, 0);
        MultiHeadAttention::new(&mut init, "att", &cfg, AttentionKind::Favor).unwrap()
    };
    let id = mha.omega.unwrap();
    let before = store.tensor(id).clone();
    assert!(!mha.maybe_redraw(&mut store, 2).unwrap());
    assert_eq!(store.tensor(id), &before);
    assert!(mha.maybe_redraw(&mut store, 3).unwrap());
    assert_ne!(store.tensor(id), &before);
    assert!(!store.get(id).trainable);
}

#[test]
fn config_validation() {
    assert!(AttentionConfig::new(256, 6, 128).validate().is_err());
    assert!(AttentionConfig::new(216, 6, 384).validate().is_ok());
    assert!(AttentionConfig::new(216, 6, 0).validate().is_err());
    assert_eq!(MultiHeadAttention::param_count(216), 4 * (216 * 216 + 216));
}

#[test]
fn csv_has_index_header() {
    let m = Tensor::<f64>::from_f64(&[2, 2], &[0.25, 0.75, 1.0, 0.0]).unwrap();
    let mut buf = Vec::new();
    write_attention_csv(&mut buf, &m).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "0,1");
    let vals: Vec<f64> = lines[1].split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(vals, vec![0.25, 0.75]);
}

#[test]
fn training_context_reports_parameter_gradients() {
    let (store, mha) = layer(AttentionKind::Favor, 8, 2, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let z = Tensor::from_fn(&[5, 8], |_| rng.gen_range(-1.0..1.0));
    let ctx = Ctx::new(&store, Mode::Train, true, 0);
    let y = mha.forward(&ctx, &c(&z)).unwrap();
    ag::sum_sq(&y).backward().unwrap();
    let grads = ctx.param_grads();
    // q, k, v, o weights and biases; Ω is a buffer.
    assert_eq!(grads.len(), 8);
}

