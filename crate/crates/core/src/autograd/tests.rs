use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::max_relative_error;
use super::*;
use crate::tensor::Tensor;

const H: f64 = 1e-5;
const OP_TOL: f64 = 1e-6;

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn positive_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(0.5..2.0))
}

fn check(name: &str, inputs: &[Tensor<f64>], f: impl Fn(&[Var<f64>]) -> crate::Result<Var<f64>>) {
    let err = max_relative_error(inputs, H, f).unwrap();
    assert!(err < OP_TOL, "{name}: relative error {err:e}");
}

#[test]
fn backward_of_sum_of_squares_is_twice_input() {
    let x = Var::leaf(Tensor::<f64>::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap());
    sum_sq(&x).backward().unwrap();
    assert_eq!(x.grad().unwrap().data(), &[2.0, -4.0, 1.0]);
}

#[test]
fn backward_accumulates_until_zeroed() {
    let x = Var::leaf(Tensor::<f64>::from_f64(&[2], &[1.0, 3.0]).unwrap());
    let loss = sum_sq(&x);
    loss.backward().unwrap();
    loss.backward().unwrap();
    assert_eq!(x.grad().unwrap().data(), &[4.0, 12.0]);
    x.zero_grad();
    loss.backward().unwrap();
    assert_eq!(x.grad().unwrap().data(), &[2.0, 6.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let x = Var::leaf(Tensor::<f64>::zeros(&[2, 2]));
    assert!(x.backward().is_err());
}

#[test]
fn constant_graphs_carry_no_gradient() {
    let x = Var::constant(Tensor::<f64>::full(&[2, 2], 1.0));
    let y = add(&x, &x).unwrap();
    assert!(!y.requires_grad());
}

#[test]
fn matmul_variants_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_t(&mut rng, &[4, 3]);
    let b = rand_t(&mut rng, &[3, 5]);
    check("matmul", &[a.clone(), b.clone()], |v| matmul(&v[0], &v[1]));
    let bt = rand_t(&mut rng, &[5, 3]);
    check("matmul_bt", &[a.clone(), bt], |v| matmul_bt(&v[0], &v[1]));
    let at = rand_t(&mut rng, &[4, 2]);
    check("matmul_at", &[a, at], |v| matmul_at(&v[0], &v[1]));
}

#[test]
fn shape_ops_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_t(&mut rng, &[3, 4]);
    let b = rand_t(&mut rng, &[4]);
    check("add_row", &[x.clone(), b], |v| add_row(&v[0], &v[1]));
    check("sum_rows", &[x.clone()], |v| sum_rows(&v[0]));
    check("transpose", &[x.clone()], |v| transpose(&v[0]));
    check("slice_cols", &[x.clone()], |v| slice_cols(&v[0], 1, 2));
    let y = rand_t(&mut rng, &[3, 2]);
    check("concat_cols", &[x.clone(), y], |v| concat_cols(&[v[0].clone(), v[1].clone()]));
    let z = rand_t(&mut rng, &[2, 4]);
    check("concat_rows", &[x.clone(), z], |v| concat_rows(&[v[0].clone(), v[1].clone()]));
    check("slice_rows", &[x.clone()], |v| slice_rows(&v[0], 1, 2));
    check("reshape", &[x.clone()], |v| reshape(&v[0], &[12]));
    check("sum", &[x.clone()], |v| Ok(sum(&v[0])));
    check("sum_sq", &[x], |v| Ok(sum_sq(&v[0])));
}

#[test]
fn elementwise_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = rand_t(&mut rng, &[3, 4]);
    let b = rand_t(&mut rng, &[3, 4]);
    check("add", &[a.clone(), b.clone()], |v| add(&v[0], &v[1]));
    check("sub", &[a.clone(), b.clone()], |v| sub(&v[0], &v[1]));
    check("mul", &[a.clone(), b.clone()], |v| mul(&v[0], &v[1]));
    check("scale_const", &[a.clone()], |v| Ok(scale_const(&v[0], 1.7)));
    check("add_const", &[a.clone()], |v| Ok(add_const(&v[0], 0.3)));
    check("sigmoid", &[a.clone()], |v| Ok(sigmoid(&v[0])));
    check("swish", &[a.clone()], |v| Ok(swish(&v[0])));
    check("relu", &[a.clone()], |v| Ok(relu(&v[0])));
    let gamma = Tensor::<f64>::from_f64(&[1], &[0.8]).unwrap();
    check("scale", &[a.clone(), gamma], |v| scale(&v[0], &v[1]));
    let slope = rand_t(&mut rng, &[4]);
    check("prelu", &[a.clone(), slope], |v| prelu(&v[0], &v[1]));
    check("softmax_rows", &[a.clone()], |v| softmax_rows(&v[0]));
    check("glu", &[a], |v| glu(&v[0]));
    let p = positive_t(&mut rng, &[5]);
    check("ln", &[p.clone()], |v| ln(&v[0]));
    check("sqrt", &[p], |v| Ok(sqrt(&v[0])));
}

#[test]
fn div_rows_gradcheck_and_floor() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let num = rand_t(&mut rng, &[3, 2]);
    let den = positive_t(&mut rng, &[3]);
    check("div_rows", &[num.clone(), den], |v| Ok(div_rows_floored(&v[0], &v[1], 1e-9)?.0));
    let den = Tensor::<f64>::from_f64(&[3], &[1.0, 0.0, 2.0]).unwrap();
    let (out, clamped) = div_rows_floored(&Var::constant(num), &Var::constant(den), 1e-9).unwrap();
    assert_eq!(clamped, 1);
    assert!(out.value().ensure_finite("div").is_ok());
}

#[test]
fn depthwise_conv_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_t(&mut rng, &[9, 3]);
    let k = rand_t(&mut rng, &[3, 3]);
    for d in [1, 2, 4] {
        check("depthwise_conv1d", &[x.clone(), k.clone()], |v| depthwise_conv1d(&v[0], &v[1], d));
    }
}

#[test]
fn depthwise_conv_identity_kernel_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_t(&mut rng, &[10, 4]);
    let mut k = Tensor::zeros(&[3, 4]);
    k.data_mut()[4..8].iter_mut().for_each(|v| *v = 1.0);
    for d in [1, 3, 16] {
        let y = depthwise_conv1d(&Var::constant(x.clone()), &Var::constant(k.clone()), d).unwrap();
        assert_eq!(y.value(), &x);
    }
}

#[test]
fn depthwise_conv_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, d, k, dil) = (12, 3, 3, 4);
    let x = rand_t(&mut rng, &[n, d]);
    let w = rand_t(&mut rng, &[k, d]);
    let y = depthwise_conv1d(&Var::constant(x.clone()), &Var::constant(w.clone()), dil).unwrap();
    for t in 0..n {
        for c in 0..d {
            let mut want = 0.0;
            for j in 0..k {
                let src = t as isize + (j as isize - 1) * dil as isize;
                if (0..n as isize).contains(&src) {
                    want += x.get2(src as usize, c) * w.get2(j, c);
                }
            }
            assert!((y.value().get2(t, c) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn depthwise_conv_rejects_bad_arguments() {
    let x = Var::constant(Tensor::<f64>::zeros(&[4, 2]));
    let even = Var::constant(Tensor::<f64>::zeros(&[4, 2]));
    assert!(depthwise_conv1d(&x, &even, 1).is_err());
    let odd = Var::constant(Tensor::<f64>::zeros(&[3, 2]));
    assert!(depthwise_conv1d(&x, &odd, 0).is_err());
}

#[test]
fn impulse_response_support_equals_receptive_field() {
    let (n, k) = (64, 5);
    for dil in [1, 2, 8] {
        let mut x = Tensor::<f64>::zeros(&[n, 1]);
        x.data_mut()[n / 2] = 1.0;
        let w = Tensor::full(&[k, 1], 1.0);
        let y = depthwise_conv1d(&Var::constant(x), &Var::constant(w), dil).unwrap();
        let nz: Vec<usize> = (0..n).filter(|&i| y.data()[i] != 0.0).collect();
        let span = nz.last().unwrap() - nz.first().unwrap() + 1;
        assert_eq!(span, (k - 1) * dil + 1);
    }
}

#[test]
fn normalization_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = rand_t(&mut rng, &[6, 3]);
    let g = positive_t(&mut rng, &[3]);
    let b = rand_t(&mut rng, &[3]);
    check("normalize_columns", &[x.clone(), g.clone(), b.clone()], |v| {
        Ok(normalize_columns(&v[0], &v[1], &v[2], 1e-8)?.0)
    });
    check("normalize_rows", &[x.clone(), g.clone(), b.clone()], |v| {
        normalize_rows(&v[0], &v[1], &v[2], 1e-8)
    });
    let mean = [0.1, -0.2, 0.3];
    let var = [1.5, 0.7, 2.0];
    check("channel_affine", &[x, g, b], |v| channel_affine(&v[0], &mean, &var, &v[1], &v[2], 1e-8));
}

#[test]
fn framing_gradcheck_and_adjointness() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let geom = Framing {
        window: 4,
        hop: 2,
        offset: 1,
        frames: 5,
        len: 9,
    };
    let x = rand_t(&mut rng, &[9]);
    check("frame", &[x.clone()], |v| frame(&v[0], geom));
    let f = rand_t(&mut rng, &[5, 4]);
    check("overlap_add", &[f.clone()], |v| overlap_add(&v[0], geom));
    // <frame(x), f> == <x, overlap_add(f)>
    let fx = frame(&Var::constant(x.clone()), geom).unwrap();
    let of = overlap_add(&Var::constant(f.clone()), geom).unwrap();
    let lhs: f64 = fx.data().iter().zip(f.data()).map(|(a, b)| a * b).sum();
    let rhs: f64 = x.data().iter().zip(of.data()).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-12);
}

#[test]
fn dropout_gradcheck_uses_fixed_mask() {
    // A fresh RNG per evaluation reproduces the same mask.
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = rand_t(&mut rng, &[4, 4]);
    check("dropout", &[x], |v| {
        let mut r = ChaCha8Rng::seed_from_u64(99);
        dropout(&v[0], 0.3, true, &mut r)
    });
}

#[test]
fn dropout_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = Var::constant(Tensor::<f64>::full(&[100_000], 1.0));
    let eval = dropout(&x, 0.5, false, &mut rng).unwrap();
    assert_eq!(eval.value(), x.value());
    let zero = dropout(&x, 0.0, true, &mut rng).unwrap();
    assert_eq!(zero.value(), x.value());
    let y = dropout(&x, 0.5, true, &mut rng).unwrap();
    let survivors = y.data().iter().filter(|v| **v != 0.0).count() as f64 / 1e5;
    assert!((0.49..=0.51).contains(&survivors), "survivor fraction {survivors}");
    assert!(y.data().iter().all(|v| *v == 0.0 || (*v - 2.0).abs() < 1e-12));
    assert!(dropout(&x, 1.0, true, &mut rng).is_err());
}

#[test]
fn activation_values() {
    let x = Var::constant(Tensor::<f64>::from_f64(&[1, 1], &[0.0]).unwrap());
    assert_eq!(sigmoid(&x).data()[0], 0.5);
    let neg = Var::constant(Tensor::<f64>::from_f64(&[1, 1], &[-2.0]).unwrap());
    let slope = Var::constant(Tensor::<f64>::from_f64(&[1], &[0.25]).unwrap());
    assert_eq!(prelu(&neg, &slope).unwrap().data()[0], -0.5);
    let v = Var::constant(Tensor::<f64>::from_f64(&[2, 4], &[1.0, 2.0, 0.0, 0.0, -3.0, 4.0, 0.0, 0.0]).unwrap());
    assert_eq!(glu(&v).unwrap().data(), &[0.5, 1.0, -1.5, 2.0]);
    let odd = Var::constant(Tensor::<f64>::zeros(&[2, 3]));
    assert!(glu(&odd).is_err());
    let big = Var::constant(Tensor::<f64>::from_f64(&[2], &[800.0, -800.0]).unwrap());
    assert_eq!(sigmoid(&big).data(), &[1.0, 0.0]);
}

#[test]
fn scale_gradient_is_inner_product_with_upstream() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let z = rand_t(&mut rng, &[3, 3]);
    let up = rand_t(&mut rng, &[3, 3]);
    let gamma = Var::leaf(Tensor::<f64>::from_f64(&[1], &[1.3]).unwrap());
    let y = scale(&Var::constant(z.clone()), &gamma).unwrap();
    sum(&mul(&y, &Var::constant(up.clone())).unwrap()).backward().unwrap();
    let want: f64 = z.data().iter().zip(up.data()).map(|(a, b)| a * b).sum();
    assert!((gamma.grad().unwrap().data()[0] - want).abs() < 1e-12);
    let zeroed = scale(&Var::constant(z), &Var::constant(Tensor::<f64>::scalar(0.0))).unwrap();
    assert!(zeroed.data().iter().all(|v| *v == 0.0));
}

#[test]
fn composed_dense_prelu_sum_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = rand_t(&mut rng, &[5, 3]);
    let w = rand_t(&mut rng, &[3, 4]);
    let b = rand_t(&mut rng, &[4]);
    let a = rand_t(&mut rng, &[4]);
    check("dense→prelu→sum", &[x, w, b, a], |v| {
        let h = add_row(&matmul(&v[0], &v[1])?, &v[2])?;
        Ok(sum(&prelu(&h, &v[3])?))
    });
}
