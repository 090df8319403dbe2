use super::features::{favor_features, Stabilizer};
use crate::autograd::{self as ag, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Smallest FAVOR+ normalizer; smaller values are clamped and counted.
pub const DENOMINATOR_FLOOR: f64 = 1e-9;

fn check_qkv<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: Option<&Tensor<T>>) -> Result<usize> {
    let (_, d) = q.dims2("attention")?;
    let (nk, dk) = k.dims2("attention")?;
    if dk != d {
        return Err(Error::shape("attention", q.shape(), k.shape()));
    }
    if let Some(v) = v {
        if v.dims2("attention")?.0 != nk {
            return Err(Error::shape("attention", k.shape(), v.shape()));
        }
    }
    Ok(d)
}

/// `softmax(QK⊤/√D)V` for one head. Materializes the `N×N` score matrix.
pub fn softmax_head<T: Scalar>(q: &Var<T>, k: &Var<T>, v: &Var<T>) -> Result<Var<T>> {
    let d = check_qkv(q.value(), k.value(), Some(v.value()))?;
    let scores = ag::scale_const(&ag::matmul_bt(q, k)?, T::c(1.0 / (d as f64).sqrt()));
    ag::matmul(&ag::softmax_rows(&scores)?, v)
}

pub fn softmax_matrix<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>) -> Result<Tensor<T>> {
    let d = check_qkv(q, k, None)?;
    let scores = ag::matmul_bt(&Var::constant(q.clone()), &Var::constant(k.clone()))?;
    let scores = ag::scale_const(&scores, T::c(1.0 / (d as f64).sqrt()));
    Ok(ag::softmax_rows(&scores)?.value().clone())
}

fn favor_pair<T: Scalar>(q: &Var<T>, k: &Var<T>, omega: &Tensor<T>) -> Result<(Var<T>, Var<T>)> {
    let d = check_qkv(q.value(), k.value(), None)?;
    // Folding 1/√D into both sides as D^(-1/4) makes φ(q)·φ(k) estimate
    // exp(q·k/√D).
    let s = T::c((d as f64).powf(-0.25));
    Ok((
        favor_features(&ag::scale_const(q, s), omega, Stabilizer::PerRow)?,
        favor_features(&ag::scale_const(k, s), omega, Stabilizer::Global)?,
    ))
}

/// `D⁻¹φ(Q)(φ(K)⊤V)` for one head with `diag(D) = φ(Q)(φ(K)⊤1)`, in time
/// linear in `N`. Returns the output and the number of clamped denominators.
pub fn favor_head<T: Scalar>(q: &Var<T>, k: &Var<T>, v: &Var<T>, omega: &Tensor<T>) -> Result<(Var<T>, usize)> {
    check_qkv(q.value(), k.value(), Some(v.value()))?;
    let (pq, pk) = favor_pair(q, k, omega)?;
    let r = omega.shape()[0];
    let kv = ag::matmul_at(&pk, v)?;
    let ksum = ag::reshape(&ag::sum_rows(&pk)?, &[r, 1])?;
    let num = ag::matmul(&pq, &kv)?;
    let den = ag::matmul(&pq, &ksum)?;
    ag::div_rows_floored(&num, &den, T::c(DENOMINATOR_FLOOR))
}

/// The `N×N` matrix [`favor_head`] applies implicitly.
pub fn favor_matrix<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, omega: &Tensor<T>) -> Result<Tensor<T>> {
    let (pq, pk) = favor_pair(&Var::constant(q.clone()), &Var::constant(k.clone()), omega)?;
    let a = ag::matmul_bt(&pq, &pk)?;
    let (n, m) = a.value().dims2("favor_matrix")?;
    let sums = a.data().chunks_exact(m).map(|r| r.iter().copied().sum()).collect();
    let den = Var::constant(Tensor::new(&[n], sums)?);
    Ok(ag::div_rows_floored(&a, &den, T::c(DENOMINATOR_FLOOR))?.0.value().clone())
}
