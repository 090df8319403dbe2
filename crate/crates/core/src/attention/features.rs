use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Projection matrix `Ω` (`D_r×D`) of the positive random-feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomFeatureMap {
    pub omega: Tensor<f64>,
    pub created_at_step: u64,
}

impl RandomFeatureMap {
    pub fn num_features(&self) -> usize {
        self.omega.shape()[0]
    }

    pub fn head_dim(&self) -> usize {
        self.omega.shape()[1]
    }
}

/// Stacks `ceil(D_r / D)` independent orthogonal `D×D` blocks drawn by
/// Gram-Schmidt on Gaussian matrices, keeps the first `D_r` rows, and gives
/// each row the norm of an independent `D`-dimensional Gaussian vector.
pub fn draw_orthogonal_features(d: usize, d_r: usize, seed: u64) -> Result<RandomFeatureMap> {
    if d == 0 || d_r == 0 {
        return Err(Error::invalid("draw_orthogonal_features", "dimensions must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
    let mut rows: Vec<f64> = Vec::with_capacity(d_r * d);
    while rows.len() < d_r * d {
        let mut block: Vec<Vec<f64>> = Vec::with_capacity(d);
        while block.len() < d {
            let mut v: Vec<f64> = (0..d).map(|_| gauss()).collect();
            // Two passes keep the block orthogonal to rounding level.
            for _ in 0..2 {
                for u in &block {
                    let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
                }
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm < 1e-6 {
                continue;
            }
            v.iter_mut().for_each(|a| *a /= norm);
            block.push(v);
        }
        for u in block {
            if rows.len() == d_r * d {
                break;
            }
            let chi = (0..d).map(|_| gauss().powi(2)).sum::<f64>().sqrt();
            rows.extend(u.iter().map(|a| a * chi));
        }
    }
    Ok(RandomFeatureMap {
        omega: Tensor::new(&[d_r, d], rows)?,
        created_at_step: 0,
    })
}

/// Constant subtracted inside the exponential of the feature map. It cancels
/// in the attention ratio, so it is treated as a constant in the backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stabilizer {
    None,
    /// `c_i = max_j ω_j·x_i`; cancels in each query row's normalization.
    PerRow,
    /// One `c` for all rows; cancels between numerator and denominator.
    Global,
}

/// `φ(x)_j = exp(ω_j·x − ‖x‖²/2 − c) / √D_r` for every row of `x: N×D`.
pub fn favor_features<T: Scalar>(x: &Var<T>, omega: &Tensor<T>, stabilizer: Stabilizer) -> Result<Var<T>> {
    let (n, d) = x.value().dims2("favor_features")?;
    let (r, od) = omega.dims2("favor_features")?;
    if od != d {
        return Err(Error::shape("favor_features", x.shape(), omega.shape()));
    }
    let xd = x.data();
    let mut phi = vec![T::zero(); n * r];
    T::gemm(n, d, r, T::one(), xd, false, omega.data(), true, T::zero(), &mut phi);
    let global = match stabilizer {
        Stabilizer::Global => phi.iter().copied().fold(T::neg_infinity(), T::max),
        _ => T::zero(),
    };
    let inv_sqrt_r = T::one() / T::c(r as f64).sqrt();
    let half = T::c(0.5);
    for (row, xr) in phi.chunks_exact_mut(r).zip(xd.chunks_exact(d)) {
        let sq: T = xr.iter().map(|v| *v * *v).sum::<T>() * half;
        let c = match stabilizer {
            Stabilizer::None => T::zero(),
            Stabilizer::PerRow => row.iter().copied().fold(T::neg_infinity(), T::max),
            Stabilizer::Global => global,
        };
        row.iter_mut().for_each(|v| *v = (*v - sq - c).exp() * inv_sqrt_r);
    }
    let omega = omega.clone();
    Ok(Var::from_op(
        Tensor::new(&[n, r], phi)?,
        vec![x.clone()],
        Box::new(move |g, phi, p| {
            // ∂φ_ij/∂x_i = φ_ij (ω_j − x_i)
            let gp: Vec<T> = g.iter().zip(phi.data()).map(|(a, b)| *a * *b).collect();
            let mut gx = vec![T::zero(); n * d];
            T::gemm(n, r, d, T::one(), &gp, false, omega.data(), false, T::zero(), &mut gx);
            let xd = p[0].data();
            for i in 0..n {
                let s: T = gp[i * r..(i + 1) * r].iter().copied().sum();
                for k in 0..d {
                    gx[i * d + k] -= s * xd[i * d + k];
                }
            }
            vec![Some(gx)]
        }),
    ))
}
