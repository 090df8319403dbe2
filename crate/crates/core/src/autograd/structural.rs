//! Convolution, normalization, dropout and framing ops.

use rand::Rng;

use super::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Same-length depthwise 1-D convolution along the time axis of an `N×D`
/// matrix. Tap `j` of a `k`-tap kernel reads frame `n + (j - (k-1)/2)·dilation`;
/// out-of-range taps read zero.
pub fn depthwise_conv1d<T: Scalar>(x: &Var<T>, kernel: &Var<T>, dilation: usize) -> Result<Var<T>> {
    let (n, d) = x.value().dims2("depthwise_conv1d")?;
    let (k, kd) = kernel.value().dims2("depthwise_conv1d")?;
    if kd != d {
        return Err(Error::shape("depthwise_conv1d", x.shape(), kernel.shape()));
    }
    if k % 2 == 0 {
        return Err(Error::invalid("depthwise_conv1d", format!("kernel size {k} must be odd")));
    }
    if dilation < 1 {
        return Err(Error::invalid("depthwise_conv1d", "dilation must be at least 1"));
    }
    let half = (k - 1) / 2;
    let offsets: Vec<isize> = (0..k).map(|j| (j as isize - half as isize) * dilation as isize).collect();
    let out = conv_forward(x.data(), kernel.data(), n, d, &offsets);
    Ok(Var::from_op(
        Tensor::new(&[n, d], out)?,
        vec![x.clone(), kernel.clone()],
        Box::new(move |g, _, p| {
            let (xd, kd) = (p[0].data(), p[1].data());
            let gx = p[0].requires_grad().then(|| {
                let mut gx = vec![T::zero(); n * d];
                for (j, &o) in offsets.iter().enumerate() {
                    let kr = &kd[j * d..(j + 1) * d];
                    for (t, src) in valid_range(n, o) {
                        let gr = &g[t * d..(t + 1) * d];
                        let dst = &mut gx[src * d..(src + 1) * d];
                        for c in 0..d {
                            dst[c] += gr[c] * kr[c];
                        }
                    }
                }
                gx
            });
            let gk = p[1].requires_grad().then(|| {
                let mut gk = vec![T::zero(); k * d];
                for (j, &o) in offsets.iter().enumerate() {
                    let acc = &mut gk[j * d..(j + 1) * d];
                    for (t, src) in valid_range(n, o) {
                        let gr = &g[t * d..(t + 1) * d];
                        let xr = &xd[src * d..(src + 1) * d];
                        for c in 0..d {
                            acc[c] += gr[c] * xr[c];
                        }
                    }
                }
                gk
            });
            vec![gx, gk]
        }),
    ))
}

// Pairs (output frame, input frame) with input = output + offset in range.
fn valid_range(n: usize, offset: isize) -> impl Iterator<Item = (usize, usize)> {
    let lo = (-offset).max(0) as usize;
    let hi = (n as isize - offset).clamp(0, n as isize) as usize;
    (lo.min(hi)..hi).map(move |t| (t, (t as isize + offset) as usize))
}

fn conv_forward<T: Scalar>(x: &[T], kernel: &[T], n: usize, d: usize, offsets: &[isize]) -> Vec<T> {
    let mut out = vec![T::zero(); n * d];
    for (j, &o) in offsets.iter().enumerate() {
        let kr = &kernel[j * d..(j + 1) * d];
        for (t, src) in valid_range(n, o) {
            let xr = &x[src * d..(src + 1) * d];
            let dst = &mut out[t * d..(t + 1) * d];
            for c in 0..d {
                dst[c] += xr[c] * kr[c];
            }
        }
    }
    out
}

/// Statistics produced by a normalization over rows.
#[derive(Debug, Clone)]
pub struct ColumnStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Normalizes every column of a matrix over its rows (population variance),
/// then applies a per-column affine map. Higher-rank inputs are flattened
/// over all leading axes.
pub fn normalize_columns<T: Scalar>(
    x: &Var<T>,
    gamma: &Var<T>,
    beta: &Var<T>,
    eps: T,
) -> Result<(Var<T>, ColumnStats<T>)> {
    let d = *x.shape().last().expect("non-empty shape");
    let rows = x.value().numel() / d;
    if gamma.value().numel() != d || beta.value().numel() != d {
        return Err(Error::shape("normalize_columns", x.shape(), gamma.shape()));
    }
    let xd = x.data();
    let inv_n = T::one() / T::c(rows as f64);
    let mut mean = vec![T::zero(); d];
    for row in xd.chunks_exact(d) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += *v);
    }
    mean.iter_mut().for_each(|m| *m *= inv_n);
    let mut var = vec![T::zero(); d];
    for row in xd.chunks_exact(d) {
        for c in 0..d {
            let z = row[c] - mean[c];
            var[c] += z * z;
        }
    }
    var.iter_mut().for_each(|v| *v *= inv_n);
    let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
    let mut xhat = Vec::with_capacity(xd.len());
    for row in xd.chunks_exact(d) {
        for c in 0..d {
            xhat.push((row[c] - mean[c]) * inv_std[c]);
        }
    }
    let (gd, bd) = (gamma.data(), beta.data());
    let mut out = xhat.clone();
    for row in out.chunks_exact_mut(d) {
        for c in 0..d {
            row[c] = row[c] * gd[c] + bd[c];
        }
    }
    let var_out = Var::from_op(
        Tensor::new(x.shape(), out)?,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g, _, p| {
            let gd = p[1].data();
            let mut sum_g = vec![T::zero(); d];
            let mut sum_gx = vec![T::zero(); d];
            for (gr, xr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                for c in 0..d {
                    sum_g[c] += gr[c];
                    sum_gx[c] += gr[c] * xr[c];
                }
            }
            let gx = p[0].requires_grad().then(|| {
                let mut gx = vec![T::zero(); g.len()];
                for ((gr, xr), out) in g.chunks_exact(d).zip(xhat.chunks_exact(d)).zip(gx.chunks_exact_mut(d)) {
                    for c in 0..d {
                        let scale = gd[c] * inv_std[c];
                        out[c] = scale * (gr[c] - inv_n * sum_g[c] - xr[c] * inv_n * sum_gx[c]);
                    }
                }
                gx
            });
            vec![gx, Some(sum_gx), Some(sum_g)]
        }),
    );
    Ok((var_out, ColumnStats { mean, var }))
}

/// Normalizes every row of an `N×D` matrix over its columns (population
/// variance), then applies a per-column affine map.
pub fn normalize_rows<T: Scalar>(x: &Var<T>, gamma: &Var<T>, beta: &Var<T>, eps: T) -> Result<Var<T>> {
    let (n, d) = x.value().dims2("normalize_rows")?;
    if gamma.value().numel() != d || beta.value().numel() != d {
        return Err(Error::shape("normalize_rows", x.shape(), gamma.shape()));
    }
    let inv_d = T::one() / T::c(d as f64);
    let mut xhat = Vec::with_capacity(n * d);
    let mut inv_std = Vec::with_capacity(n);
    for row in x.data().chunks_exact(d) {
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() * inv_d;
        let is = T::one() / (var + eps).sqrt();
        inv_std.push(is);
        xhat.extend(row.iter().map(|v| (*v - mean) * is));
    }
    let (gd, bd) = (gamma.data(), beta.data());
    let mut out = xhat.clone();
    for row in out.chunks_exact_mut(d) {
        for c in 0..d {
            row[c] = row[c] * gd[c] + bd[c];
        }
    }
    Ok(Var::from_op(
        Tensor::new(&[n, d], out)?,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g, _, p| {
            let gd = p[1].data();
            let mut ggamma = vec![T::zero(); d];
            let mut gbeta = vec![T::zero(); d];
            let mut gx = vec![T::zero(); n * d];
            for r in 0..n {
                let gr = &g[r * d..(r + 1) * d];
                let xr = &xhat[r * d..(r + 1) * d];
                let mut s = T::zero();
                let mut sx = T::zero();
                for c in 0..d {
                    ggamma[c] += gr[c] * xr[c];
                    gbeta[c] += gr[c];
                    let gh = gr[c] * gd[c];
                    s += gh;
                    sx += gh * xr[c];
                }
                let out = &mut gx[r * d..(r + 1) * d];
                for c in 0..d {
                    out[c] = inv_std[r] * (gr[c] * gd[c] - inv_d * s - xr[c] * inv_d * sx);
                }
            }
            vec![Some(gx), Some(ggamma), Some(gbeta)]
        }),
    ))
}

/// `(x - mean) / sqrt(var + eps) · γ + β` per channel with fixed statistics.
pub fn channel_affine<T: Scalar>(
    x: &Var<T>,
    mean: &[T],
    var: &[T],
    gamma: &Var<T>,
    beta: &Var<T>,
    eps: T,
) -> Result<Var<T>> {
    let d = *x.shape().last().expect("non-empty shape");
    if mean.len() != d || var.len() != d || gamma.value().numel() != d || beta.value().numel() != d {
        return Err(Error::shape("channel_affine", x.shape(), gamma.shape()));
    }
    let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
    let mean = mean.to_vec();
    let xhat: Vec<T> = x
        .data()
        .chunks_exact(d)
        .flat_map(|row| (0..d).map(|c| (row[c] - mean[c]) * inv_std[c]).collect::<Vec<_>>())
        .collect();
    let (gd, bd) = (gamma.data(), beta.data());
    let out: Vec<T> = xhat
        .chunks_exact(d)
        .flat_map(|row| (0..d).map(|c| row[c] * gd[c] + bd[c]).collect::<Vec<_>>())
        .collect();
    Ok(Var::from_op(
        Tensor::new(x.shape(), out)?,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g, _, p| {
            let gd = p[1].data();
            let mut gx = vec![T::zero(); g.len()];
            let mut ggamma = vec![T::zero(); d];
            let mut gbeta = vec![T::zero(); d];
            for ((gr, xr), out) in g.chunks_exact(d).zip(xhat.chunks_exact(d)).zip(gx.chunks_exact_mut(d)) {
                for c in 0..d {
                    out[c] = gr[c] * gd[c] * inv_std[c];
                    ggamma[c] += gr[c] * xr[c];
                    gbeta[c] += gr[c];
                }
            }
            vec![Some(gx), Some(ggamma), Some(gbeta)]
        }),
    ))
}

/// Inverted dropout. `rate` must lie in `[0, 1)`.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(x: &Var<T>, rate: f64, training: bool, rng: &mut R) -> Result<Var<T>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid("dropout", format!("rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(x.clone());
    }
    let keep = T::c(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.value().numel())
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let out: Vec<T> = x.data().iter().zip(&mask).map(|(v, m)| *v * *m).collect();
    Ok(Var::from_op(
        Tensor::new(x.shape(), out)?,
        vec![x.clone()],
        Box::new(move |g, _, _| vec![Some(g.iter().zip(&mask).map(|(g, m)| *g * *m).collect())]),
    ))
}

/// Geometry shared by [`frame`] and [`overlap_add`]: frame `i` covers samples
/// `i·hop - offset .. i·hop - offset + window`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Framing {
    pub window: usize,
    pub hop: usize,
    pub offset: usize,
    pub frames: usize,
    pub len: usize,
}

impl Framing {
    fn sample(&self, frame: usize, tap: usize) -> Option<usize> {
        let t = (frame * self.hop + tap) as isize - self.offset as isize;
        (t >= 0 && (t as usize) < self.len).then_some(t as usize)
    }
}

/// Slices a 1-D signal into `frames × window` with zero reads outside it.
pub fn frame<T: Scalar>(x: &Var<T>, geom: Framing) -> Result<Var<T>> {
    if x.value().numel() != geom.len {
        return Err(Error::shape("frame", x.shape(), &[geom.len]));
    }
    let xd = x.data();
    let mut out = vec![T::zero(); geom.frames * geom.window];
    for f in 0..geom.frames {
        for w in 0..geom.window {
            if let Some(t) = geom.sample(f, w) {
                out[f * geom.window + w] = xd[t];
            }
        }
    }
    Ok(Var::from_op(
        Tensor::new(&[geom.frames, geom.window], out)?,
        vec![x.clone()],
        Box::new(move |g, _, _| vec![Some(overlap_add_data(g, geom))]),
    ))
}

fn overlap_add_data<T: Scalar>(frames: &[T], geom: Framing) -> Vec<T> {
    let mut out = vec![T::zero(); geom.len];
    for f in 0..geom.frames {
        for w in 0..geom.window {
            if let Some(t) = geom.sample(f, w) {
                out[t] += frames[f * geom.window + w];
            }
        }
    }
    out
}

/// Sums `frames × window` rows back into a 1-D signal of length `geom.len`,
/// dropping samples that fall outside it. Adjoint of [`frame`].
pub fn overlap_add<T: Scalar>(frames: &Var<T>, geom: Framing) -> Result<Var<T>> {
    if frames.shape() != [geom.frames, geom.window] {
        return Err(Error::shape("overlap_add", frames.shape(), &[geom.frames, geom.window]));
    }
    let out = overlap_add_data(frames.data(), geom);
    Ok(Var::from_op(
        Tensor::new(&[geom.len], out)?,
        vec![frames.clone()],
        Box::new(move |g, _, _| {
            let mut gf = vec![T::zero(); geom.frames * geom.window];
            for f in 0..geom.frames {
                for w in 0..geom.window {
                    if let Some(t) = geom.sample(f, w) {
                        gf[f * geom.window + w] = g[t];
                    }
                }
            }
            vec![Some(gf)]
        }),
    ))
}
