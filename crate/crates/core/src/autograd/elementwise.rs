//! Elementwise arithmetic and activations.

use super::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn same_shape<T: Scalar>(op: &'static str, a: &Var<T>, b: &Var<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn map<T: Scalar>(x: &Var<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::new(x.shape(), x.data().iter().map(|&v| f(v)).collect()).expect("same shape")
}

pub fn add<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    same_shape("add", a, b)?;
    let out = Tensor::new(a.shape(), a.data().iter().zip(b.data()).map(|(x, y)| *x + *y).collect())?;
    Ok(Var::from_op(
        out,
        vec![a.clone(), b.clone()],
        Box::new(|g, _, _| vec![Some(g.to_vec()), Some(g.to_vec())]),
    ))
}

pub fn sub<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    same_shape("sub", a, b)?;
    let out = Tensor::new(a.shape(), a.data().iter().zip(b.data()).map(|(x, y)| *x - *y).collect())?;
    Ok(Var::from_op(
        out,
        vec![a.clone(), b.clone()],
        Box::new(|g, _, _| vec![Some(g.to_vec()), Some(g.iter().map(|v| -*v).collect())]),
    ))
}

pub fn mul<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    same_shape("mul", a, b)?;
    let out = Tensor::new(a.shape(), a.data().iter().zip(b.data()).map(|(x, y)| *x * *y).collect())?;
    Ok(Var::from_op(
        out,
        vec![a.clone(), b.clone()],
        Box::new(|g, _, p| {
            let ga = p[0]
                .requires_grad()
                .then(|| g.iter().zip(p[1].data()).map(|(g, y)| *g * *y).collect());
            let gb = p[1]
                .requires_grad()
                .then(|| g.iter().zip(p[0].data()).map(|(g, x)| *g * *x).collect());
            vec![ga, gb]
        }),
    ))
}

/// `c · x` for a fixed constant.
pub fn scale_const<T: Scalar>(x: &Var<T>, c: T) -> Var<T> {
    Var::from_op(
        map(x, |v| v * c),
        vec![x.clone()],
        Box::new(move |g, _, _| vec![Some(g.iter().map(|v| *v * c).collect())]),
    )
}

pub fn add_const<T: Scalar>(x: &Var<T>, c: T) -> Var<T> {
    Var::from_op(map(x, |v| v + c), vec![x.clone()], Box::new(|g, _, _| vec![Some(g.to_vec())]))
}

/// `γ · x` for a trainable scalar `γ` of shape `[1]`.
pub fn scale<T: Scalar>(x: &Var<T>, gamma: &Var<T>) -> Result<Var<T>> {
    if gamma.value().numel() != 1 {
        return Err(Error::shape("scale", x.shape(), gamma.shape()));
    }
    let s = gamma.data()[0];
    Ok(Var::from_op(
        map(x, |v| v * s),
        vec![x.clone(), gamma.clone()],
        Box::new(move |g, _, p| {
            let gx = p[0].requires_grad().then(|| g.iter().map(|v| *v * s).collect());
            let gs = p[1]
                .requires_grad()
                .then(|| vec![g.iter().zip(p[0].data()).map(|(g, x)| *g * *x).sum()]);
            vec![gx, gs]
        }),
    ))
}

pub fn ln<T: Scalar>(x: &Var<T>) -> Result<Var<T>> {
    if x.data().iter().any(|v| *v <= T::zero()) {
        return Err(Error::invalid("ln", "argument must be positive"));
    }
    Ok(Var::from_op(
        map(x, |v| v.ln()),
        vec![x.clone()],
        Box::new(|g, _, p| vec![Some(g.iter().zip(p[0].data()).map(|(g, x)| *g / *x).collect())]),
    ))
}

pub fn sqrt<T: Scalar>(x: &Var<T>) -> Var<T> {
    Var::from_op(
        map(x, |v| v.sqrt()),
        vec![x.clone()],
        Box::new(|g, y, _| {
            let half = T::c(0.5);
            vec![Some(g.iter().zip(y.data()).map(|(g, y)| *g * half / *y).collect())]
        }),
    )
}

pub fn relu<T: Scalar>(x: &Var<T>) -> Var<T> {
    Var::from_op(
        map(x, |v| v.max(T::zero())),
        vec![x.clone()],
        Box::new(|g, _, p| {
            vec![Some(
                g.iter()
                    .zip(p[0].data())
                    .map(|(g, x)| if *x > T::zero() { *g } else { T::zero() })
                    .collect(),
            )]
        }),
    )
}

/// Parametric ReLU with one slope per channel (last axis).
pub fn prelu<T: Scalar>(x: &Var<T>, slope: &Var<T>) -> Result<Var<T>> {
    let d = *x.shape().last().expect("non-empty shape");
    if slope.value().numel() != d {
        return Err(Error::shape("prelu", x.shape(), slope.shape()));
    }
    let a = slope.data();
    let mut out = x.data().to_vec();
    for row in out.chunks_exact_mut(d) {
        for (v, a) in row.iter_mut().zip(a) {
            if *v < T::zero() {
                *v = *v * *a;
            }
        }
    }
    Ok(Var::from_op(
        Tensor::new(x.shape(), out)?,
        vec![x.clone(), slope.clone()],
        Box::new(move |g, _, p| {
            let (xd, a) = (p[0].data(), p[1].data());
            let mut gx = vec![T::zero(); g.len()];
            let mut ga = vec![T::zero(); d];
            for ((gr, xr), gxr) in g.chunks_exact(d).zip(xd.chunks_exact(d)).zip(gx.chunks_exact_mut(d)) {
                for c in 0..d {
                    if xr[c] >= T::zero() {
                        gxr[c] = gr[c];
                    } else {
                        gxr[c] = gr[c] * a[c];
                        ga[c] += gr[c] * xr[c];
                    }
                }
            }
            vec![Some(gx), Some(ga)]
        }),
    ))
}

#[inline]
pub(crate) fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Var<T>) -> Var<T> {
    Var::from_op(
        map(x, sigmoid_scalar),
        vec![x.clone()],
        Box::new(|g, y, _| {
            vec![Some(g.iter().zip(y.data()).map(|(g, y)| *g * *y * (T::one() - *y)).collect())]
        }),
    )
}

/// `x · sigmoid(x)`.
pub fn swish<T: Scalar>(x: &Var<T>) -> Var<T> {
    Var::from_op(
        map(x, |v| v * sigmoid_scalar(v)),
        vec![x.clone()],
        Box::new(|g, _, p| {
            vec![Some(
                g.iter()
                    .zip(p[0].data())
                    .map(|(g, x)| {
                        let s = sigmoid_scalar(*x);
                        *g * (s + *x * s * (T::one() - s))
                    })
                    .collect(),
            )]
        }),
    )
}

/// Gated linear unit over the last axis: `value ⊙ sigmoid(gate)` where the
/// first half of each row is the value and the second half the gate.
pub fn glu<T: Scalar>(x: &Var<T>) -> Result<Var<T>> {
    let (n, w) = x.value().dims2("glu")?;
    if w % 2 != 0 {
        return Err(Error::invalid("glu", format!("input width {w} is odd")));
    }
    let h = w / 2;
    let mut out = Vec::with_capacity(n * h);
    for row in x.data().chunks_exact(w) {
        for c in 0..h {
            out.push(row[c] * sigmoid_scalar(row[h + c]));
        }
    }
    Ok(Var::from_op(
        Tensor::new(&[n, h], out)?,
        vec![x.clone()],
        Box::new(move |g, _, p| {
            let mut gx = vec![T::zero(); n * w];
            for ((gr, xr), gxr) in g.chunks_exact(h).zip(p[0].data().chunks_exact(w)).zip(gx.chunks_exact_mut(w)) {
                for c in 0..h {
                    let s = sigmoid_scalar(xr[h + c]);
                    gxr[c] = gr[c] * s;
                    gxr[h + c] = gr[c] * xr[c] * s * (T::one() - s);
                }
            }
            vec![Some(gx)]
        }),
    ))
}

/// Row-wise softmax of an `N×M` matrix.
pub fn softmax_rows<T: Scalar>(x: &Var<T>) -> Result<Var<T>> {
    let (n, m) = x.value().dims2("softmax_rows")?;
    let mut out = x.data().to_vec();
    for row in out.chunks_exact_mut(m) {
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            total += *v;
        }
        let inv = T::one() / total;
        row.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(Var::from_op(
        Tensor::new(&[n, m], out)?,
        vec![x.clone()],
        Box::new(move |g, y, _| {
            let mut gx = vec![T::zero(); n * m];
            for ((gr, yr), gxr) in g.chunks_exact(m).zip(y.data().chunks_exact(m)).zip(gx.chunks_exact_mut(m)) {
                let dot: T = gr.iter().zip(yr).map(|(a, b)| *a * *b).sum();
                for c in 0..m {
                    gxr[c] = yr[c] * (gr[c] - dot);
                }
            }
            vec![Some(gx)]
        }),
    ))
}

/// Divides row `i` of `num: N×D` by `den[i]`, flooring denominators at
/// `floor`. Returns the result and how many denominators were clamped;
/// clamped denominators receive no gradient.
pub fn div_rows_floored<T: Scalar>(num: &Var<T>, den: &Var<T>, floor: T) -> Result<(Var<T>, usize)> {
    let (n, d) = num.value().dims2("div_rows")?;
    if den.value().numel() != n {
        return Err(Error::shape("div_rows", num.shape(), den.shape()));
    }
    let mut clamped = 0;
    let dens: Vec<T> = den
        .data()
        .iter()
        .map(|&v| {
            if v < floor {
                clamped += 1;
                floor
            } else {
                v
            }
        })
        .collect();
    let mut out = num.data().to_vec();
    for (row, dv) in out.chunks_exact_mut(d).zip(&dens) {
        row.iter_mut().for_each(|v| *v /= *dv);
    }
    let var = Var::from_op(
        Tensor::new(&[n, d], out)?,
        vec![num.clone(), den.clone()],
        Box::new(move |g, y, p| {
            let gnum = p[0].requires_grad().then(|| {
                let mut gn = g.to_vec();
                for (row, dv) in gn.chunks_exact_mut(d).zip(&dens) {
                    row.iter_mut().for_each(|v| *v /= *dv);
                }
                gn
            });
            let gden = p[1].requires_grad().then(|| {
                let raw = p[1].data();
                (0..n)
                    .map(|i| {
                        if raw[i] < floor {
                            return T::zero();
                        }
                        let gr = &g[i * d..(i + 1) * d];
                        let yr = &y.data()[i * d..(i + 1) * d];
                        -gr.iter().zip(yr).map(|(a, b)| *a * *b).sum::<T>() / dens[i]
                    })
                    .collect()
            });
            vec![gnum, gden]
        }),
    );
    Ok((var, clamped))
}
