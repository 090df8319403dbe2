//! Matrix products, broadcasting adds, reductions and reshapes.

use super::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn mm<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], ta: bool, b: &[T], tb: bool) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    T::gemm(m, k, n, T::one(), a, ta, b, tb, T::zero(), &mut out);
    out
}

/// `a · b` for `a: m×k`, `b: k×n`.
pub fn matmul<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    let (m, k) = a.value().dims2("matmul")?;
    let (k2, n) = b.value().dims2("matmul")?;
    if k != k2 {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let out = Tensor::new(&[m, n], mm(m, k, n, a.data(), false, b.data(), false))?;
    Ok(Var::from_op(
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g, _, p| {
            let ga = p[0].requires_grad().then(|| mm(m, n, k, g, false, p[1].data(), true));
            let gb = p[1].requires_grad().then(|| mm(k, m, n, p[0].data(), true, g, false));
            vec![ga, gb]
        }),
    ))
}

/// `a · bᵀ` for `a: m×k`, `b: n×k`.
pub fn matmul_bt<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    let (m, k) = a.value().dims2("matmul_bt")?;
    let (n, k2) = b.value().dims2("matmul_bt")?;
    if k != k2 {
        return Err(Error::shape("matmul_bt", a.shape(), b.shape()));
    }
    let out = Tensor::new(&[m, n], mm(m, k, n, a.data(), false, b.data(), true))?;
    Ok(Var::from_op(
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g, _, p| {
            let ga = p[0].requires_grad().then(|| mm(m, n, k, g, false, p[1].data(), false));
            let gb = p[1].requires_grad().then(|| mm(n, m, k, g, true, p[0].data(), false));
            vec![ga, gb]
        }),
    ))
}

/// `aᵀ · b` for `a: k×m`, `b: k×n`.
pub fn matmul_at<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    let (k, m) = a.value().dims2("matmul_at")?;
    let (k2, n) = b.value().dims2("matmul_at")?;
    if k != k2 {
        return Err(Error::shape("matmul_at", a.shape(), b.shape()));
    }
    let out = Tensor::new(&[m, n], mm(m, k, n, a.data(), true, b.data(), false))?;
    Ok(Var::from_op(
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g, _, p| {
            let ga = p[0].requires_grad().then(|| mm(k, n, m, p[1].data(), false, g, true));
            let gb = p[1].requires_grad().then(|| mm(k, m, n, p[0].data(), false, g, false));
            vec![ga, gb]
        }),
    ))
}

/// Adds a length-`D` vector to every row of an `N×D` matrix.
pub fn add_row<T: Scalar>(x: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    let (n, d) = x.value().dims2("add_row")?;
    if b.value().numel() != d {
        return Err(Error::shape("add_row", x.shape(), b.shape()));
    }
    let bd = b.data();
    let mut out = x.data().to_vec();
    for row in out.chunks_exact_mut(d) {
        row.iter_mut().zip(bd).for_each(|(o, v)| *o += *v);
    }
    Ok(Var::from_op(
        Tensor::new(&[n, d], out)?,
        vec![x.clone(), b.clone()],
        Box::new(move |g, _, p| {
            let gb = p[1].requires_grad().then(|| col_sums(g, d));
            vec![Some(g.to_vec()), gb]
        }),
    ))
}

pub(crate) fn col_sums<T: Scalar>(g: &[T], d: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); d];
    for row in g.chunks_exact(d) {
        acc.iter_mut().zip(row).for_each(|(a, v)| *a += *v);
    }
    acc
}

/// Sum over rows of an `N×D` matrix, giving shape `[D]`.
pub fn sum_rows<T: Scalar>(x: &Var<T>) -> Result<Var<T>> {
    let (n, d) = x.value().dims2("sum_rows")?;
    let out = Tensor::new(&[d], col_sums(x.data(), d))?;
    Ok(Var::from_op(
        out,
        vec![x.clone()],
        Box::new(move |g, _, _| {
            let mut gx = Vec::with_capacity(n * d);
            for _ in 0..n {
                gx.extend_from_slice(g);
            }
            vec![Some(gx)]
        }),
    ))
}

/// Sum of all elements, shape `[1]`.
pub fn sum<T: Scalar>(x: &Var<T>) -> Var<T> {
    let n = x.value().numel();
    let s: T = x.data().iter().copied().sum();
    Var::from_op(
        Tensor::scalar(s),
        vec![x.clone()],
        Box::new(move |g, _, _| vec![Some(vec![g[0]; n])]),
    )
}

/// Sum of squares of all elements, shape `[1]`.
pub fn sum_sq<T: Scalar>(x: &Var<T>) -> Var<T> {
    let s = x.value().sum_sq();
    Var::from_op(
        Tensor::scalar(s),
        vec![x.clone()],
        Box::new(move |g, _, p| {
            let two = T::c(2.0) * g[0];
            vec![Some(p[0].data().iter().map(|&v| two * v).collect())]
        }),
    )
}

/// Row-major transpose of a matrix.
pub fn transpose<T: Scalar>(x: &Var<T>) -> Result<Var<T>> {
    let (n, d) = x.value().dims2("transpose")?;
    let out = Tensor::new(&[d, n], transpose_data(x.data(), n, d))?;
    Ok(Var::from_op(
        out,
        vec![x.clone()],
        Box::new(move |g, _, _| vec![Some(transpose_data(g, d, n))]),
    ))
}

pub(crate) fn transpose_data<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

pub fn reshape<T: Scalar>(x: &Var<T>, shape: &[usize]) -> Result<Var<T>> {
    let out = x.value().clone().reshape(shape)?;
    Ok(Var::from_op(out, vec![x.clone()], Box::new(|g, _, _| vec![Some(g.to_vec())])))
}

/// Columns `start..start+len` of an `N×D` matrix.
pub fn slice_cols<T: Scalar>(x: &Var<T>, start: usize, len: usize) -> Result<Var<T>> {
    let (n, d) = x.value().dims2("slice_cols")?;
    if len == 0 || start + len > d {
        return Err(Error::invalid(
            "slice_cols",
            format!("columns {start}..{} out of range for width {d}", start + len),
        ));
    }
    let mut out = Vec::with_capacity(n * len);
    for row in x.data().chunks_exact(d) {
        out.extend_from_slice(&row[start..start + len]);
    }
    Ok(Var::from_op(
        Tensor::new(&[n, len], out)?,
        vec![x.clone()],
        Box::new(move |g, _, _| {
            let mut gx = vec![T::zero(); n * d];
            for (dst, src) in gx.chunks_exact_mut(d).zip(g.chunks_exact(len)) {
                dst[start..start + len].copy_from_slice(src);
            }
            vec![Some(gx)]
        }),
    ))
}

/// Concatenates matrices with equal row counts along the column axis.
pub fn concat_cols<T: Scalar>(parts: &[Var<T>]) -> Result<Var<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat_cols", "no inputs"))?;
    let (n, _) = first.value().dims2("concat_cols")?;
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let (r, c) = p.value().dims2("concat_cols")?;
        if r != n {
            return Err(Error::shape("concat_cols", first.shape(), p.shape()));
        }
        widths.push(c);
    }
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(n * total);
    for r in 0..n {
        for (p, &w) in parts.iter().zip(&widths) {
            out.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
        }
    }
    Ok(Var::from_op(
        Tensor::new(&[n, total], out)?,
        parts.to_vec(),
        Box::new(move |g, _, p| {
            let mut offset = 0;
            let mut grads = Vec::with_capacity(widths.len());
            for (part, &w) in p.iter().zip(&widths) {
                if part.requires_grad() {
                    let mut gp = Vec::with_capacity(n * w);
                    for row in g.chunks_exact(total) {
                        gp.extend_from_slice(&row[offset..offset + w]);
                    }
                    grads.push(Some(gp));
                } else {
                    grads.push(None);
                }
                offset += w;
            }
            grads
        }),
    ))
}

/// Stacks matrices with equal widths along the row axis.
pub fn concat_rows<T: Scalar>(parts: &[Var<T>]) -> Result<Var<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat_rows", "no inputs"))?;
    let (_, d) = first.value().dims2("concat_rows")?;
    let mut sizes = Vec::with_capacity(parts.len());
    for p in parts {
        let (r, c) = p.value().dims2("concat_rows")?;
        if c != d {
            return Err(Error::shape("concat_rows", first.shape(), p.shape()));
        }
        sizes.push(r * d);
    }
    let mut out = Vec::with_capacity(sizes.iter().sum());
    for p in parts {
        out.extend_from_slice(p.data());
    }
    let rows = out.len() / d;
    Ok(Var::from_op(
        Tensor::new(&[rows, d], out)?,
        parts.to_vec(),
        Box::new(move |g, _, p| {
            let mut offset = 0;
            let mut grads = Vec::with_capacity(sizes.len());
            for (part, &s) in p.iter().zip(&sizes) {
                grads.push(part.requires_grad().then(|| g[offset..offset + s].to_vec()));
                offset += s;
            }
            grads
        }),
    ))
}

/// Rows `start..start+len` of an `N×D` matrix.
pub fn slice_rows<T: Scalar>(x: &Var<T>, start: usize, len: usize) -> Result<Var<T>> {
    let (n, d) = x.value().dims2("slice_rows")?;
    if len == 0 || start + len > n {
        return Err(Error::invalid(
            "slice_rows",
            format!("rows {start}..{} out of range for {n} rows", start + len),
        ));
    }
    let out = x.data()[start * d..(start + len) * d].to_vec();
    Ok(Var::from_op(
        Tensor::new(&[len, d], out)?,
        vec![x.clone()],
        Box::new(move |g, _, _| {
            let mut gx = vec![T::zero(); n * d];
            gx[start * d..(start + len) * d].copy_from_slice(g);
            vec![Some(gx)]
        }),
    ))
}
