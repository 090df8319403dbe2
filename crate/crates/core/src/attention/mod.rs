//! Multi-head self-attention: exact softmax attention, its FAVOR+ linear
//! approximation with positive orthogonal random features, and an explicit
//! attention-matrix dump for inspection.
//!
//! No positional encoding is applied in either variant.

mod features;
mod heads;

pub use features::{draw_orthogonal_features, favor_features, RandomFeatureMap, Stabilizer};
pub use heads::{favor_head, favor_matrix, softmax_head, softmax_matrix, DENOMINATOR_FLOOR};

use std::io::Write;

use crate::autograd::{self as ag, Var};
use crate::error::{Error, Result};
use crate::nn::{Ctx, Dense, Init, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Refuse to materialize attention matrices above this many frames.
pub const DEFAULT_DUMP_LIMIT: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionConfig {
    pub model_dim: usize,
    pub heads: usize,
    pub num_random_features: usize,
    pub rng_seed: u64,
    /// Training steps between feature redraws; 0 keeps the initial draw.
    pub redraw_interval: u64,
}

impl AttentionConfig {
    pub fn new(model_dim: usize, heads: usize, num_random_features: usize) -> Self {
        AttentionConfig {
            model_dim,
            heads,
            num_random_features,
            rng_seed: 0,
            redraw_interval: 0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.model_dim == 0 || self.model_dim % self.heads != 0 {
            return Err(Error::invalid(
                "attention",
                format!("model dim {} not divisible by {} heads", self.model_dim, self.heads),
            ));
        }
        if self.num_random_features == 0 {
            return Err(Error::invalid("attention", "need at least one random feature"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    Softmax,
    Favor,
}

/// Projections `Q, K, V, O` (each `D_b×D_b` with bias) around either exact
/// or FAVOR+ attention. FAVOR+ shares one feature map across heads, held as
/// a non-trainable buffer so checkpoints carry it.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Dense,
    pub k: Dense,
    pub v: Dense,
    pub o: Dense,
    pub kind: AttentionKind,
    pub heads: usize,
    pub head_dim: usize,
    pub omega: Option<ParamId>,
    seed: u64,
    redraw_interval: u64,
}

/// Per-head query, key and value slices.
pub struct HeadInputs<T: Scalar> {
    pub q: Vec<Var<T>>,
    pub k: Vec<Var<T>>,
    pub v: Vec<Var<T>>,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, cfg: &AttentionConfig, kind: AttentionKind) -> Result<Self> {
        cfg.validate()?;
        let d_b = cfg.model_dim;
        let q = Dense::new(init, &format!("{name}.q"), d_b, d_b)?;
        let k = Dense::new(init, &format!("{name}.k"), d_b, d_b)?;
        let v = Dense::new(init, &format!("{name}.v"), d_b, d_b)?;
        let o = Dense::new(init, &format!("{name}.o"), d_b, d_b)?;
        let omega = match kind {
            AttentionKind::Softmax => None,
            AttentionKind::Favor => {
                let map = draw_orthogonal_features(cfg.head_dim(), cfg.num_random_features, cfg.rng_seed)?;
                Some(init.buffer(format!("{name}.omega"), map.omega.cast())?)
            }
        };
        Ok(MultiHeadAttention {
            q,
            k,
            v,
            o,
            kind,
            heads: cfg.heads,
            head_dim: cfg.head_dim(),
            omega,
            seed: cfg.rng_seed,
            redraw_interval: cfg.redraw_interval,
        })
    }

    pub fn param_count(model_dim: usize) -> usize {
        4 * Dense::param_count(model_dim, model_dim)
    }

    pub fn heads_of<T: Scalar>(&self, ctx: &Ctx<'_, T>, z: &Var<T>) -> Result<HeadInputs<T>> {
        let (_, d_b) = z.value().dims2("attention")?;
        if d_b != self.heads * self.head_dim {
            return Err(Error::shape("attention", z.shape(), &[0, self.heads * self.head_dim]));
        }
        let split = |y: Var<T>| -> Result<Vec<Var<T>>> {
            (0..self.heads).map(|h| ag::slice_cols(&y, h * self.head_dim, self.head_dim)).collect()
        };
        Ok(HeadInputs {
            q: split(self.q.forward(ctx, z)?)?,
            k: split(self.k.forward(ctx, z)?)?,
            v: split(self.v.forward(ctx, z)?)?,
        })
    }

    fn omega<T: Scalar>(&self, store: &ParamStore<T>) -> Result<Tensor<T>> {
        let id = self
            .omega
            .ok_or_else(|| Error::invalid("attention", "softmax attention has no feature map"))?;
        Ok(store.tensor(id).clone())
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, z: &Var<T>) -> Result<Var<T>> {
        let h = self.heads_of(ctx, z)?;
        let mut outs = Vec::with_capacity(self.heads);
        match self.kind {
            AttentionKind::Softmax => {
                for i in 0..self.heads {
                    outs.push(softmax_head(&h.q[i], &h.k[i], &h.v[i])?);
                }
            }
            AttentionKind::Favor => {
                let omega = self.omega(ctx.store())?;
                for i in 0..self.heads {
                    let (y, clamped) = favor_head(&h.q[i], &h.k[i], &h.v[i], &omega)?;
                    ctx.note_clamped(clamped);
                    outs.push(y);
                }
            }
        }
        self.o.forward(ctx, &ag::concat_cols(&outs)?)
    }

    /// Explicit `N×N` attention matrix per head: `D⁻¹φ(Q)φ(K)⊤` for FAVOR+,
    /// `softmax(QK⊤/√D)` for exact attention.
    pub fn attention_matrices<T: Scalar>(&self, ctx: &Ctx<'_, T>, z: &Var<T>, limit: usize) -> Result<Vec<Tensor<T>>> {
        let frames = z.shape()[0];
        if frames > limit {
            return Err(Error::DumpLimit { frames, limit });
        }
        let h = self.heads_of(ctx, z)?;
        (0..self.heads)
            .map(|i| match self.kind {
                AttentionKind::Softmax => softmax_matrix(h.q[i].value(), h.k[i].value()),
                AttentionKind::Favor => favor_matrix(h.q[i].value(), h.k[i].value(), &self.omega(ctx.store())?),
            })
            .collect()
    }

    /// Draws a fresh feature map when `step` lands on the redraw interval.
    /// Returns whether a redraw happened.
    pub fn maybe_redraw<T: Scalar>(&self, store: &mut ParamStore<T>, step: u64) -> Result<bool> {
        let Some(id) = self.omega else { return Ok(false) };
        if self.redraw_interval == 0 || step == 0 || step % self.redraw_interval != 0 {
            return Ok(false);
        }
        let seed = self.seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let map = draw_orthogonal_features(self.head_dim, store.tensor(id).shape()[0], seed)?;
        store.set(id, map.omega.cast())?;
        Ok(true)
    }
}

/// Writes one attention matrix as CSV: a header of column frame indices,
/// then one row per query frame.
pub fn write_attention_csv<T: Scalar, W: Write>(out: &mut W, matrix: &Tensor<T>) -> std::io::Result<()> {
    let (n, m) = matrix
        .dims2("attention_csv")
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e))?;
    let header: Vec<String> = (0..m).map(|j| j.to_string()).collect();
    writeln!(out, "{}", header.join(","))?;
    for i in 0..n {
        let row: Vec<String> = matrix.data()[i * m..(i + 1) * m].iter().map(|v| format!("{:e}", v.as_f64())).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
