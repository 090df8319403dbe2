//! Residual blocks of the mask predictor.
//!
//! Each block maps `N×D_b → N×D_b`; the mask predictor adds the block output
//! to its input. TDCN and Conv-Tasformer blocks are time-dilated separable
//! convolutions; Conformer and DF-Conformer blocks wrap attention and a
//! depthwise convolution module between two half-step feed-forward layers.

mod conformer;
mod tdcn;

pub use conformer::{ConformerBlock, ConvModule, FeedForward};
pub use tdcn::TdcnBlock;

use crate::attention::{AttentionConfig, AttentionKind};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Ctx, Init};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Tdcn,
    Conformer,
    DfConformer,
    ConvTasformer,
}

impl BlockKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BlockKind::Tdcn => "tdcn",
            BlockKind::Conformer => "conformer",
            BlockKind::DfConformer => "df_conformer",
            BlockKind::ConvTasformer => "conv_tasformer",
        }
    }

    pub fn attention(self) -> Option<AttentionKind> {
        match self {
            BlockKind::Tdcn => None,
            BlockKind::Conformer => Some(AttentionKind::Softmax),
            BlockKind::DfConformer | BlockKind::ConvTasformer => Some(AttentionKind::Favor),
        }
    }

    /// Whether the block's convolution follows the dilation schedule.
    pub fn dilated(self) -> bool {
        !matches!(self, BlockKind::Conformer)
    }
}

impl std::str::FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tdcn" => Ok(BlockKind::Tdcn),
            "conformer" => Ok(BlockKind::Conformer),
            "df_conformer" => Ok(BlockKind::DfConformer),
            "conv_tasformer" => Ok(BlockKind::ConvTasformer),
            other => Err(Error::invalid("block", format!("unknown block kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockConfig {
    pub kind: BlockKind,
    pub d_b: usize,
    /// Convolution width of the TDCN family.
    pub d_c: usize,
    pub kernel_size: usize,
    pub ffn_expansion: usize,
    pub dropout: f64,
    pub attention: AttentionConfig,
    /// Final TDCN scale starts at `0.9^i` for block `i` instead of 1.
    pub decayed_scale_init: bool,
}

impl BlockConfig {
    pub fn tdcn(d_b: usize, d_c: usize) -> Self {
        BlockConfig {
            kind: BlockKind::Tdcn,
            d_b,
            d_c,
            kernel_size: 3,
            ffn_expansion: 4,
            dropout: 0.0,
            attention: AttentionConfig::new(d_b, 1, 1),
            decayed_scale_init: true,
        }
    }

    /// TDCN block with a FAVOR+ residual at width `d_b`.
    pub fn conv_tasformer(d_b: usize, d_c: usize, heads: usize, d_r: usize) -> Self {
        BlockConfig {
            kind: BlockKind::ConvTasformer,
            attention: AttentionConfig::new(d_b, heads, d_r),
            ..Self::tdcn(d_b, d_c)
        }
    }

    pub fn conformer(kind: BlockKind, d_b: usize, heads: usize, d_r: usize) -> Self {
        BlockConfig {
            kind,
            d_b,
            d_c: d_b,
            kernel_size: 5,
            ffn_expansion: 4,
            dropout: 0.1,
            attention: AttentionConfig::new(d_b, heads, d_r),
            decayed_scale_init: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_b == 0 || self.d_c == 0 || self.ffn_expansion == 0 {
            return Err(Error::invalid("block", "dimensions must be positive"));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::invalid("block", format!("kernel size {} must be odd", self.kernel_size)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("block", format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.kind.attention().is_some() {
            if self.attention.model_dim != self.d_b {
                return Err(Error::invalid("block", "attention width must equal D_b"));
            }
            self.attention.validate()?;
        }
        Ok(())
    }

    /// Closed-form trainable parameter count of one block.
    pub fn param_count(&self) -> usize {
        match self.kind {
            BlockKind::Tdcn | BlockKind::ConvTasformer => TdcnBlock::param_count(self),
            BlockKind::Conformer | BlockKind::DfConformer => ConformerBlock::param_count(self),
        }
    }
}

/// `d = 2^((i−1) mod L_s)` for the 1-based block index `i`.
pub fn dilation_schedule(i: usize, l_s: usize) -> Result<usize> {
    if i == 0 || l_s == 0 {
        return Err(Error::invalid("dilation_schedule", "block index and cycle length start at 1"));
    }
    Ok(1 << ((i - 1) % l_s))
}

#[derive(Debug, Clone)]
pub enum Block {
    Tdcn(TdcnBlock),
    Conformer(ConformerBlock),
}

impl Block {
    /// Builds block `index` (1-based) of a stack.
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, cfg: &BlockConfig, index: usize) -> Result<Self> {
        cfg.validate()?;
        let mut cfg = cfg.clone();
        cfg.attention.rng_seed = cfg.attention.rng_seed.wrapping_add(index as u64);
        Ok(match cfg.kind {
            BlockKind::Tdcn | BlockKind::ConvTasformer => Block::Tdcn(TdcnBlock::new(init, name, &cfg, index)?),
            BlockKind::Conformer | BlockKind::DfConformer => Block::Conformer(ConformerBlock::new(init, name, &cfg)?),
        })
    }

    /// Residual-branch output; the caller adds it to `z`.
    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, z: &Var<T>, dilation: usize) -> Result<Var<T>> {
        match self {
            Block::Tdcn(b) => b.forward(ctx, z, dilation),
            Block::Conformer(b) => b.forward(ctx, z, dilation),
        }
    }

    /// Residual-branch outputs for a batch. Batch norm pools over the batch;
    /// everything else acts per example.
    pub fn forward_batch<T: Scalar>(&self, ctx: &Ctx<'_, T>, zs: &[Var<T>], dilation: usize) -> Result<Vec<Var<T>>> {
        match self {
            Block::Tdcn(b) => zs.iter().map(|z| b.forward(ctx, z, dilation)).collect(),
            Block::Conformer(b) => b.forward_batch(ctx, zs, dilation),
        }
    }

    pub fn attention(&self) -> Option<&crate::attention::MultiHeadAttention> {
        match self {
            Block::Tdcn(b) => b.favor.as_ref().map(|(_, a)| a),
            Block::Conformer(b) => Some(&b.attn),
        }
    }

    /// Input of the attention sublayer for `z`, for attention dumps.
    pub fn attention_input<T: Scalar>(&self, ctx: &Ctx<'_, T>, z: &Var<T>, dilation: usize) -> Result<Option<Var<T>>> {
        match self {
            Block::Tdcn(b) => b.attention_input(ctx, z, dilation),
            Block::Conformer(b) => b.attention_input(ctx, z).map(Some),
        }
    }
}
