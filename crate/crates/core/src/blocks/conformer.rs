use super::BlockConfig;
use crate::attention::MultiHeadAttention;
use crate::autograd::{self as ag, Var};
use crate::error::{Error, Result};
use crate::nn::{dropout, BatchNorm, Ctx, Dense, DepthwiseConv, Init, LayerNorm};
use crate::scalar::Scalar;

/// Layer norm, dense expansion, swish, dropout, dense projection, dropout.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub norm: LayerNorm,
    pub up: Dense,
    pub down: Dense,
}

impl FeedForward {
    fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, d: usize, expansion: usize) -> Result<Self> {
        Ok(FeedForward {
            norm: LayerNorm::new(init, &format!("{name}.norm"), d)?,
            up: Dense::new(init, &format!("{name}.up"), d, expansion * d)?,
            down: Dense::new(init, &format!("{name}.down"), expansion * d, d)?,
        })
    }

    fn param_count(d: usize, expansion: usize) -> usize {
        2 * d + Dense::param_count(d, expansion * d) + Dense::param_count(expansion * d, d)
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, z: &Var<T>, rate: f64) -> Result<Var<T>> {
        let h = ag::swish(&self.up.forward(ctx, &self.norm.forward(ctx, z)?)?);
        let h = self.down.forward(ctx, &dropout(ctx, &h, rate)?)?;
        dropout(ctx, &h, rate)
    }
}

/// Layer norm, dense to `2·D_b`, GLU, depthwise convolution, batch norm,
/// swish, dense. Dropout is applied by the caller.
#[derive(Debug, Clone)]
pub struct ConvModule {
    pub norm: LayerNorm,
    pub pointwise: Dense,
    pub depthwise: DepthwiseConv,
    pub bn: BatchNorm,
    pub out: Dense,
}

impl ConvModule {
    fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, d: usize, kernel: usize) -> Result<Self> {
        Ok(ConvModule {
            norm: LayerNorm::new(init, &format!("{name}.norm"), d)?,
            pointwise: Dense::new(init, &format!("{name}.pointwise"), d, 2 * d)?,
            depthwise: DepthwiseConv::new(init, &format!("{name}.depthwise"), d, kernel)?,
            bn: BatchNorm::new(init, &format!("{name}.bn"), d)?,
            out: Dense::new(init, &format!("{name}.out"), d, d)?,
        })
    }

    fn param_count(d: usize, kernel: usize) -> usize {
        2 * d + Dense::param_count(d, 2 * d) + DepthwiseConv::param_count(d, kernel) + 2 * d + Dense::param_count(d, d)
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, z: &Var<T>, dilation: usize) -> Result<Var<T>> {
        Ok(self.forward_batch(ctx, std::slice::from_ref(z), dilation)?.remove(0))
    }

    /// Batched forward; batch norm pools statistics over the whole batch.
    pub fn forward_batch<T: Scalar>(&self, ctx: &Ctx<'_, T>, zs: &[Var<T>], dilation: usize) -> Result<Vec<Var<T>>> {
        let rs = zs
            .iter()
            .map(|z| {
                let r = ag::glu(&self.pointwise.forward(ctx, &self.norm.forward(ctx, z)?)?)?;
                self.depthwise.forward(ctx, &r, dilation)
            })
            .collect::<Result<Vec<_>>>()?;
        self.bn
            .forward_batch(ctx, &rs)?
            .iter()
            .map(|r| self.out.forward(ctx, &ag::swish(r)))
            .collect()
    }
}

/// Half-step FFN, pre-norm attention, convolution module, half-step FFN,
/// final layer norm. With softmax attention and dilation 1 this is the
/// Conformer block; with FAVOR+ and a scheduled dilation it is the
/// DF-Conformer block.
#[derive(Debug, Clone)]
pub struct ConformerBlock {
    pub ffn1: FeedForward,
    pub attn_norm: LayerNorm,
    pub attn: MultiHeadAttention,
    pub conv: ConvModule,
    pub ffn2: FeedForward,
    pub final_norm: LayerNorm,
    pub dropout: f64,
}

impl ConformerBlock {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, cfg: &BlockConfig) -> Result<Self> {
        let d = cfg.d_b;
        let kind = cfg
            .kind
            .attention()
            .ok_or_else(|| Error::invalid("conformer_block", "block kind has no attention"))?;
        Ok(ConformerBlock {
            ffn1: FeedForward::new(init, &format!("{name}.ffn1"), d, cfg.ffn_expansion)?,
            attn_norm: LayerNorm::new(init, &format!("{name}.attn_norm"), d)?,
            attn: MultiHeadAttention::new(init, &format!("{name}.attn"), &cfg.attention, kind)?,
            conv: ConvModule::new(init, &format!("{name}.conv"), d, cfg.kernel_size)?,
            ffn2: FeedForward::new(init, &format!("{name}.ffn2"), d, cfg.ffn_expansion)?,
            final_norm: LayerNorm::new(init, &format!("{name}.final_norm"), d)?,
            dropout: cfg.dropout,
        })
    }

    pub fn param_count(cfg: &BlockConfig) -> usize {
        let d = cfg.d_b;
        2 * FeedForward::param_count(d, cfg.ffn_expansion)
            + 2 * d
            + MultiHeadAttention::param_count(d)
            + ConvModule::param_count(d, cfg.kernel_size)
            + 2 * d
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, z: &Var<T>, dilation: usize) -> Result<Var<T>> {
        Ok(self.forward_batch(ctx, std::slice::from_ref(z), dilation)?.remove(0))
    }

    /// Batched forward; only the convolution module couples examples.
    pub fn forward_batch<T: Scalar>(&self, ctx: &Ctx<'_, T>, zs: &[Var<T>], dilation: usize) -> Result<Vec<Var<T>>> {
        let half = T::c(0.5);
        let zs = zs
            .iter()
            .map(|z| {
                let z = ag::add(z, &ag::scale_const(&self.ffn1.forward(ctx, z, self.dropout)?, half))?;
                let a = self.attn.forward(ctx, &self.attn_norm.forward(ctx, &z)?)?;
                ag::add(&z, &dropout(ctx, &a, self.dropout)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let cs = self.conv.forward_batch(ctx, &zs, dilation)?;
        zs.iter()
            .zip(&cs)
            .map(|(z, c)| {
                let z = ag::add(z, &dropout(ctx, c, self.dropout)?)?;
                let z = ag::add(&z, &ag::scale_const(&self.ffn2.forward(ctx, &z, self.dropout)?, half))?;
                self.final_norm.forward(ctx, &z)
            })
            .collect()
    }

    pub fn attention_input<T: Scalar>(&self, ctx: &Ctx<'_, T>, z: &Var<T>) -> Result<Var<T>> {
        let z = ag::add(z, &ag::scale_const(&self.ffn1.forward(ctx, z, 0.0)?, T::c(0.5)))?;
        self.attn_norm.forward(ctx, &z)
    }
}
