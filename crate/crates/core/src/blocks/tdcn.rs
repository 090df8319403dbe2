use super::{BlockConfig, BlockKind};
use crate::attention::{AttentionKind, MultiHeadAttention};
use crate::autograd::{self as ag, Var};
use crate::error::Result;
use crate::nn::{Ctx, Dense, DepthwiseConv, Init, InstanceNorm, LayerNorm, PRelu, Scale};
use crate::scalar::Scalar;

/// Dense up to `D_c`, scaled PReLU and instance norm, dilated depthwise
/// convolution, PReLU and instance norm, dense back to `D_b`, final scale.
/// The Conv-Tasformer variant adds a pre-norm FAVOR+ residual at width `D_b`
/// between the last dense and the final scale.
#[derive(Debug, Clone)]
pub struct TdcnBlock {
    pub dense_in: Dense,
    pub scale_in: Scale,
    pub prelu1: PRelu,
    pub norm1: InstanceNorm,
    pub conv: DepthwiseConv,
    pub prelu2: PRelu,
    pub norm2: InstanceNorm,
    pub dense_out: Dense,
    pub favor: Option<(LayerNorm, MultiHeadAttention)>,
    pub scale_out: Scale,
}

impl TdcnBlock {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, cfg: &BlockConfig, index: usize) -> Result<Self> {
        let (d_b, d_c) = (cfg.d_b, cfg.d_c);
        let final_scale = if cfg.decayed_scale_init {
            0.9f64.powi(index as i32)
        } else {
            1.0
        };
        let dense_in = Dense::new(init, &format!("{name}.dense_in"), d_b, d_c)?;
        let scale_in = Scale::new(init, &format!("{name}.scale_in"), 1.0)?;
        let prelu1 = PRelu::new(init, &format!("{name}.prelu1"), d_c)?;
        let norm1 = InstanceNorm::new(init, &format!("{name}.norm1"), d_c)?;
        let conv = DepthwiseConv::new(init, &format!("{name}.conv"), d_c, cfg.kernel_size)?;
        let prelu2 = PRelu::new(init, &format!("{name}.prelu2"), d_c)?;
        let norm2 = InstanceNorm::new(init, &format!("{name}.norm2"), d_c)?;
        let dense_out = Dense::new(init, &format!("{name}.dense_out"), d_c, d_b)?;
        let favor = match cfg.kind {
            BlockKind::ConvTasformer => Some((
                LayerNorm::new(init, &format!("{name}.favor_norm"), d_b)?,
                MultiHeadAttention::new(init, &format!("{name}.favor"), &cfg.attention, AttentionKind::Favor)?,
            )),
            _ => None,
        };
        let scale_out = Scale::new(init, &format!("{name}.scale_out"), final_scale)?;
        Ok(TdcnBlock {
            dense_in,
            scale_in,
            prelu1,
            norm1,
            conv,
            prelu2,
            norm2,
            dense_out,
            favor,
            scale_out,
        })
    }

    pub fn param_count(cfg: &BlockConfig) -> usize {
        let (d_b, d_c) = (cfg.d_b, cfg.d_c);
        let base = Dense::param_count(d_b, d_c)
            + 1
            + 2 * (d_c + 2 * d_c)
            + DepthwiseConv::param_count(d_c, cfg.kernel_size)
            + Dense::param_count(d_c, d_b)
            + 1;
        match cfg.kind {
            BlockKind::ConvTasformer => base + 2 * d_b + MultiHeadAttention::param_count(d_b),
            _ => base,
        }
    }

    fn body<T: Scalar>(&self, ctx: &Ctx<'_, T>, z: &Var<T>, dilation: usize) -> Result<Var<T>> {
        let h = self.dense_in.forward(ctx, z)?;
        let h = self.norm1.forward(ctx, &self.prelu1.forward(ctx, &self.scale_in.forward(ctx, &h)?)?)?;
        let h = self.conv.forward(ctx, &h, dilation)?;
        let h = self.norm2.forward(ctx, &self.prelu2.forward(ctx, &h)?)?;
        self.dense_out.forward(ctx, &h)
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, z: &Var<T>, dilation: usize) -> Result<Var<T>> {
        let mut h = self.body(ctx, z, dilation)?;
        if let Some((norm, attn)) = &self.favor {
            h = ag::add(&h, &attn.forward(ctx, &norm.forward(ctx, &h)?)?)?;
        }
        self.scale_out.forward(ctx, &h)
    }

    /// Input the FAVOR+ sublayer sees for `z`, if this block has one.
    pub fn attention_input<T: Scalar>(&self, ctx: &Ctx<'_, T>, z: &Var<T>, dilation: usize) -> Result<Option<Var<T>>> {
        match &self.favor {
            None => Ok(None),
            Some((norm, _)) => Ok(Some(norm.forward(ctx, &self.body(ctx, z, dilation)?)?)),
        }
    }
}
