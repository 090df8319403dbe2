use super::frontend::{Encoded, Frontend};
use super::loss::{mixture_consistency, total_loss};
use super::ModelConfig;
use crate::attention::{favor_head, softmax_head, AttentionKind};
use crate::autograd::{self as ag, Var};
use crate::blocks::Block;
use crate::error::{Error, Result};
use crate::filterbank::{FilterbankKind, Waveform};
use crate::nn::{Ctx, Dense, Init, Mode, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Speech and noise masks. Sigmoid gains in `[0, 1]` for the trainable
/// filterbank; unbounded complex masks (real parts, then imaginary parts)
/// for the STFT.
pub struct MaskPair<T: Scalar> {
    pub speech: Var<T>,
    pub noise: Var<T>,
}

/// Time-domain speech and noise estimates.
pub struct Estimates<T: Scalar> {
    pub speech: Var<T>,
    pub noise: Var<T>,
}

/// Input dense `F→D_b`, `L` residual blocks on the dilation schedule, and
/// separate speech and noise heads `D_b→` mask width.
#[derive(Debug, Clone)]
pub struct MaskPredictor {
    pub input: Dense,
    pub blocks: Vec<Block>,
    pub dilations: Vec<usize>,
    pub speech_head: Dense,
    pub noise_head: Dense,
    pub bounded: bool,
}

impl MaskPredictor {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let d_b = cfg.block.d_b;
        let input = Dense::new(init, &format!("{name}.input"), cfg.feature_dim(), d_b)?;
        let mut blocks = Vec::with_capacity(cfg.num_blocks);
        let mut dilations = Vec::with_capacity(cfg.num_blocks);
        for i in 1..=cfg.num_blocks {
            blocks.push(Block::new(init, &format!("{name}.block{i}"), &cfg.block, i)?);
            dilations.push(cfg.dilation(i)?);
        }
        Ok(MaskPredictor {
            input,
            blocks,
            dilations,
            speech_head: Dense::new(init, &format!("{name}.speech_head"), d_b, cfg.mask_dim())?,
            noise_head: Dense::new(init, &format!("{name}.noise_head"), d_b, cfg.mask_dim())?,
            bounded: cfg.filterbank.kind == FilterbankKind::Trainable,
        })
    }

    /// Trunk state after the first `upto` blocks.
    pub fn trunk<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>, upto: usize) -> Result<Var<T>> {
        Ok(self.trunk_batch(ctx, std::slice::from_ref(x), upto)?.remove(0))
    }

    /// Trunk states of a batch; batch norm pools over all examples.
    pub fn trunk_batch<T: Scalar>(&self, ctx: &Ctx<'_, T>, xs: &[Var<T>], upto: usize) -> Result<Vec<Var<T>>> {
        let mut zs = xs.iter().map(|x| self.input.forward(ctx, x)).collect::<Result<Vec<_>>>()?;
        for (block, &d) in self.blocks.iter().zip(&self.dilations).take(upto) {
            let rs = block.forward_batch(ctx, &zs, d)?;
            zs = zs.iter().zip(&rs).map(|(z, r)| ag::add(z, r)).collect::<Result<Vec<_>>>()?;
        }
        Ok(zs)
    }

    /// Head outputs before the mask nonlinearity.
    pub fn preactivations<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Result<(Var<T>, Var<T>)> {
        let z = self.trunk(ctx, x, self.blocks.len())?;
        Ok((self.speech_head.forward(ctx, &z)?, self.noise_head.forward(ctx, &z)?))
    }

    fn masks<T: Scalar>(&self, ctx: &Ctx<'_, T>, z: &Var<T>) -> Result<MaskPair<T>> {
        let (s, n) = (self.speech_head.forward(ctx, z)?, self.noise_head.forward(ctx, z)?);
        Ok(if self.bounded {
            MaskPair {
                speech: ag::sigmoid(&s),
                noise: ag::sigmoid(&n),
            }
        } else {
            MaskPair { speech: s, noise: n }
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Result<MaskPair<T>> {
        Ok(self.forward_batch(ctx, std::slice::from_ref(x))?.remove(0))
    }

    pub fn forward_batch<T: Scalar>(&self, ctx: &Ctx<'_, T>, xs: &[Var<T>]) -> Result<Vec<MaskPair<T>>> {
        self.trunk_batch(ctx, xs, self.blocks.len())?
            .iter()
            .map(|z| self.masks(ctx, z))
            .collect()
    }
}

/// One full enhancement model. Later stages of an iterative model also see
/// the previous estimates through a fusion dense `3F→F`.
#[derive(Debug, Clone)]
pub struct Stage {
    pub frontend: Frontend,
    pub fusion: Option<Dense>,
    pub predictor: MaskPredictor,
}

impl Stage {
    fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, cfg: &ModelConfig, refine: bool) -> Result<Self> {
        let f = cfg.feature_dim();
        Ok(Stage {
            frontend: Frontend::new(init, &format!("{name}.filterbank"), &cfg.filterbank, cfg.sample_rate)?,
            fusion: if refine {
                Some(Dense::new(init, &format!("{name}.fusion"), 3 * f, f)?)
            } else {
                None
            },
            predictor: MaskPredictor::new(init, &format!("{name}.predictor"), cfg)?,
        })
    }

    fn predictor_input<T: Scalar>(
        &self,
        ctx: &Ctx<'_, T>,
        enc: &Encoded<T>,
        prev: Option<&Estimates<T>>,
    ) -> Result<Var<T>> {
        match (&self.fusion, prev) {
            (None, _) => Ok(enc.features.clone()),
            (Some(fusion), Some(prev)) => {
                let s = self.frontend.encode(ctx, &prev.speech)?.features;
                let n = self.frontend.encode(ctx, &prev.noise)?.features;
                fusion.forward(ctx, &ag::concat_cols(&[enc.features.clone(), s, n])?)
            }
            (Some(_), None) => Err(Error::invalid("iterative_enhance", "refinement stage needs previous estimates")),
        }
    }

    /// Masked and resynthesized estimates before mixture consistency.
    pub fn separate<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>, prev: Option<&Estimates<T>>) -> Result<Estimates<T>> {
        let prev = prev.map(std::slice::from_ref);
        Ok(self.separate_batch(ctx, std::slice::from_ref(x), prev)?.remove(0))
    }

    /// Batched [`Stage::separate`]; `prev` holds one estimate per example.
    pub fn separate_batch<T: Scalar>(
        &self,
        ctx: &Ctx<'_, T>,
        xs: &[Var<T>],
        prev: Option<&[Estimates<T>]>,
    ) -> Result<Vec<Estimates<T>>> {
        if prev.is_some_and(|p| p.len() != xs.len()) {
            return Err(Error::invalid("iterative_enhance", "one previous estimate per example is required"));
        }
        let encs = xs.iter().map(|x| self.frontend.encode(ctx, x)).collect::<Result<Vec<_>>>()?;
        let inputs = encs
            .iter()
            .enumerate()
            .map(|(b, enc)| self.predictor_input(ctx, enc, prev.map(|p| &p[b])))
            .collect::<Result<Vec<_>>>()?;
        let masks = self.predictor.forward_batch(ctx, &inputs)?;
        xs.iter()
            .zip(&encs)
            .zip(&masks)
            .map(|((x, enc), m)| {
                let len = x.value().numel();
                Ok(Estimates {
                    speech: self.frontend.apply_mask(ctx, enc, &m.speech, len)?,
                    noise: self.frontend.apply_mask(ctx, enc, &m.noise, len)?,
                })
            })
            .collect()
    }

    pub fn enhance<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>, prev: Option<&Estimates<T>>) -> Result<Estimates<T>> {
        let raw = self.separate(ctx, x, prev)?;
        mixture_consistency(&raw, x)
    }

    pub fn enhance_batch<T: Scalar>(
        &self,
        ctx: &Ctx<'_, T>,
        xs: &[Var<T>],
        prev: Option<&[Estimates<T>]>,
    ) -> Result<Vec<Estimates<T>>> {
        self.separate_batch(ctx, xs, prev)?
            .iter()
            .zip(xs)
            .map(|(raw, x)| mixture_consistency(raw, x))
            .collect()
    }
}

/// Matrix, values and streaming output of one attention head, for dumps.
pub struct AttentionDump<T: Scalar> {
    /// `N×N` row-stochastic attention weights.
    pub matrix: Tensor<T>,
    /// `N×D` value slice of the head.
    pub values: Tensor<T>,
    /// `N×D` head output computed without materializing the matrix.
    pub output: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub stages: Vec<Stage>,
}

impl Model {
    /// Registers all parameters in `store`, initialized from `cfg.seed`.
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut init = Init::new(store, cfg.seed);
        let stages = (0..cfg.stages())
            .map(|s| {
                let name = if cfg.iterative { format!("stage{}", s + 1) } else { "model".to_string() };
                Stage::new(&mut init, &name, cfg, s > 0)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Model {
            config: cfg.clone(),
            stages,
        })
    }

    fn input<T: Scalar>(x: &[T]) -> Result<Var<T>> {
        if x.is_empty() {
            return Err(Error::invalid("enhance", "empty signal"));
        }
        Ok(Var::constant(Tensor::new(&[x.len()], x.to_vec())?))
    }

    /// Consistent estimates of every stage, first to last.
    pub fn enhance_stages<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &[T]) -> Result<Vec<Estimates<T>>> {
        Ok(self
            .enhance_stages_batch(ctx, &[x])?
            .into_iter()
            .map(|mut stage| stage.remove(0))
            .collect())
    }

    /// Per stage, the consistent estimates of every example. Examples share
    /// batch-norm statistics in training mode.
    pub fn enhance_stages_batch<T: Scalar>(&self, ctx: &Ctx<'_, T>, xs: &[&[T]]) -> Result<Vec<Vec<Estimates<T>>>> {
        if xs.is_empty() {
            return Err(Error::invalid("enhance", "empty batch"));
        }
        let xs = xs.iter().map(|x| Self::input(x)).collect::<Result<Vec<_>>>()?;
        let mut out: Vec<Vec<Estimates<T>>> = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let est = stage.enhance_batch(ctx, &xs, out.last().map(Vec::as_slice))?;
            out.push(est);
        }
        Ok(out)
    }

    /// Final consistent speech and noise estimates.
    pub fn enhance<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &[T]) -> Result<Estimates<T>> {
        Ok(self.enhance_stages(ctx, x)?.pop().expect("at least one stage"))
    }

    /// Inference on a waveform with eval-mode layers.
    pub fn enhance_waveform<T: Scalar>(&self, store: &ParamStore<T>, x: &Waveform<T>) -> Result<(Waveform<T>, Waveform<T>)> {
        if x.sample_rate != self.config.sample_rate {
            return Err(Error::invalid(
                "enhance",
                format!("sample rate {} differs from the model's {}", x.sample_rate, self.config.sample_rate),
            ));
        }
        let est = self.enhance(&Ctx::eval(store), &x.samples)?;
        Ok((
            Waveform::new(est.speech.data().to_vec(), x.sample_rate)?,
            Waveform::new(est.noise.data().to_vec(), x.sample_rate)?,
        ))
    }

    /// Training objective: the weighted thresholded-SNR loss summed over
    /// stages.
    pub fn loss<T: Scalar>(&self, ctx: &Ctx<'_, T>, s: &[T], n: &[T]) -> Result<Var<T>> {
        Ok(self.loss_batch(ctx, &[(s, n)])?.remove(0))
    }

    /// Per-example losses of a batch of `(speech, noise)` pairs, computed
    /// in one forward so batch norm sees the whole batch.
    pub fn loss_batch<T: Scalar>(&self, ctx: &Ctx<'_, T>, batch: &[(&[T], &[T])]) -> Result<Vec<Var<T>>> {
        let mixtures = batch
            .iter()
            .map(|(s, n)| {
                if s.len() != n.len() {
                    return Err(Error::invalid("loss", "speech and noise lengths differ"));
                }
                Ok(s.iter().zip(n.iter()).map(|(a, b)| *a + *b).collect::<Vec<T>>())
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&[T]> = mixtures.iter().map(Vec::as_slice).collect();
        let stages = self.enhance_stages_batch(ctx, &refs)?;
        batch
            .iter()
            .enumerate()
            .map(|(b, (s, n))| {
                let mut total: Option<Var<T>> = None;
                for stage in &stages {
                    let l = total_loss(s, n, &stage[b])?;
                    total = Some(match total {
                        None => l,
                        Some(t) => ag::add(&t, &l)?,
                    });
                }
                Ok(total.expect("at least one stage"))
            })
            .collect()
    }

    /// Seeds batch-norm running statistics from `signals`, pooled as one
    /// batch, so an untrained model can run in eval mode.
    pub fn calibrate<T: Scalar>(&self, store: &mut ParamStore<T>, signals: &[Vec<T>]) -> Result<()> {
        if signals.is_empty() {
            return Ok(());
        }
        let ctx = Ctx::new(store, Mode::Calibrate, false, 0);
        let refs: Vec<&[T]> = signals.iter().map(Vec::as_slice).collect();
        self.enhance_stages_batch(&ctx, &refs)?;
        let updates = ctx.finish();
        store.apply(updates)
    }

    /// Number of blocks per stage.
    pub fn num_blocks(&self) -> usize {
        self.config.num_blocks
    }

    /// Attention of head `head` in block `layer` (both 1-based) of the first
    /// stage for input `x`.
    pub fn attention_dump<T: Scalar>(
        &self,
        ctx: &Ctx<'_, T>,
        x: &[T],
        layer: usize,
        head: usize,
        limit: usize,
    ) -> Result<AttentionDump<T>> {
        let stage = &self.stages[0];
        let predictor = &stage.predictor;
        if layer == 0 || layer > predictor.blocks.len() {
            return Err(Error::invalid(
                "dump_attention",
                format!("layer {layer} outside 1..={}", predictor.blocks.len()),
            ));
        }
        let block = &predictor.blocks[layer - 1];
        let attn = block
            .attention()
            .ok_or_else(|| Error::invalid("dump_attention", format!("block {layer} has no attention")))?;
        if head == 0 || head > attn.heads {
            return Err(Error::invalid("dump_attention", format!("head {head} outside 1..={}", attn.heads)));
        }
        let x = Self::input(x)?;
        let enc = stage.frontend.encode(ctx, &x)?;
        let frames = enc.features.shape()[0];
        if frames > limit {
            return Err(Error::DumpLimit { frames, limit });
        }
        let z = predictor.trunk(ctx, &enc.features, layer - 1)?;
        let a_in = block
            .attention_input(ctx, &z, predictor.dilations[layer - 1])?
            .expect("block has attention");
        let matrix = attn.attention_matrices(ctx, &a_in, limit)?.swap_remove(head - 1);
        let h = attn.heads_of(ctx, &a_in)?;
        let (q, k, v) = (&h.q[head - 1], &h.k[head - 1], &h.v[head - 1]);
        let output = match attn.kind {
            AttentionKind::Softmax => softmax_head(q, k, v)?,
            AttentionKind::Favor => {
                let omega = ctx.store().tensor(attn.omega.expect("favor attention has a feature map"));
                favor_head(q, k, v, omega)?.0
            }
        };
        Ok(AttentionDump {
            matrix,
            values: v.value().clone(),
            output: output.value().clone(),
        })
    }
}
