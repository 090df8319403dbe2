//! Complete enhancement models: filterbank, mask predictor, dual speech and
//! noise masking, mixture consistency, losses and the iterative wrapper.

mod frontend;
mod loss;
mod network;

pub use frontend::Frontend;
pub use loss::{mixture_consistency, thresholded_snr_loss, total_loss, DEFAULT_ALPHA, NOISE_WEIGHT, SPEECH_WEIGHT};
pub use network::{AttentionDump, Estimates, MaskPair, MaskPredictor, Model, Stage};

use crate::blocks::{dilation_schedule, BlockConfig, BlockKind};
use crate::error::{Error, Result};
use crate::filterbank::{FilterbankConfig, FilterbankKind};

/// Every preset id accepted by [`ModelConfig::preset`].
pub const PRESETS: [&str; 10] = [
    "tdcn++",
    "conv-tasformer",
    "conformer-4",
    "conformer-4-stft",
    "f-conformer-4",
    "conformer-8-stft",
    "f-conformer-8",
    "df-conformer-8",
    "idf-conformer-8",
    "idf-conformer-12",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub block: BlockConfig,
    /// Total number of blocks `L`.
    pub num_blocks: usize,
    /// Dilation cycle length `L_s`; 1 keeps every convolution undilated.
    pub cycle_len: usize,
    pub filterbank: FilterbankConfig,
    pub sample_rate: u32,
    /// Two stages, the second refining the first.
    pub iterative: bool,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(block: BlockConfig, num_blocks: usize, cycle_len: usize, filterbank: FilterbankConfig) -> Self {
        ModelConfig {
            block,
            num_blocks,
            cycle_len,
            filterbank,
            sample_rate: 16_000,
            iterative: false,
            seed: 0,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        let conformer = |kind, l, l_s, d_b, heads| {
            ModelConfig::new(BlockConfig::conformer(kind, d_b, heads, 384), l, l_s, FilterbankConfig::trainable())
        };
        let stft = |mut cfg: ModelConfig| {
            cfg.filterbank = FilterbankConfig::stft();
            cfg
        };
        let iterative = |mut cfg: ModelConfig| {
            cfg.iterative = true;
            cfg
        };
        Ok(match name {
            "tdcn++" => ModelConfig::new(BlockConfig::tdcn(256, 512), 32, 8, FilterbankConfig::trainable()),
            "conv-tasformer" => ModelConfig::new(
                BlockConfig::conv_tasformer(256, 512, 8, 128),
                16,
                8,
                FilterbankConfig::trainable(),
            ),
            "conformer-4" => conformer(BlockKind::Conformer, 4, 1, 192, 6),
            "conformer-4-stft" => stft(conformer(BlockKind::Conformer, 4, 1, 192, 6)),
            "f-conformer-4" => conformer(BlockKind::DfConformer, 4, 1, 192, 6),
            "conformer-8-stft" => stft(conformer(BlockKind::Conformer, 8, 1, 216, 6)),
            "f-conformer-8" => conformer(BlockKind::DfConformer, 8, 1, 216, 6),
            "df-conformer-8" => conformer(BlockKind::DfConformer, 8, 4, 216, 6),
            "idf-conformer-8" => iterative(conformer(BlockKind::DfConformer, 8, 4, 216, 6)),
            "idf-conformer-12" => iterative(conformer(BlockKind::DfConformer, 12, 4, 256, 8)),
            other => return Err(Error::UnknownPreset(other.to_string())),
        })
    }

    /// Tiny DF-Conformer used for smoke training: `L=2, L_s=2, D_b=32,
    /// D_r=32`, two heads, 64 encoder channels at 8 kHz.
    pub fn tiny() -> Self {
        let mut block = BlockConfig::conformer(BlockKind::DfConformer, 32, 2, 32);
        block.dropout = 0.0;
        let mut filterbank = FilterbankConfig::trainable();
        filterbank.d_e = 64;
        let mut cfg = ModelConfig::new(block, 2, 2, filterbank);
        cfg.sample_rate = 8_000;
        cfg
    }

    /// Width of the frame matrix the mask predictor reads.
    pub fn feature_dim(&self) -> usize {
        self.filterbank.feature_dim()
    }

    /// Width of each mask head: one gain per channel, or a real and an
    /// imaginary part per STFT bin.
    pub fn mask_dim(&self) -> usize {
        match self.filterbank.kind {
            FilterbankKind::Trainable => self.filterbank.d_e,
            FilterbankKind::Stft => 2 * self.feature_dim(),
        }
    }

    pub fn stages(&self) -> usize {
        if self.iterative {
            2
        } else {
            1
        }
    }

    /// Dilation of block `i` (1-based).
    pub fn dilation(&self, i: usize) -> Result<usize> {
        if self.block.kind.dilated() {
            dilation_schedule(i, self.cycle_len)
        } else {
            Ok(1)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_blocks == 0 || self.cycle_len == 0 {
            return Err(Error::invalid("model", "need at least one block and a positive cycle length"));
        }
        if self.iterative && self.filterbank.kind == FilterbankKind::Stft {
            return Err(Error::invalid("model", "iterative models use the trainable filterbank"));
        }
        self.block.validate()?;
        self.filterbank.validate(self.sample_rate)
    }

    /// Trainable parameter count per module, from closed forms.
    pub fn param_breakdown(&self) -> Vec<(String, usize)> {
        let dense = |i: usize, o: usize| i * o + o;
        let (f, d_b, m) = (self.feature_dim(), self.block.d_b, self.mask_dim());
        let mut out = Vec::new();
        for s in 0..self.stages() {
            let p = if self.iterative { format!("stage{}.", s + 1) } else { String::new() };
            if self.filterbank.kind == FilterbankKind::Trainable {
                let w = self.filterbank.window_samples(self.sample_rate);
                out.push((format!("{p}filterbank"), 2 * w * self.filterbank.d_e));
            }
            if s > 0 {
                out.push((format!("{p}fusion"), dense(3 * f, f)));
            }
            out.push((format!("{p}input"), dense(f, d_b)));
            for i in 1..=self.num_blocks {
                out.push((format!("{p}block{i}"), self.block.param_count()));
            }
            out.push((format!("{p}heads"), 2 * dense(d_b, m)));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_breakdown().iter().map(|(_, n)| n).sum()
    }
}
