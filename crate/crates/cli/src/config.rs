//! Run configuration files: UTF-8 `key = value` lines, `#` comments.
//!
//! `preset` picks the base model and is applied first; every other key
//! overrides one field. Unknown keys are rejected.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use dfconformer::blocks::BlockKind;
use dfconformer::filterbank::FilterbankKind;
use dfconformer::model::ModelConfig;
use dfconformer::trainer::TrainConfig;

use crate::error::{CliError, Result};

pub const DEFAULT_PRESET: &str = "df-conformer-8";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    /// Fresh synthetic mixtures every step.
    Stream,
    /// A fixed set of `data_examples` mixtures visited in order.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataKind,
    pub data_examples: usize,
    /// Steps between checkpoint writes; 0 writes only the final one.
    pub checkpoint_every: u64,
    pub precision: Precision,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: DEFAULT_PRESET.to_string(),
            model: ModelConfig::preset(DEFAULT_PRESET).expect("default preset exists"),
            train: TrainConfig::default(),
            data: DataKind::Stream,
            data_examples: 16,
            checkpoint_every: 0,
            precision: Precision::F64,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Model,
    Train,
}

type Setter = fn(&mut RunConfig, &str) -> std::result::Result<(), String>;
type Getter = fn(&RunConfig) -> String;

struct Key {
    name: &'static str,
    section: Section,
    set: Setter,
    get: Getter,
}

fn parse<V: FromStr>(v: &str) -> std::result::Result<V, String>
where
    V::Err: Display,
{
    v.parse::<V>().map_err(|e| format!("cannot parse `{v}`: {e}"))
}

macro_rules! key {
    ($name:literal, $section:ident, |$c:ident| $field:expr) => {
        Key {
            name: $name,
            section: Section::$section,
            set: |$c, v| {
                $field = parse(v)?;
                Ok(())
            },
            get: |$c| $field.to_string(),
        }
    };
}

fn block_kind(v: &str) -> std::result::Result<BlockKind, String> {
    v.parse().map_err(|e: dfconformer::Error| e.to_string())
}

fn filterbank_kind(v: &str) -> std::result::Result<FilterbankKind, String> {
    v.parse().map_err(|e: dfconformer::Error| e.to_string())
}

const KEYS: &[Key] = &[
    Key {
        name: "block",
        section: Section::Model,
        set: |c, v| {
            c.model.block.kind = block_kind(v)?;
            Ok(())
        },
        get: |c| c.model.block.kind.as_str().to_string(),
    },
    key!("num_blocks", Model, |c| c.model.num_blocks),
    key!("cycle_len", Model, |c| c.model.cycle_len),
    key!("d_b", Model, |c| c.model.block.d_b),
    key!("d_c", Model, |c| c.model.block.d_c),
    key!("heads", Model, |c| c.model.block.attention.heads),
    key!("random_features", Model, |c| c.model.block.attention.num_random_features),
    key!("redraw_interval", Model, |c| c.model.block.attention.redraw_interval),
    key!("attention_seed", Model, |c| c.model.block.attention.rng_seed),
    key!("kernel_size", Model, |c| c.model.block.kernel_size),
    key!("ffn_expansion", Model, |c| c.model.block.ffn_expansion),
    key!("dropout", Model, |c| c.model.block.dropout),
    key!("decayed_scale_init", Model, |c| c.model.block.decayed_scale_init),
    key!("iterative", Model, |c| c.model.iterative),
    key!("sample_rate", Model, |c| c.model.sample_rate),
    key!("model_seed", Model, |c| c.model.seed),
    Key {
        name: "filterbank",
        section: Section::Model,
        set: |c, v| {
            c.model.filterbank.kind = filterbank_kind(v)?;
            Ok(())
        },
        get: |c| c.model.filterbank.kind.as_str().to_string(),
    },
    key!("window_ms", Model, |c| c.model.filterbank.window_ms),
    key!("hop_ms", Model, |c| c.model.filterbank.hop_ms),
    key!("encoder_channels", Model, |c| c.model.filterbank.d_e),
    key!("fft_size", Model, |c| c.model.filterbank.fft_size),
    key!("steps", Train, |c| c.train.steps),
    key!("batch_size", Train, |c| c.train.batch_size),
    key!("warmup_steps", Train, |c| c.train.warmup_steps),
    key!("lr_scale", Train, |c| c.train.lr_scale),
    key!("weight_decay", Train, |c| c.train.weight_decay),
    key!("clip_norm", Train, |c| c.train.clip_norm),
    key!("ema_decay", Train, |c| c.train.ema_decay),
    key!("seed", Train, |c| c.train.seed),
    key!("clip_duration_s", Train, |c| c.train.clip_duration_s),
    key!("snr_min_db", Train, |c| c.train.snr_range.0),
    key!("snr_max_db", Train, |c| c.train.snr_range.1),
    key!("val_size", Train, |c| c.train.val_size),
    key!("val_seed", Train, |c| c.train.val_seed),
    key!("val_every", Train, |c| c.train.val_every),
    Key {
        name: "data",
        section: Section::Train,
        set: |c, v| {
            c.data = match v {
                "stream" => DataKind::Stream,
                "fixed" => DataKind::Fixed,
                other => return Err(format!("`{other}` is neither `stream` nor `fixed`")),
            };
            Ok(())
        },
        get: |c| match c.data {
            DataKind::Stream => "stream".to_string(),
            DataKind::Fixed => "fixed".to_string(),
        },
    },
    key!("data_examples", Train, |c| c.data_examples),
    key!("checkpoint_every", Train, |c| c.checkpoint_every),
    Key {
        name: "precision",
        section: Section::Train,
        set: |c, v| {
            c.precision = match v {
                "f32" => Precision::F32,
                "f64" => Precision::F64,
                other => return Err(format!("`{other}` is neither `f32` nor `f64`")),
            };
            Ok(())
        },
        get: |c| match c.precision {
            Precision::F32 => "f32".to_string(),
            Precision::F64 => "f64".to_string(),
        },
    },
];

/// Every accepted key, `preset` first.
pub fn known_keys() -> Vec<&'static str> {
    std::iter::once("preset").chain(KEYS.iter().map(|k| k.name)).collect()
}

struct Entry<'a> {
    line: usize,
    key: &'a str,
    value: &'a str,
}

fn entries(text: &str) -> Result<Vec<Entry<'_>>> {
    let mut out: Vec<Entry<'_>> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| CliError::ConfigSyntax {
            line,
            message: format!("expected `key = value`, found `{content}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(CliError::ConfigSyntax {
                line,
                message: format!("expected `key = value`, found `{content}`"),
            });
        }
        if key != "preset" && !KEYS.iter().any(|k| k.name == key) {
            return Err(CliError::UnknownKey {
                key: key.to_string(),
                line,
            });
        }
        if let Some(first) = out.iter().find(|e| e.key == key) {
            return Err(CliError::ConfigValue {
                key: key.to_string(),
                line,
                message: format!("already set on line {}", first.line),
            });
        }
        out.push(Entry { line, key, value });
    }
    Ok(out)
}

impl RunConfig {
    /// Parses a config file body. Missing keys keep the preset or training
    /// defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let entries = entries(text)?;
        let mut cfg = RunConfig::default();
        if let Some(e) = entries.iter().find(|e| e.key == "preset") {
            cfg.set_preset(e.value).map_err(|message| CliError::ConfigValue {
                key: "preset".to_string(),
                line: e.line,
                message,
            })?;
        }
        for e in entries.iter().filter(|e| e.key != "preset") {
            let key = KEYS.iter().find(|k| k.name == e.key).expect("keys were checked");
            (key.set)(&mut cfg, e.value).map_err(|message| CliError::ConfigValue {
                key: e.key.to_string(),
                line: e.line,
                message,
            })?;
        }
        cfg.model.block.attention.model_dim = cfg.model.block.d_b;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    /// Config for a named preset with default training settings.
    pub fn from_preset(name: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.set_preset(name).map_err(CliError::Usage)?;
        Ok(cfg)
    }

    fn set_preset(&mut self, name: &str) -> std::result::Result<(), String> {
        self.model = ModelConfig::preset(name).map_err(|e| e.to_string())?;
        self.preset = name.to_string();
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.data == DataKind::Fixed && self.data_examples == 0 {
            return Err(CliError::ConfigValue {
                key: "data_examples".to_string(),
                line: 0,
                message: "a fixed data set needs at least one example".to_string(),
            });
        }
        Ok(())
    }

    fn render(&self, section: Option<Section>) -> String {
        let mut out = format!("preset = {}\n", self.preset);
        for k in KEYS.iter().filter(|k| section.is_none_or(|s| s == k.section)) {
            out.push_str(&format!("{} = {}\n", k.name, (k.get)(self)));
        }
        out
    }

    /// Every key with its current value; `parse` reads it back unchanged.
    pub fn to_text(&self) -> String {
        self.render(None)
    }

    /// Only the keys that shape the model, as stored in checkpoints.
    pub fn model_text(&self) -> String {
        self.render(Some(Section::Model))
    }
}
