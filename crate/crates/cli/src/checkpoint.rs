//! Checkpoints: a text manifest plus two little-endian `f32` blobs, one for
//! the weights and one for their EMA shadows.
//!
//! ```text
//! dfc-checkpoint
//! format_version = 1
//! preset = df-conformer-8
//! step = 2000
//! blob = checkpoint.bin
//! ema_blob = checkpoint.ema.bin
//! [model]
//! <model keys of the run config>
//! [tensors]
//! <name> f32 <d0>x<d1>... <byte offset>
//! ```
//!
//! Every registered tensor is stored, buffers included (batch-norm running
//! statistics and FAVOR+ feature maps), in registration order. Buffers have
//! no shadow; the EMA blob repeats their values. Weights trained in `f64`
//! are rounded to `f32` on save.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use dfconformer::model::Model;
use dfconformer::nn::ParamStore;
use dfconformer::{Scalar, Tensor};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const MAGIC: &str = "dfc-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into each blob.
    pub offset: usize,
}

impl TensorRecord {
    pub fn byte_len(&self) -> usize {
        self.shape.iter().product::<usize>() * 4
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub format_version: u32,
    pub preset: String,
    pub step: u64,
    pub blob: String,
    pub ema_blob: String,
    /// Model keys in config-file syntax.
    pub model: String,
    pub tensors: Vec<TensorRecord>,
}

impl Manifest {
    pub fn render(&self) -> String {
        let mut out = format!(
            "{MAGIC}\nformat_version = {}\npreset = {}\nstep = {}\nblob = {}\nema_blob = {}\n[model]\n",
            self.format_version, self.preset, self.step, self.blob, self.ema_blob
        );
        for line in self.model.lines().filter(|l| !l.starts_with("preset ")) {
            out.push_str(line);
            out.push('\n');
        }
        out.push_str("[tensors]\n");
        for t in &self.tensors {
            let shape: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
            out.push_str(&format!("{} f32 {} {}\n", t.name, shape.join("x"), t.offset));
        }
        out
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let bad = |msg: String| CliError::checkpoint(path, msg);
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad(format!("missing `{MAGIC}` header")));
        }
        let mut header = Vec::new();
        let mut model = String::new();
        let mut tensors = Vec::new();
        let mut section = "";
        for line in lines {
            match line {
                "[model]" | "[tensors]" => section = line,
                _ if section.is_empty() => {
                    let (k, v) = line.split_once(" = ").ok_or_else(|| bad(format!("bad header line `{line}`")))?;
                    header.push((k.to_string(), v.to_string()));
                }
                _ if section == "[model]" => {
                    model.push_str(line);
                    model.push('\n');
                }
                _ => {
                    let parts: Vec<&str> = line.split(' ').collect();
                    let [name, dtype, shape, offset] = parts[..] else {
                        return Err(bad(format!("bad tensor record `{line}`")));
                    };
                    if dtype != "f32" {
                        return Err(bad(format!("tensor {name}: unsupported dtype {dtype}")));
                    }
                    let shape = shape
                        .split('x')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad(format!("tensor {name}: bad shape `{shape}`")))?;
                    let offset = offset.parse().map_err(|_| bad(format!("tensor {name}: bad offset `{offset}`")))?;
                    tensors.push(TensorRecord {
                        name: name.to_string(),
                        shape,
                        offset,
                    });
                }
            }
        }
        let get = |k: &str| {
            header
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| bad(format!("missing header field `{k}`")))
        };
        let format_version: u32 = get("format_version")?
            .parse()
            .map_err(|_| bad("bad format_version".to_string()))?;
        if format_version != FORMAT_VERSION {
            return Err(bad(format!("format version {format_version}, expected {FORMAT_VERSION}")));
        }
        let preset = get("preset")?;
        Ok(Manifest {
            format_version,
            model: format!("preset = {preset}\n{model}"),
            preset,
            step: get("step")?.parse().map_err(|_| bad("bad step".to_string()))?,
            blob: get("blob")?,
            ema_blob: get("ema_blob")?,
            tensors,
        })
    }
}

/// Blob paths next to a manifest: `x.dfc` → `x.bin`, `x.ema.bin`.
pub fn blob_names(manifest: &Path) -> (String, String) {
    let stem = manifest.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
    (format!("{stem}.bin"), format!("{stem}.ema.bin"))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(&tmp, e))?;
    f.sync_all().map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

fn sibling(manifest: &Path, name: &str) -> PathBuf {
    manifest.parent().unwrap_or(Path::new(".")).join(name)
}

/// Writes the manifest at `path` and both blobs beside it.
pub fn save<T: Scalar>(path: &Path, cfg: &RunConfig, step: u64, store: &ParamStore<T>) -> Result<()> {
    let (blob, ema_blob) = blob_names(path);
    let mut weights = Vec::new();
    let mut shadows = Vec::new();
    let mut tensors = Vec::with_capacity(store.len());
    for p in store.iter() {
        tensors.push(TensorRecord {
            name: p.name.clone(),
            shape: p.tensor.shape().to_vec(),
            offset: weights.len(),
        });
        let shadow = p.ema_shadow.as_ref().unwrap_or(&p.tensor);
        for v in p.tensor.data() {
            weights.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        for v in shadow.data() {
            shadows.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        preset: cfg.preset.clone(),
        step,
        blob: blob.clone(),
        ema_blob: ema_blob.clone(),
        model: cfg.model_text(),
        tensors,
    };
    write_atomic(&sibling(path, &blob), &weights)?;
    write_atomic(&sibling(path, &ema_blob), &shadows)?;
    write_atomic(path, manifest.render().as_bytes())
}

/// A loaded checkpoint: the model, its weights with EMA shadows attached,
/// and the config that built it (training keys at their defaults).
pub struct Checkpoint<T: Scalar> {
    pub config: RunConfig,
    pub step: u64,
    pub model: Model,
    pub store: ParamStore<T>,
}

impl<T: Scalar> Checkpoint<T> {
    /// The store with EMA shadows swapped in as weights.
    pub fn ema_store(&self) -> ParamStore<T> {
        self.store.with_ema_weights()
    }
}

fn read_blob(path: &Path, expected: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.len() != expected {
        return Err(CliError::checkpoint(
            path,
            format!("blob holds {} bytes, manifest describes {expected}", bytes.len()),
        ));
    }
    Ok(bytes)
}

fn decode<T: Scalar>(bytes: &[u8], rec: &TensorRecord) -> Result<Tensor<T>> {
    let data = bytes[rec.offset..rec.offset + rec.byte_len()]
        .chunks_exact(4)
        .map(|c| T::c(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    Ok(Tensor::new(&rec.shape, data)?)
}

pub fn load<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let manifest = Manifest::parse(path, &text)?;
    let config = RunConfig::parse(&manifest.model).map_err(|e| CliError::checkpoint(path, format!("model config: {e}")))?;
    let mut store = ParamStore::<T>::new();
    let model = Model::new(&mut store, &config.model)?;
    let names: Vec<&str> = store.iter().map(|p| p.name.as_str()).collect();
    let recorded: Vec<&str> = manifest.tensors.iter().map(|t| t.name.as_str()).collect();
    if names != recorded {
        let missing = names.iter().find(|n| !recorded.contains(n));
        let extra = recorded.iter().find(|n| !names.contains(n));
        return Err(CliError::checkpoint(
            path,
            format!("tensor names differ from the model (missing {missing:?}, unexpected {extra:?})"),
        ));
    }
    let mut offset = 0;
    for (rec, p) in manifest.tensors.iter().zip(store.iter()) {
        if rec.shape != p.tensor.shape() {
            return Err(CliError::checkpoint(
                path,
                format!("tensor {}: shape {:?}, model expects {:?}", rec.name, rec.shape, p.tensor.shape()),
            ));
        }
        if rec.offset != offset {
            return Err(CliError::checkpoint(path, format!("tensor {}: offset {} should be {offset}", rec.name, rec.offset)));
        }
        offset += rec.byte_len();
    }
    let weights = read_blob(&sibling(path, &manifest.blob), offset)?;
    let shadows = read_blob(&sibling(path, &manifest.ema_blob), offset)?;
    let ids: Vec<_> = store.ids().collect();
    for (rec, id) in manifest.tensors.iter().zip(ids) {
        let tensor = decode(&weights, rec)?;
        let shadow = decode(&shadows, rec)?;
        store.set(id, tensor)?;
        let p = store.get_mut(id);
        if p.trainable {
            p.ema_shadow = Some(shadow);
        }
    }
    Ok(Checkpoint {
        config,
        step: manifest.step,
        model,
        store,
    })
}
