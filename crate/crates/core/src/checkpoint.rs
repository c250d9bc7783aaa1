//! Versioned parameter container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"DFCK" | version: u32 | manifest_len: u64 | manifest JSON
//! n_tensors: u32
//! per tensor: name_len: u32 | name (UTF-8) | ndim: u32 | dims: u64 * ndim | f32 data
//! ```
//!
//! The manifest records the model configuration, the variant and the
//! tokenizer, so a checkpoint is self-describing. Loading rebuilds the model
//! from the manifest and insists every tensor name and shape matches.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{Model, ModelConfig, Variant};
use crate::nn::Module;
use crate::text::{AnyTokenizer, TokenizerKind, Tokenizer, Vocabulary};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Caps that keep a corrupt header from triggering huge allocations.
const MAX_MANIFEST_BYTES: u64 = 64 << 20;
const MAX_NAME_BYTES: u32 = 4096;
const MAX_NDIM: u32 = 8;

/// Training bookkeeping stored next to the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub seed: u64,
    pub epoch: usize,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub variant: Variant,
    pub config: ModelConfig,
    pub tokenizer: TokenizerKind,
    /// Vocabulary in id order, specials included.
    pub vocab: Vec<String>,
    pub training: TrainingInfo,
}

/// A fully restored checkpoint.
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub model: Model<f32>,
    pub tokenizer: AnyTokenizer,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(
    mut out: W,
    model: &Model<f32>,
    tokenizer: &AnyTokenizer,
    training: TrainingInfo,
) -> Result<()> {
    let manifest = CheckpointManifest {
        variant: model.variant(),
        config: model.config().clone(),
        tokenizer: tokenizer.kind(),
        vocab: tokenizer.vocab().tokens().to_vec(),
        training,
    };
    let json = serde_json::to_vec(&manifest)?;
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;

    let params = model.params();
    out.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, p) in &params {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(p.value.ndim() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut bytes = Vec::with_capacity(p.value.len() * 4);
        for &v in p.value.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&bytes)?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &Model<f32>,
    tokenizer: &AnyTokenizer,
    training: TrainingInfo,
) -> Result<()> {
    let file = File::create(path.as_ref())?;
    write_checkpoint(BufWriter::new(file), model, tokenizer, training)
}

fn read_array<const N: usize>(r: &mut impl Read, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| bad(format!("truncated while reading {what}: {e}")))?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r, what)?))
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r, what)?))
}

/// Reads only the header and manifest.
pub fn read_manifest<R: Read>(r: &mut R) -> Result<CheckpointManifest> {
    let magic: [u8; 4] = read_array(r, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let version = read_u32(r, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let len = read_u64(r, "manifest length")?;
    if len > MAX_MANIFEST_BYTES {
        return Err(bad(format!("manifest of {len} bytes is implausible")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json).map_err(|e| bad(format!("truncated manifest: {e}")))?;
    serde_json::from_slice(&json).map_err(|e| bad(format!("malformed manifest: {e}")))
}

/// Reads a checkpoint, rebuilding the model from its manifest. With
/// `expected` set, a different recorded variant is an error.
pub fn read_checkpoint<R: Read>(mut r: R, expected: Option<Variant>) -> Result<Checkpoint> {
    let manifest = read_manifest(&mut r)?;
    if let Some(want) = expected {
        if want != manifest.variant {
            return Err(bad(format!(
                "checkpoint holds variant {}, but {want} was requested",
                manifest.variant
            )));
        }
    }
    let vocab = Vocabulary::from_tokens(&manifest.vocab)?;
    let tokenizer = AnyTokenizer::new(manifest.tokenizer, vocab)?;
    let mut model = Model::<f32>::new(manifest.config.clone(), manifest.variant, 0)
        .map_err(|e| bad(format!("manifest config is invalid: {e}")))?;

    let count = read_u32(&mut r, "tensor count")? as usize;
    let mut params = model.params_mut();
    if count != params.len() {
        return Err(bad(format!(
            "checkpoint has {count} tensors, the {} model expects {}",
            manifest.variant,
            params.len()
        )));
    }
    for (want_name, p) in params.iter_mut() {
        let name_len = read_u32(&mut r, "name length")?;
        if name_len > MAX_NAME_BYTES {
            return Err(bad("tensor name too long"));
        }
        let mut name = vec![0u8; name_len as usize];
        r.read_exact(&mut name).map_err(|e| bad(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8"))?;
        if &name != want_name {
            return Err(bad(format!("expected tensor {want_name}, found {name}")));
        }
        let ndim = read_u32(&mut r, "rank")?;
        if ndim > MAX_NDIM {
            return Err(bad(format!("tensor {name} has rank {ndim}")));
        }
        let mut dims = Vec::with_capacity(ndim as usize);
        for _ in 0..ndim {
            dims.push(read_u64(&mut r, "dimension")? as usize);
        }
        if dims != p.value.shape() {
            return Err(bad(format!(
                "tensor {name} has shape {dims:?}, model expects {:?}",
                p.value.shape()
            )));
        }
        let mut bytes = vec![0u8; p.value.len() * 4];
        r.read_exact(&mut bytes).map_err(|e| bad(format!("truncated data for {name}: {e}")))?;
        for (v, chunk) in p.value.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().expect("chunks are 4 bytes"));
        }
        if p.value.iter().any(|v| !v.is_finite()) {
            return Err(bad(format!("tensor {name} holds non-finite values")));
        }
    }
    drop(params);
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes after the last tensor"));
    }
    Ok(Checkpoint { manifest, model, tokenizer })
}

pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<Variant>) -> Result<Checkpoint> {
    let file = File::open(path.as_ref())?;
    read_checkpoint(BufReader::new(file), expected)
}
