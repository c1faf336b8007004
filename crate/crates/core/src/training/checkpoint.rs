//! Binary parameter archives.
//!
//! Layout (little endian): magic `SYNSEMCK`, format version `u32`, manifest
//! length `u64` and JSON manifest bytes, array count `u32`, then per array the
//! name (`u32` length + UTF-8), `rows: u64`, `cols: u64` and `rows·cols` `f64`s.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::ParamStore;

pub const MAGIC: &[u8; 8] = b"SYNSEMCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: ModelConfig,
    pub vocab: Vec<String>,
    pub tree_vocab: Vec<String>,
    pub seed: u64,
    pub step: u64,
    pub epoch: usize,
}

pub fn encode_checkpoint(manifest: &CheckpointManifest, params: &ParamStore) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + 8 * params.num_scalars());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let json = serde_json::to_vec(manifest)?;
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, value) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let (r, c) = value.dim();
        out.extend_from_slice(&(r as u64).to_le_bytes());
        out.extend_from_slice(&(c as u64).to_le_bytes());
        for v in value.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let n = self.u64(what)?;
        usize::try_from(n).map_err(|_| Error::Checkpoint(format!("{what} too large")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointManifest, ParamStore)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("format version {version}, this build reads {FORMAT_VERSION}")));
    }
    let n = r.len("manifest length")?;
    let manifest: CheckpointManifest = serde_json::from_slice(r.take(n, "manifest")?)?;
    let count = r.u32("array count")?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rows = r.len("rows")?;
        let cols = r.len("cols")?;
        let count = rows.checked_mul(cols).ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflows")))?;
        let bytes_needed = count.checked_mul(8).ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflows")))?;
        let raw = r.take(bytes_needed, &name)?;
        let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        if store.find(&name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
        }
        store.insert(name, Array2::from_shape_vec((rows, cols), data).expect("length checked"));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((manifest, store))
}

pub fn save_checkpoint(path: &Path, manifest: &CheckpointManifest, params: &ParamStore) -> Result<()> {
    let bytes = encode_checkpoint(manifest, params)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointManifest, ParamStore)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}

pub fn manifest_for(model: &Model, seed: u64, step: u64, epoch: usize) -> CheckpointManifest {
    CheckpointManifest {
        config: model.config.clone(),
        vocab: model.vocab.tokens().to_vec(),
        tree_vocab: model.tree_vocab.tokens().to_vec(),
        seed,
        step,
        epoch,
    }
}

fn vocab_from(tokens: &[String]) -> Result<Vocabulary> {
    let v = Vocabulary::from_tokens(tokens.iter().map(String::as_str));
    if v.len() != tokens.len() || v.tokens() != tokens {
        return Err(Error::Checkpoint("stored vocabulary is not a valid reserved-first token list".into()));
    }
    Ok(v)
}

pub fn save_model(path: &Path, model: &Model, seed: u64, step: u64, epoch: usize) -> Result<()> {
    save_checkpoint(path, &manifest_for(model, seed, step, epoch), &model.store)
}

pub fn load_model(path: &Path) -> Result<(Model, CheckpointManifest)> {
    let (manifest, store) = load_checkpoint(path)?;
    let model = Model::with_params(
        manifest.config.clone(),
        vocab_from(&manifest.vocab)?,
        vocab_from(&manifest.tree_vocab)?,
        store,
    )?;
    Ok((model, manifest))
}

/// Save-then-load through memory.
pub fn checkpoint_roundtrip(manifest: &CheckpointManifest, params: &ParamStore) -> Result<(CheckpointManifest, ParamStore)> {
    decode_checkpoint(&encode_checkpoint(manifest, params)?)
}
