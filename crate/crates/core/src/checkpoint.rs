//! Binary checkpoints: a fixed header, a segment table and little-endian `f64` values.
//!
//! ```text
//! magic "ULCK" | version u32 | kind u32 | vocab u32 | hidden u32 | n_segments u32
//! per segment: name_len u16 | name utf-8 | offset u64 | len u64
//! n_values u64 | values f64 LE
//! ```
//! All integers are little-endian. A JSON sidecar mirrors the header for humans.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelKind};
use crate::scalar::Scalar;
use crate::vector::{Layout, Params, Segment};

pub const MAGIC: &[u8; 4] = b"ULCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub model: ModelKind,
    pub vocab_size: usize,
    pub n_params: usize,
    pub segments: Vec<Segment>,
    pub param_norm: f64,
}

pub fn encode<T: Scalar>(model: &Model<T>) -> Vec<u8> {
    let layout = model.params().layout();
    let mut out = Vec::with_capacity(64 + 8 * layout.len());
    out.extend_from_slice(MAGIC);
    for x in [CHECKPOINT_VERSION, model.kind().code(), model.vocab_size() as u32, model.kind().hidden_dim() as u32] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out.extend_from_slice(&(layout.segments().len() as u32).to_le_bytes());
    for s in layout.segments() {
        out.extend_from_slice(&(s.name.len() as u16).to_le_bytes());
        out.extend_from_slice(s.name.as_bytes());
        out.extend_from_slice(&(s.offset as u64).to_le_bytes());
        out.extend_from_slice(&(s.len as u64).to_le_bytes());
    }
    out.extend_from_slice(&(layout.len() as u64).to_le_bytes());
    for &v in model.params().as_slice() {
        out.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| self.err("truncated checkpoint"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format { path: self.path.to_path_buf(), msg: msg.into() }
    }
}

/// Decodes a checkpoint; `path` is only used in error messages.
pub fn decode<T: Scalar>(bytes: &[u8], path: &Path) -> Result<Model<T>> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(r.err("bad magic"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.err(format!("unsupported checkpoint version {version}")));
    }
    let code = r.u32()?;
    let vocab = r.u32()? as usize;
    let hidden = r.u32()? as usize;
    let kind = match code {
        0 => ModelKind::TabularBigram,
        1 => ModelKind::MlpLm { hidden_dim: hidden },
        c => return Err(r.err(format!("unknown model kind {c}"))),
    };
    let n_seg = r.u32()? as usize;
    let mut segments = Vec::with_capacity(n_seg.min(64));
    for _ in 0..n_seg {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| r.err("segment name is not utf-8"))?.to_string();
        let offset = r.u64()? as usize;
        let len = r.u64()? as usize;
        segments.push(Segment { name, offset, len });
    }
    let layout = Layout::from_segments(segments).map_err(|e| r.err(e.to_string()))?;
    if layout != kind.layout(vocab) {
        return Err(r.err("segment table does not match the model architecture"));
    }
    let n = r.u64()? as usize;
    if n != layout.len() {
        return Err(r.err(format!("value count {n} does not match layout length {}", layout.len())));
    }
    let values = r
        .take(n.checked_mul(8).ok_or_else(|| r.err("value count overflows"))?)?
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect();
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes after values"));
    }
    let params = Params::new(Arc::new(layout), values).map_err(|e| r.err(e.to_string()))?;
    Model::new(kind, vocab, params)
}

pub fn meta<T: Scalar>(model: &Model<T>) -> CheckpointMeta {
    CheckpointMeta {
        version: CHECKPOINT_VERSION,
        model: model.kind(),
        vocab_size: model.vocab_size(),
        n_params: model.params().len(),
        segments: model.params().layout().segments().to_vec(),
        param_norm: model.params().norm().as_f64(),
    }
}

/// Path of the JSON sidecar next to a checkpoint.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the checkpoint and its sidecar; returns both paths.
pub fn save<T: Scalar>(model: &Model<T>, path: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let mut json = serde_json::to_string_pretty(&meta(model)).expect("metadata serialises");
    json.push('\n');
    fs::write(&side, json).map_err(|e| Error::io(&side, e))?;
    Ok((path.to_path_buf(), side))
}

pub fn load<T: Scalar>(path: &Path) -> Result<Model<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
