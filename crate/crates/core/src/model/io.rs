//! Model file: magic, version, JSON header, vocabulary hash, shaped
//! little-endian f32 tensors, and a SHA-256 trailer over everything before it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{Calibration, ModelConfig};
use super::tcn::{Tcn, TcnParams};
use super::ModelError;

pub const MODEL_MAGIC: &[u8; 8] = b"DUETTCN\0";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub config: ModelConfig,
    pub calibration: Calibration,
    pub vocab_hash: [u8; 32],
    pub params: TcnParams<f32>,
}

impl SavedModel {
    pub fn into_tcn(self) -> Result<(Tcn<f32>, Calibration), ModelError> {
        Ok((Tcn::new(self.config, self.params)?, self.calibration))
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    calibration: Calibration,
}

pub fn encode_model(m: &SavedModel) -> Result<Vec<u8>, ModelError> {
    m.params.check_shapes(&m.config)?;
    let header = serde_json::to_vec(&Header { config: m.config.clone(), calibration: m.calibration })?;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&m.vocab_hash);
    let shapes = TcnParams::<f32>::shapes(&m.config);
    out.extend_from_slice(&(shapes.len() as u32).to_le_bytes());
    for (shape, data) in shapes.iter().zip(m.params.tensors()) {
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for x in data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| ModelError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Parses a model file. `expected_vocab` rejects models trained against a
/// different vocabulary.
pub fn decode_model(bytes: &[u8], expected_vocab: Option<&[u8; 32]>) -> Result<SavedModel, ModelError> {
    if bytes.len() < MODEL_MAGIC.len() + 4 + 32 {
        return Err(ModelError::Format("file too short".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != trailer {
        return Err(ModelError::Format("checksum mismatch (truncated or corrupted file)".into()));
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(8)? != MODEL_MAGIC {
        return Err(ModelError::Format("not a model file".into()));
    }
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(ModelError::Version { found: version, supported: MODEL_VERSION });
    }
    let hlen = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(hlen)?)?;
    header.config.validate()?;
    let vocab_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    if let Some(want) = expected_vocab {
        if want != &vocab_hash {
            return Err(ModelError::VocabMismatch { expected: hex::encode(want), found: hex::encode(vocab_hash) });
        }
    }
    let shapes = TcnParams::<f32>::shapes(&header.config);
    if r.u32()? as usize != shapes.len() {
        return Err(ModelError::Format("tensor count does not match config".into()));
    }
    let mut params = TcnParams::<f32>::zeros(&header.config);
    for (shape, dst) in shapes.iter().zip(params.tensors_mut()) {
        let ndim = r.u32()? as usize;
        let dims = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        if &dims != shape {
            return Err(ModelError::Format(format!("tensor shape {dims:?}, config expects {shape:?}")));
        }
        let raw = r.take(dst.len() * 4)?;
        for (x, chunk) in dst.iter_mut().zip(raw.chunks_exact(4)) {
            *x = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
    }
    if r.pos != body.len() {
        return Err(ModelError::Format(format!("{} trailing bytes", body.len() - r.pos)));
    }
    if !params.is_finite() {
        return Err(ModelError::Format("non-finite parameter".into()));
    }
    Ok(SavedModel { config: header.config, calibration: header.calibration, vocab_hash, params })
}

/// Writes through a temporary file and renames, so a crash never leaves a
/// partial model behind.
pub fn save_model(path: &Path, m: &SavedModel) -> Result<(), ModelError> {
    let bytes = encode_model(m)?;
    let tmp = path.with_extension("partial");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_model(path: &Path, expected_vocab: Option<&[u8; 32]>) -> Result<SavedModel, ModelError> {
    decode_model(&fs::read(path)?, expected_vocab)
}
