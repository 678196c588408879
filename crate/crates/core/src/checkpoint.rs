//! Self-describing model checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! b"FLOWCKPT"              magic
//! u32                      format version
//! u64                      header length H
//! H bytes                  JSON header: config, scaler, step, tensor names and shapes
//! 8 · Σ|tensor| bytes      f64 payload, tensors in header order, row-major
//! u32                      CRC-32 of everything after the magic
//! ```
//!
//! Saving the same state twice yields identical bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::MinMaxScaler;
use crate::error::CheckpointError;
use crate::models::{ModelConfig, ModelParams, ModelState};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"FLOWCKPT";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    scaler: Option<MinMaxScaler>,
    step: u64,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

fn corrupt(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Corrupt(msg.into())
}

pub fn to_bytes(state: &ModelState) -> Vec<u8> {
    let named = state.params.named();
    let header = Header {
        config: state.config.clone(),
        scaler: state.scaler,
        step: state.step,
        tensors: named
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
    let payload_len: usize = named.iter().map(|(_, t)| t.len() * 8).sum();

    let mut out = Vec::with_capacity(MAGIC.len() + 16 + json.len() + payload_len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &named {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out[MAGIC.len()..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelState, CheckpointError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let body = &bytes[MAGIC.len()..];
    if body.len() < 4 + 8 + 4 {
        return Err(corrupt("file truncated"));
    }
    let version = u32::from_le_bytes(body[..4].try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let (content, crc) = body.split_at(body.len() - 4);
    if crc32fast::hash(content) != u32::from_le_bytes(crc.try_into().unwrap()) {
        return Err(corrupt("checksum mismatch"));
    }

    let header_len = u64::from_le_bytes(content[4..12].try_into().unwrap());
    let rest = &content[12..];
    let header_len = usize::try_from(header_len)
        .ok()
        .filter(|&h| h <= rest.len())
        .ok_or_else(|| corrupt("header length exceeds file"))?;
    let header: Header =
        serde_json::from_slice(&rest[..header_len]).map_err(|e| corrupt(format!("header: {e}")))?;
    header
        .config
        .validate()
        .map_err(|e| corrupt(format!("stored config: {e}")))?;
    let mut payload = &rest[header_len..];

    let template = ModelParams::zeros(&header.config);
    if template.named().len() != header.tensors.len() {
        return Err(corrupt(
            "tensor count does not match the stored architecture",
        ));
    }
    let mut entries = header.tensors.iter();
    let params = template.try_map(&mut |name, t| {
        let e = entries.next().expect("counts checked");
        if e.name != name || e.shape != t.shape() {
            return Err(corrupt(format!(
                "tensor {} {:?} does not match architecture slot {name} {:?}",
                e.name,
                e.shape,
                t.shape()
            )));
        }
        let n = t.len() * 8;
        if payload.len() < n {
            return Err(corrupt(format!("payload ends inside tensor {name}")));
        }
        let (chunk, tail) = payload.split_at(n);
        payload = tail;
        let data = chunk
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Tensor::new(t.shape().to_vec(), data).map_err(|e| corrupt(e.to_string()))
    })?;
    if !payload.is_empty() {
        return Err(corrupt(format!("{} trailing payload bytes", payload.len())));
    }
    Ok(ModelState {
        config: header.config,
        params,
        scaler: header.scaler,
        step: header.step,
    })
}

/// Writes atomically: a sibling temporary file is renamed over `path`.
pub fn save(state: &ModelState, path: &Path) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, to_bytes(state)).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn load(path: &Path) -> Result<ModelState, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{LstmConfig, VlstmEConfig};

    fn states() -> Vec<ModelState> {
        let v = ModelConfig::VlstmE(VlstmEConfig {
            encoder_hidden: 5,
            latent_dim: 3,
            decoder_hidden: 4,
            mlp_hidden: vec![6, 2],
            ..Default::default()
        });
        let l = ModelConfig::Lstm(LstmConfig {
            hidden: 7,
            paper_literal_cell: true,
            ..Default::default()
        });
        let mut a = ModelState::init(v, 11).unwrap();
        a.scaler = Some(MinMaxScaler::from_bounds(0.1 + 0.2, 317.0 / 3.0).unwrap());
        a.step = 3400;
        vec![a, ModelState::init(l, 12).unwrap()]
    }

    #[test]
    fn lossless_roundtrip() {
        for s in states() {
            let bytes = to_bytes(&s);
            let back = from_bytes(&bytes).unwrap();
            assert_eq!(back, s);
            assert_eq!(to_bytes(&back), bytes);
        }
    }

    #[test]
    fn damaged_files_are_rejected() {
        let bytes = to_bytes(&states()[0]);
        for cut in [0, 7, 12, 30, bytes.len() / 2, bytes.len() - 1] {
            assert!(from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        assert!(matches!(
            from_bytes(&bytes[..bytes.len() - 9]),
            Err(CheckpointError::Corrupt(_))
        ));

        let mut flipped = bytes.clone();
        let mid = flipped.len() - 100;
        flipped[mid] ^= 1;
        assert!(matches!(
            from_bytes(&flipped),
            Err(CheckpointError::Corrupt(_))
        ));

        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(from_bytes(&magic), Err(CheckpointError::BadMagic)));

        let mut version = bytes;
        version[8] = 9;
        assert!(matches!(
            from_bytes(&version),
            Err(CheckpointError::VersionMismatch {
                found: 9,
                expected: 1
            })
        ));
    }
}
