//! Parameter checkpoint container.
//!
//! ```text
//! "NATCKPT1" | u32 LE header length | JSON header | f32 LE tensor data | SHA-256
//! ```
//!
//! The header holds the architecture, the epoch counter and the tensor
//! names and shapes in storage order. The trailing digest covers every
//! preceding byte.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Arch, TaggerParams, Tensor};
use crate::error::{NatError, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NATCKPT1";

#[derive(Serialize, Deserialize)]
struct Header {
    arch: Arch,
    epoch: u64,
    tensors: Vec<TensorHeader>,
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

pub fn checkpoint_bytes<T: Scalar>(params: &TaggerParams<T>) -> Vec<u8> {
    let header = Header {
        arch: params.arch.clone(),
        epoch: params.epoch,
        tensors: params
            .tensors
            .iter()
            .map(|t| TensorHeader {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 4 * params.n_parameters() + 32);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in &params.tensors {
        for v in &t.data {
            out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn write_checkpoint<T: Scalar>(params: &TaggerParams<T>, mut w: impl Write) -> std::io::Result<()> {
    w.write_all(&checkpoint_bytes(params))
}

pub fn parse_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<TaggerParams<T>> {
    let bad = |m: &str| NatError::Checkpoint(m.to_string());
    if bytes.len() < 8 + 4 + 32 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch"));
    }
    let hlen = u32::from_le_bytes(body[8..12].try_into().unwrap()) as usize;
    let json = body.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| bad(&format!("header: {e}")))?;
    let mut data = &body[12 + hlen..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for th in header.tensors {
        let n: usize = th.shape.iter().product();
        if data.len() < 4 * n {
            return Err(bad(&format!("truncated data for `{}`", th.name)));
        }
        let (chunk, rest) = data.split_at(4 * n);
        data = rest;
        tensors.push(Tensor {
            name: th.name,
            shape: th.shape,
            data: chunk
                .chunks_exact(4)
                .map(|b| T::c(f32::from_le_bytes(b.try_into().unwrap()) as f64))
                .collect(),
        });
    }
    if !data.is_empty() {
        return Err(bad("trailing bytes after tensor data"));
    }
    let params = TaggerParams {
        arch: header.arch,
        tensors,
        epoch: header.epoch,
    };
    params.check_shapes()?;
    Ok(params)
}

pub fn read_checkpoint<T: Scalar>(mut r: impl Read) -> Result<TaggerParams<T>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| NatError::Checkpoint(e.to_string()))?;
    parse_checkpoint(&bytes)
}

pub fn save_checkpoint<T: Scalar>(params: &TaggerParams<T>, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(params)).map_err(|e| NatError::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<TaggerParams<T>> {
    let bytes = std::fs::read(path).map_err(|e| NatError::io(path, e))?;
    parse_checkpoint(&bytes)
}
