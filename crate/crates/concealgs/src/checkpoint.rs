//! Decoder checkpoints.
//!
//! Layout: the 8 magic bytes `CGSDEC01`, a little-endian `u32` manifest
//! length, the JSON manifest, then every parameter tensor as little-endian
//! `f32` in manifest order.

use std::fs;
use std::path::Path;

use concealgs_core::autodiff::Tensor;
use concealgs_core::decoder::DecoderNet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_bytes;

pub const MAGIC: &[u8; 8] = b"CGSDEC01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub width: usize,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

fn manifest_of(net: &DecoderNet<f32>) -> Manifest {
    let tensors = net
        .blocks()
        .iter()
        .zip(net.params().chunks(2))
        .flat_map(|(b, p)| {
            [
                TensorEntry {
                    name: format!("{}.weight", b.name),
                    shape: p[0].shape().to_vec(),
                },
                TensorEntry {
                    name: format!("{}.bias", b.name),
                    shape: p[1].shape().to_vec(),
                },
            ]
        })
        .collect();
    Manifest {
        width: net.width(),
        tensors,
    }
}

pub fn encode_decoder(net: &DecoderNet<f32>) -> Result<Vec<u8>> {
    let manifest = serde_json::to_vec(&manifest_of(net))?;
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest);
    for t in net.params() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_decoder(bytes: &[u8]) -> std::result::Result<DecoderNet<f32>, String> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err("not a decoder checkpoint (bad magic)".into());
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = &bytes[12..];
    if body.len() < len {
        return Err("truncated manifest".into());
    }
    let manifest: Manifest =
        serde_json::from_slice(&body[..len]).map_err(|e| format!("manifest: {e}"))?;
    let mut raw = body[len..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    let mut params = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        let n: usize = entry.shape.iter().product();
        let data: Vec<f32> = raw.by_ref().take(n).collect();
        if data.len() != n {
            return Err(format!("truncated data in {}", entry.name));
        }
        params.push(Tensor::new(&entry.shape, data).map_err(|e| e.to_string())?);
    }
    if raw.next().is_some() || !body[len..].len().is_multiple_of(4) {
        return Err("trailing bytes after the last tensor".into());
    }
    let net = DecoderNet::from_params(manifest.width, params).map_err(|e| e.to_string())?;
    if manifest_of(&net) != manifest {
        return Err("manifest names do not match the architecture".into());
    }
    Ok(net)
}

pub fn save_decoder(path: &Path, net: &DecoderNet<f32>) -> Result<()> {
    write_bytes(path, &encode_decoder(net)?)
}

pub fn load_decoder(path: &Path) -> Result<DecoderNet<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_decoder(&bytes).map_err(|m| Error::format(path, m))
}
