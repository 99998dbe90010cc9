//! Versioned model artifact.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `CYCLIFE\0` |
//! | 4     | format version, `u32` |
//! | 8     | header length `n`, `u64` |
//! | n     | UTF-8 JSON header |
//! | rest  | `f64` tensor payload |
//!
//! The header carries the architecture, dropout settings, target scale,
//! training window and a tensor manifest of `{name, rows, cols, offset}`
//! entries, with `offset` counted in `f64` elements from the payload start.
//! Network tensors come first in [`TENSOR_NAMES`] order, followed by
//! `scaler.means` and `scaler.stds`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{Architecture, DropoutConfig, Network, TENSOR_NAMES};
use crate::error::{Error, Result};
use crate::features::{Scaler, Window};

pub const ARTIFACT_MAGIC: &[u8; 8] = b"CYCLIFE\0";
pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub network: Network,
    pub scaler: Scaler,
    /// Cycles per unit of network output.
    pub target_scale: f64,
    pub window: Option<Window>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    architecture: Architecture,
    dropout: DropoutConfig,
    target_scale: f64,
    window: Option<Window>,
    tensors: Vec<TensorEntry>,
}

impl ModelArtifact {
    /// Network output scaled back to cycles.
    pub fn to_cycles(&self, output: f64) -> f64 {
        output * self.target_scale
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = &self.network.params;
        let mut entries = Vec::new();
        let mut payload: Vec<&[f64]> = Vec::new();
        let mut offset = 0;
        for ((name, (rows, cols)), data) in TENSOR_NAMES.iter().zip(params.shapes()).zip(params.tensors()) {
            entries.push(TensorEntry { name: name.to_string(), rows, cols, offset });
            payload.push(data);
            offset += data.len();
        }
        for (name, data) in [("scaler.means", &self.scaler.means), ("scaler.stds", &self.scaler.stds)] {
            entries.push(TensorEntry { name: name.into(), rows: data.len(), cols: 1, offset });
            payload.push(data);
            offset += data.len();
        }
        let header = Header {
            architecture: self.network.arch,
            dropout: self.network.dropout,
            target_scale: self.target_scale,
            window: self.window,
            tensors: entries,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + 8 * offset);
        out.extend_from_slice(ARTIFACT_MAGIC);
        out.extend_from_slice(&ARTIFACT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in payload {
            for x in t {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::MalformedArtifact(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != ARTIFACT_MAGIC {
            return Err(bad("missing magic bytes"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != ARTIFACT_VERSION {
            return Err(Error::ArtifactVersionMismatch { found: version, expected: ARTIFACT_VERSION });
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let header_end = 20usize.checked_add(header_len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..header_end])
            .map_err(|e| Error::MalformedArtifact(format!("header: {e}")))?;
        let payload = &bytes[header_end..];
        if !payload.len().is_multiple_of(8) {
            return Err(bad("payload is not a whole number of f64 values"));
        }
        let values: Vec<f64> = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let read = |name: &str, rows: usize, cols: usize| -> Result<Vec<f64>> {
            let e = header
                .tensors
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| Error::MalformedArtifact(format!("missing tensor {name}")))?;
            if (e.rows, e.cols) != (rows, cols) {
                return Err(Error::MalformedArtifact(format!(
                    "tensor {name} is {}x{}, architecture needs {rows}x{cols}",
                    e.rows, e.cols
                )));
            }
            values
                .get(e.offset..e.offset + rows * cols)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| Error::MalformedArtifact(format!("tensor {name} runs past the payload")))
        };

        let mut network = Network::zeros(header.architecture, header.dropout)
            .map_err(|e| Error::MalformedArtifact(e.to_string()))?;
        let shapes = network.params.shapes();
        for ((name, (rows, cols)), dst) in TENSOR_NAMES.iter().zip(shapes).zip(network.params.tensors_mut()) {
            dst.copy_from_slice(&read(name, rows, cols)?);
        }
        let width = header.architecture.input_size;
        let scaler = Scaler { means: read("scaler.means", width, 1)?, stds: read("scaler.stds", width, 1)? };
        Ok(Self { network, scaler, target_scale: header.target_scale, window: header.window })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
