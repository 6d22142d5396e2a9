//! Activation traces and their binary file format.
//!
//! A trace stores, for each requested `(layer, probe point)`, the hidden
//! states of every token in one sequence. The file format is meant to be
//! easy for external producers (real-model dumps) to write:
//!
//! ```text
//! bytes 0..16   magic "IMATRACE\0v1" padded with NULs to 16 bytes
//! bytes 16..20  u32 little-endian header length N
//! bytes 20..20+N JSON header (UTF-8)
//! rest          raw little-endian f32 blobs, one per header `blobs` entry,
//!               in header order, each rows*cols values row-major
//! ```
//!
//! The JSON header holds `config_digest`, `n_layers`, `hidden_dim`, `ffn_dim`,
//! `vocab_size`, the tagged `sequence` (injected embeddings included; JSON
//! floats round-trip f32 exactly), the `blobs` index `[{layer, probe, rows,
//! cols}]` and optional per-layer `skips`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::ModelCheckpoint;
use crate::error::{Error, Result};
use crate::forward::ProbePoint;
use crate::sequence::TaggedSequence;
use crate::tensor::Matrix;

pub const TRACE_MAGIC: [u8; 16] = *b"IMATRACE\0v1\0\0\0\0\0";

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub config_digest: String,
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub sequence: TaggedSequence,
    pub tensors: BTreeMap<(usize, ProbePoint), Matrix>,
    /// Token indices whose FFN was bypassed, per layer, when a skip policy ran.
    pub skips: Option<Vec<Vec<usize>>>,
}

impl ActivationTrace {
    pub fn n_tokens(&self) -> usize {
        self.sequence.len()
    }

    pub fn get(&self, layer: usize, probe: ProbePoint) -> Option<&Matrix> {
        self.tensors.get(&(layer, probe))
    }

    pub fn require(&self, layer: usize, probe: ProbePoint) -> Result<&Matrix> {
        self.get(layer, probe)
            .ok_or_else(|| Error::Invalid(format!("missing probe ({layer}, {})", probe.as_str())))
    }

    /// Fails when the trace was recorded from a different model config.
    pub fn check_model(&self, model: &ModelCheckpoint) -> Result<()> {
        if self.config_digest != model.digest() {
            return Err(Error::Invalid(format!(
                "trace digest {} does not match model digest {}",
                self.config_digest,
                model.digest()
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_tokens();
        for ((layer, probe), m) in &self.tensors {
            if *layer >= self.n_layers {
                return Err(Error::Invalid(format!(
                    "probe layer {layer} out of range (n_layers {})",
                    self.n_layers
                )));
            }
            // FFN-internal probes live in the up-projected space.
            let want_cols = match probe {
                ProbePoint::PostFc1 | ProbePoint::PostAct => self.ffn_dim,
                _ => self.hidden_dim,
            };
            if m.rows() != n || m.cols() != want_cols {
                return Err(Error::ShapeMismatch {
                    name: format!("trace ({layer}, {})", probe.as_str()),
                    expected: vec![n, want_cols],
                    got: m.shape().to_vec(),
                });
            }
            if !m.all_finite() {
                return Err(Error::NonFinite(format!(
                    "trace ({layer}, {})",
                    probe.as_str()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceHeader {
    config_digest: String,
    n_layers: usize,
    hidden_dim: usize,
    ffn_dim: usize,
    vocab_size: usize,
    sequence: TaggedSequence,
    blobs: Vec<BlobMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    skips: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlobMeta {
    layer: usize,
    probe: ProbePoint,
    rows: usize,
    cols: usize,
}

pub fn save_trace(trace: &ActivationTrace, path: &Path) -> Result<()> {
    trace.validate()?;
    let header = TraceHeader {
        config_digest: trace.config_digest.clone(),
        n_layers: trace.n_layers,
        hidden_dim: trace.hidden_dim,
        ffn_dim: trace.ffn_dim,
        vocab_size: trace.vocab_size,
        sequence: trace.sequence.clone(),
        blobs: trace
            .tensors
            .iter()
            .map(|((layer, probe), m)| BlobMeta {
                layer: *layer,
                probe: *probe,
                rows: m.rows(),
                cols: m.cols(),
            })
            .collect(),
        skips: trace.skips.clone(),
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");

    let mut bytes = Vec::with_capacity(20 + header_json.len());
    bytes.extend_from_slice(&TRACE_MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for m in trace.tensors.values() {
        for v in m.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_trace(path: &Path) -> Result<ActivationTrace> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 {
        return Err(Error::corrupt(path, "file shorter than magic + length"));
    }
    if bytes[..16] != TRACE_MAGIC {
        return Err(Error::corrupt(path, "bad magic"));
    }
    let header_len = u32::from_le_bytes([bytes[16], bytes[17], bytes[18], bytes[19]]) as usize;
    let header_end = 20usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::corrupt(path, "header length exceeds file size"))?;
    let header: TraceHeader = serde_json::from_slice(&bytes[20..header_end])
        .map_err(|e| Error::corrupt(path, format!("header: {e}")))?;

    let mut tensors = BTreeMap::new();
    let mut offset = header_end;
    for blob in &header.blobs {
        let n_bytes = blob.rows * blob.cols * 4;
        let end = offset
            .checked_add(n_bytes)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| {
                Error::corrupt(
                    path,
                    format!("blob ({}, {}) truncated", blob.layer, blob.probe.as_str()),
                )
            })?;
        let mut data = Vec::with_capacity(blob.rows * blob.cols);
        for chunk in bytes[offset..end].chunks_exact(4) {
            data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
        }
        let m = Matrix::from_vec(blob.rows, blob.cols, data)?;
        if tensors.insert((blob.layer, blob.probe), m).is_some() {
            return Err(Error::corrupt(
                path,
                format!("duplicate blob ({}, {})", blob.layer, blob.probe.as_str()),
            ));
        }
        offset = end;
    }
    if offset != bytes.len() {
        return Err(Error::corrupt(
            path,
            format!("{} trailing bytes after blobs", bytes.len() - offset),
        ));
    }

    let trace = ActivationTrace {
        config_digest: header.config_digest,
        n_layers: header.n_layers,
        hidden_dim: header.hidden_dim,
        ffn_dim: header.ffn_dim,
        vocab_size: header.vocab_size,
        sequence: header.sequence,
        tensors,
        skips: header.skips,
    };
    trace.validate()?;
    Ok(trace)
}
