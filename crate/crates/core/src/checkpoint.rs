//! Checkpoint synthesis and the on-disk format.
//!
//! A checkpoint directory holds `manifest.json` plus `weights.bin`:
//!
//! - `manifest.json`: `{config, tensors: [{name, shape, dtype: "f32",
//!   offset, length}]}` with offsets/lengths in bytes into the blob,
//! - `weights.bin`: densely packed row-major little-endian f32, tensors in
//!   manifest order.
//!
//! Tensor names are `embed.weight`, `layers.{l}.ln1.gain[/bias]`,
//! `layers.{l}.attn.{q,k,v,o}`, `layers.{l}.ln2.gain[/bias]`,
//! `layers.{l}.ffn.{fc1,fc2}`, `out_norm.gain[/bias]`, `unembed.weight`.
//! Norm biases exist only for layernorm models.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, NormKind};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Matrix;

/// Gain (and bias, for layernorm) of one normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub gain: Vec<f32>,
    pub bias: Option<Vec<f32>>,
}

impl NormParams {
    fn unit(dim: usize, kind: NormKind) -> Self {
        NormParams {
            gain: vec![1.0; dim],
            bias: match kind {
                NormKind::LayerNorm => Some(vec![0.0; dim]),
                NormKind::RmsNorm => None,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub ln1: NormParams,
    pub attn_q: Matrix,
    pub attn_k: Matrix,
    pub attn_v: Matrix,
    pub attn_o: Matrix,
    pub ln2: NormParams,
    pub fc1: Matrix,
    pub fc2: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    pub embedding: Matrix,
    pub layers: Vec<LayerWeights>,
    pub out_norm: NormParams,
    pub unembed: Matrix,
}

const WEIGHT_STD: f64 = 0.02;

impl ModelCheckpoint {
    /// Deterministic synthetic checkpoint: Gaussian(0, 0.02) weights from the
    /// seeded stream in manifest tensor order, norm gains 1 (biases 0).
    /// Identical `(config, seed)` gives a bit-identical checkpoint.
    pub fn synthesize(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let d = config.hidden_dim;
        let f = config.ffn_dim;
        let v = config.vocab_size;

        let mut gaussian_matrix = |rows: usize, cols: usize| -> Matrix {
            let mut m = Matrix::zeros(rows, cols);
            for val in m.data_mut() {
                *val = rng.gaussian_f32(WEIGHT_STD);
            }
            m
        };

        let embedding = gaussian_matrix(v, d);
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            layers.push(LayerWeights {
                ln1: NormParams::unit(d, config.norm_kind),
                attn_q: gaussian_matrix(d, d),
                attn_k: gaussian_matrix(d, d),
                attn_v: gaussian_matrix(d, d),
                attn_o: gaussian_matrix(d, d),
                ln2: NormParams::unit(d, config.norm_kind),
                fc1: gaussian_matrix(f, d),
                fc2: gaussian_matrix(d, f),
            });
        }
        let out_norm = NormParams::unit(d, config.norm_kind);
        let unembed = gaussian_matrix(v, d);

        Ok(ModelCheckpoint {
            config: config.clone(),
            embedding,
            layers,
            out_norm,
            unembed,
        })
    }

    pub fn digest(&self) -> String {
        self.config.digest()
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.layers.len() != self.config.n_layers {
            return Err(Error::ShapeMismatch {
                name: "layers".into(),
                expected: vec![self.config.n_layers],
                got: vec![self.layers.len()],
            });
        }
        for (name, shape, data) in self.tensor_entries() {
            let expected: usize = shape.iter().product();
            if data.len() != expected {
                return Err(Error::ShapeMismatch {
                    name,
                    expected: shape,
                    got: vec![data.len()],
                });
            }
            if !data.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(name));
            }
        }
        Ok(())
    }

    /// All tensors in canonical manifest order.
    pub fn tensor_entries(&self) -> Vec<(String, Vec<usize>, &[f32])> {
        fn push_norm<'a>(
            out: &mut Vec<(String, Vec<usize>, &'a [f32])>,
            name: String,
            d: usize,
            norm: &'a NormParams,
        ) {
            out.push((format!("{name}.gain"), vec![d], norm.gain.as_slice()));
            if let Some(bias) = &norm.bias {
                out.push((format!("{name}.bias"), vec![d], bias.as_slice()));
            }
        }

        let d = self.config.hidden_dim;
        let mut out: Vec<(String, Vec<usize>, &[f32])> = Vec::new();
        out.push((
            "embed.weight".into(),
            vec![self.config.vocab_size, d],
            self.embedding.data(),
        ));
        for (l, layer) in self.layers.iter().enumerate() {
            push_norm(&mut out, format!("layers.{l}.ln1"), d, &layer.ln1);
            for (suffix, m) in [
                ("q", &layer.attn_q),
                ("k", &layer.attn_k),
                ("v", &layer.attn_v),
                ("o", &layer.attn_o),
            ] {
                out.push((
                    format!("layers.{l}.attn.{suffix}"),
                    m.shape().to_vec(),
                    m.data(),
                ));
            }
            push_norm(&mut out, format!("layers.{l}.ln2"), d, &layer.ln2);
            out.push((
                format!("layers.{l}.ffn.fc1"),
                layer.fc1.shape().to_vec(),
                layer.fc1.data(),
            ));
            out.push((
                format!("layers.{l}.ffn.fc2"),
                layer.fc2.shape().to_vec(),
                layer.fc2.data(),
            ));
        }
        out.push((
            "out_norm.gain".into(),
            vec![d],
            self.out_norm.gain.as_slice(),
        ));
        if let Some(bias) = &self.out_norm.bias {
            out.push(("out_norm.bias".into(), vec![d], bias.as_slice()));
        }
        out.push((
            "unembed.weight".into(),
            vec![self.config.vocab_size, d],
            self.unembed.data(),
        ));
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let mut blob: Vec<u8> = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, data) in self.tensor_entries() {
            let offset = blob.len() as u64;
            for v in data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            tensors.push(TensorMeta {
                name,
                shape,
                dtype: "f32".into(),
                offset,
                length: (data.len() * 4) as u64,
            });
        }
        let manifest = Manifest {
            config: self.config.clone(),
            tensors,
        };
        let manifest_path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
        let blob_path = dir.join("weights.bin");
        fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let manifest_text =
            fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&manifest_text)
            .map_err(|e| Error::corrupt(&manifest_path, e.to_string()))?;
        manifest.config.validate()?;

        let blob_path = dir.join("weights.bin");
        let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;

        // Dense packing in manifest order; any slack or overlap is corruption.
        let mut running: u64 = 0;
        for meta in &manifest.tensors {
            if meta.dtype != "f32" {
                return Err(Error::corrupt(
                    &manifest_path,
                    format!("tensor {}: unsupported dtype {}", meta.name, meta.dtype),
                ));
            }
            let elems: usize = meta.shape.iter().product();
            if meta.length != (elems * 4) as u64 {
                return Err(Error::corrupt(
                    &manifest_path,
                    format!(
                        "tensor {}: shape mismatch, shape {:?} declares {} bytes but manifest length is {}",
                        meta.name,
                        meta.shape,
                        elems * 4,
                        meta.length
                    ),
                ));
            }
            if meta.offset != running {
                return Err(Error::corrupt(
                    &manifest_path,
                    format!(
                        "tensor {}: offset {} leaves a gap at {running}",
                        meta.name, meta.offset
                    ),
                ));
            }
            running += meta.length;
        }
        if running != blob.len() as u64 {
            return Err(Error::corrupt(
                &blob_path,
                format!(
                    "manifest declares {running} bytes but weights.bin holds {}",
                    blob.len()
                ),
            ));
        }

        let mut cursor = ManifestCursor {
            manifest: &manifest,
            blob: &blob,
            manifest_path: &manifest_path,
            next: 0,
        };

        let config = manifest.config.clone();
        let d = config.hidden_dim;
        let f = config.ffn_dim;
        let v = config.vocab_size;
        let has_bias = config.norm_kind == NormKind::LayerNorm;

        let embedding = cursor.matrix("embed.weight", v, d)?;
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let ln1 = cursor.norm(&format!("layers.{l}.ln1"), d, has_bias)?;
            let attn_q = cursor.matrix(&format!("layers.{l}.attn.q"), d, d)?;
            let attn_k = cursor.matrix(&format!("layers.{l}.attn.k"), d, d)?;
            let attn_v = cursor.matrix(&format!("layers.{l}.attn.v"), d, d)?;
            let attn_o = cursor.matrix(&format!("layers.{l}.attn.o"), d, d)?;
            let ln2 = cursor.norm(&format!("layers.{l}.ln2"), d, has_bias)?;
            let fc1 = cursor.matrix(&format!("layers.{l}.ffn.fc1"), f, d)?;
            let fc2 = cursor.matrix(&format!("layers.{l}.ffn.fc2"), d, f)?;
            layers.push(LayerWeights {
                ln1,
                attn_q,
                attn_k,
                attn_v,
                attn_o,
                ln2,
                fc1,
                fc2,
            });
        }
        let out_norm = cursor.norm("out_norm", d, has_bias)?;
        let unembed = cursor.matrix("unembed.weight", v, d)?;
        cursor.finish()?;

        let ckpt = ModelCheckpoint {
            config,
            embedding,
            layers,
            out_norm,
            unembed,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    config: ModelConfig,
    tensors: Vec<TensorMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    length: u64,
}

struct ManifestCursor<'a> {
    manifest: &'a Manifest,
    blob: &'a [u8],
    manifest_path: &'a Path,
    next: usize,
}

impl ManifestCursor<'_> {
    fn take(&mut self, name: &str, shape: &[usize]) -> Result<Vec<f32>> {
        let meta =
            self.manifest.tensors.get(self.next).ok_or_else(|| {
                Error::corrupt(self.manifest_path, format!("missing tensor {name}"))
            })?;
        self.next += 1;
        if meta.name != name {
            return Err(Error::corrupt(
                self.manifest_path,
                format!("expected tensor {name}, found {}", meta.name),
            ));
        }
        if meta.shape != shape {
            return Err(Error::corrupt(
                self.manifest_path,
                format!(
                    "tensor {name}: shape mismatch, expected {:?}, got {:?}",
                    shape, meta.shape
                ),
            ));
        }
        let start = meta.offset as usize;
        let end = start + meta.length as usize;
        let bytes = &self.blob[start..end];
        let mut values = Vec::with_capacity(bytes.len() / 4);
        for chunk in bytes.chunks_exact(4) {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("tensor {name}")));
            }
            values.push(v);
        }
        Ok(values)
    }

    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<Matrix> {
        let data = self.take(name, &[rows, cols])?;
        Matrix::from_vec(rows, cols, data)
    }

    fn norm(&mut self, prefix: &str, dim: usize, has_bias: bool) -> Result<NormParams> {
        let gain = self.take(&format!("{prefix}.gain"), &[dim])?;
        let bias = if has_bias {
            Some(self.take(&format!("{prefix}.bias"), &[dim])?)
        } else {
            None
        };
        Ok(NormParams { gain, bias })
    }

    fn finish(&self) -> Result<()> {
        if self.next != self.manifest.tensors.len() {
            return Err(Error::corrupt(
                self.manifest_path,
                format!(
                    "manifest lists {} tensors, model expects {}",
                    self.manifest.tensors.len(),
                    self.next
                ),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_config() -> ModelConfig {
        ModelConfig::toy(2, 8, 2, 16, 32)
    }

    #[test]
    fn synthesis_is_deterministic() {
        let config = toy_config();
        let a = ModelCheckpoint::synthesize(&config, 7).unwrap();
        let b = ModelCheckpoint::synthesize(&config, 7).unwrap();
        assert_eq!(a, b);
        let c = ModelCheckpoint::synthesize(&config, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = ModelCheckpoint::synthesize(&toy_config(), 7).unwrap();
        ckpt.save(dir.path()).unwrap();
        let back = ModelCheckpoint::load(dir.path()).unwrap();
        assert_eq!(ckpt, back);
    }

    #[test]
    fn save_is_byte_stable() {
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let ckpt = ModelCheckpoint::synthesize(&toy_config(), 7).unwrap();
        ckpt.save(dir1.path()).unwrap();
        ckpt.save(dir2.path()).unwrap();
        for file in ["manifest.json", "weights.bin"] {
            let a = std::fs::read(dir1.path().join(file)).unwrap();
            let b = std::fs::read(dir2.path().join(file)).unwrap();
            assert_eq!(a, b, "{file} differs");
        }
    }

    #[test]
    fn layernorm_checkpoints_carry_biases() {
        let mut config = toy_config();
        config.norm_kind = NormKind::LayerNorm;
        let ckpt = ModelCheckpoint::synthesize(&config, 1).unwrap();
        assert!(ckpt.layers[0].ln1.bias.is_some());
        let dir = tempfile::tempdir().unwrap();
        ckpt.save(dir.path()).unwrap();
        assert_eq!(ModelCheckpoint::load(dir.path()).unwrap(), ckpt);
    }

    #[test]
    fn load_rejects_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = ModelCheckpoint::synthesize(&toy_config(), 7).unwrap();
        ckpt.save(dir.path()).unwrap();
        // Declare [8, 8] for a tensor whose blob really holds 60 floats.
        let manifest_path = dir.path().join("manifest.json");
        let text = std::fs::read_to_string(&manifest_path).unwrap();
        let mut manifest: serde_json::Value = serde_json::from_str(&text).unwrap();
        let t = &mut manifest["tensors"].as_array_mut().unwrap()[1];
        t["shape"] = serde_json::json!([8, 8]);
        t["length"] = serde_json::json!(240);
        std::fs::write(&manifest_path, serde_json::to_string(&manifest).unwrap()).unwrap();
        let err = ModelCheckpoint::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("shape mismatch"), "{err}");
    }

    #[test]
    fn load_rejects_size_disagreement() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = ModelCheckpoint::synthesize(&toy_config(), 7).unwrap();
        ckpt.save(dir.path()).unwrap();
        let blob_path = dir.path().join("weights.bin");
        let mut blob = std::fs::read(&blob_path).unwrap();
        blob.truncate(blob.len() - 4);
        std::fs::write(&blob_path, blob).unwrap();
        assert!(matches!(
            ModelCheckpoint::load(dir.path()),
            Err(Error::Corrupt { .. })
        ));
    }

    #[test]
    fn load_rejects_nan() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = ModelCheckpoint::synthesize(&toy_config(), 7).unwrap();
        ckpt.save(dir.path()).unwrap();
        let blob_path = dir.path().join("weights.bin");
        let mut blob = std::fs::read(&blob_path).unwrap();
        blob[0..4].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&blob_path, blob).unwrap();
        assert!(matches!(
            ModelCheckpoint::load(dir.path()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn load_rejects_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            ModelCheckpoint::load(dir.path()),
            Err(Error::Io { .. })
        ));
    }
}
