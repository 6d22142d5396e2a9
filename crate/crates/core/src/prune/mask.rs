//! Binary keep/drop masks, their algebra, and the mask file format.
//!
//! A mask directory holds `manifest.json` (`{provenance, target_sparsity,
//! matrices: [{name, shape, sparsity, offset, n_words}]}`) and `mask.bits`:
//! per matrix, row-major bits packed into little-endian 64-bit words,
//! LSB-first within a word, each matrix starting on a word boundary.
//!
//! Only attention projections and FFN matrices are maskable; embeddings,
//! the unembedding and norm parameters never are.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{LayerWeights, ModelCheckpoint};
use crate::error::{Error, Result};
use crate::prune::calibration::LinearSite;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    AttnQ,
    AttnK,
    AttnV,
    AttnO,
    Fc1,
    Fc2,
}

impl MatrixKind {
    pub const ALL: [MatrixKind; 6] = [
        MatrixKind::AttnQ,
        MatrixKind::AttnK,
        MatrixKind::AttnV,
        MatrixKind::AttnO,
        MatrixKind::Fc1,
        MatrixKind::Fc2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MatrixKind::AttnQ => "attn_q",
            MatrixKind::AttnK => "attn_k",
            MatrixKind::AttnV => "attn_v",
            MatrixKind::AttnO => "attn_o",
            MatrixKind::Fc1 => "fc1",
            MatrixKind::Fc2 => "fc2",
        }
    }

    /// Where this matrix reads its input (for calibration lookups).
    pub fn site(self) -> LinearSite {
        match self {
            MatrixKind::AttnQ | MatrixKind::AttnK | MatrixKind::AttnV => LinearSite::AttnQkv,
            MatrixKind::AttnO => LinearSite::AttnOut,
            MatrixKind::Fc1 => LinearSite::Fc1,
            MatrixKind::Fc2 => LinearSite::Fc2,
        }
    }

    pub fn tensor_name(self, layer: usize) -> String {
        match self {
            MatrixKind::AttnQ => format!("layers.{layer}.attn.q"),
            MatrixKind::AttnK => format!("layers.{layer}.attn.k"),
            MatrixKind::AttnV => format!("layers.{layer}.attn.v"),
            MatrixKind::AttnO => format!("layers.{layer}.attn.o"),
            MatrixKind::Fc1 => format!("layers.{layer}.ffn.fc1"),
            MatrixKind::Fc2 => format!("layers.{layer}.ffn.fc2"),
        }
    }

    pub fn of(self, layer: &LayerWeights) -> &Matrix {
        match self {
            MatrixKind::AttnQ => &layer.attn_q,
            MatrixKind::AttnK => &layer.attn_k,
            MatrixKind::AttnV => &layer.attn_v,
            MatrixKind::AttnO => &layer.attn_o,
            MatrixKind::Fc1 => &layer.fc1,
            MatrixKind::Fc2 => &layer.fc2,
        }
    }

    pub fn of_mut(self, layer: &mut LayerWeights) -> &mut Matrix {
        match self {
            MatrixKind::AttnQ => &mut layer.attn_q,
            MatrixKind::AttnK => &mut layer.attn_k,
            MatrixKind::AttnV => &mut layer.attn_v,
            MatrixKind::AttnO => &mut layer.attn_o,
            MatrixKind::Fc1 => &mut layer.fc1,
            MatrixKind::Fc2 => &mut layer.fc2,
        }
    }
}

/// Row-major bitset over one weight matrix; bit set = weight kept.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskMatrix {
    rows: usize,
    cols: usize,
    words: Vec<u64>,
}

impl MaskMatrix {
    pub fn filled(rows: usize, cols: usize, keep: bool) -> Self {
        let n_bits = rows * cols;
        let n_words = n_bits.div_ceil(64);
        let mut words = vec![if keep { u64::MAX } else { 0 }; n_words];
        if keep && !n_bits.is_multiple_of(64) {
            // Zero the tail bits so population counts stay exact.
            let last = words.len() - 1;
            words[last] = (1u64 << (n_bits % 64)) - 1;
        }
        MaskMatrix { rows, cols, words }
    }

    pub fn from_words(rows: usize, cols: usize, words: Vec<u64>) -> Result<Self> {
        let expected = (rows * cols).div_ceil(64);
        if words.len() != expected {
            return Err(Error::ShapeMismatch {
                name: "mask words".into(),
                expected: vec![expected],
                got: vec![words.len()],
            });
        }
        let n_bits = rows * cols;
        if !n_bits.is_multiple_of(64) && !words.is_empty() {
            let tail = words[words.len() - 1] >> (n_bits % 64);
            if tail != 0 {
                return Err(Error::Invalid("mask tail bits set past matrix end".into()));
            }
        }
        Ok(MaskMatrix { rows, cols, words })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        let idx = r * self.cols + c;
        self.words[idx / 64] >> (idx % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, keep: bool) {
        let idx = r * self.cols + c;
        if keep {
            self.words[idx / 64] |= 1u64 << (idx % 64);
        } else {
            self.words[idx / 64] &= !(1u64 << (idx % 64));
        }
    }

    pub fn kept(&self) -> u64 {
        self.words.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    pub fn total(&self) -> u64 {
        (self.rows * self.cols) as u64
    }

    pub fn sparsity(&self) -> f64 {
        1.0 - self.kept() as f64 / self.total() as f64
    }

    pub fn same_shape(&self, other: &MaskMatrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn and(&self, other: &MaskMatrix) -> MaskMatrix {
        debug_assert!(self.same_shape(other));
        MaskMatrix {
            rows: self.rows,
            cols: self.cols,
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a & b)
                .collect(),
        }
    }

    pub fn intersection_count(&self, other: &MaskMatrix) -> u64 {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| u64::from((a & b).count_ones()))
            .sum()
    }

    pub fn union_count(&self, other: &MaskMatrix) -> u64 {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| u64::from((a | b).count_ones()))
            .sum()
    }

    /// True when every kept weight of `other` is also kept here.
    pub fn contains(&self, other: &MaskMatrix) -> bool {
        self.words
            .iter()
            .zip(&other.words)
            .all(|(a, b)| b & !a == 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneMask {
    pub matrices: BTreeMap<(usize, MatrixKind), MaskMatrix>,
    pub target_sparsity: f64,
    pub provenance: String,
}

impl PruneMask {
    pub fn achieved_sparsity(&self) -> f64 {
        let kept: u64 = self.matrices.values().map(MaskMatrix::kept).sum();
        let total: u64 = self.matrices.values().map(MaskMatrix::total).sum();
        1.0 - kept as f64 / total as f64
    }

    pub fn same_shapes(&self, other: &PruneMask) -> bool {
        self.matrices.len() == other.matrices.len()
            && self
                .matrices
                .iter()
                .all(|(key, m)| other.matrices.get(key).is_some_and(|o| m.same_shape(o)))
    }

    pub fn validate_against(&self, model: &ModelCheckpoint) -> Result<()> {
        for layer in 0..model.config.n_layers {
            for kind in MatrixKind::ALL {
                let weights = kind.of(&model.layers[layer]);
                let mask = self.matrices.get(&(layer, kind)).ok_or_else(|| {
                    Error::Invalid(format!("mask missing {}", kind.tensor_name(layer)))
                })?;
                if [mask.rows(), mask.cols()] != weights.shape() {
                    return Err(Error::ShapeMismatch {
                        name: kind.tensor_name(layer),
                        expected: weights.shape().to_vec(),
                        got: vec![mask.rows(), mask.cols()],
                    });
                }
            }
        }
        if self.matrices.len() != model.config.n_layers * MatrixKind::ALL.len() {
            return Err(Error::Invalid("mask covers extra matrices".into()));
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut blob: Vec<u8> = Vec::new();
        let mut entries = Vec::new();
        for ((layer, kind), m) in &self.matrices {
            let offset = blob.len() as u64;
            for w in m.words() {
                blob.extend_from_slice(&w.to_le_bytes());
            }
            entries.push(MaskEntry {
                name: kind.tensor_name(*layer),
                shape: vec![m.rows(), m.cols()],
                sparsity: m.sparsity(),
                offset,
                n_words: m.words().len() as u64,
            });
        }
        let manifest = MaskManifest {
            provenance: self.provenance.clone(),
            target_sparsity: self.target_sparsity,
            matrices: entries,
        };
        let manifest_path = dir.join("manifest.json");
        fs::write(
            &manifest_path,
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )
        .map_err(|e| Error::io(&manifest_path, e))?;
        let bits_path = dir.join("mask.bits");
        fs::write(&bits_path, blob).map_err(|e| Error::io(&bits_path, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: MaskManifest = serde_json::from_str(&text)
            .map_err(|e| Error::corrupt(&manifest_path, e.to_string()))?;
        let bits_path = dir.join("mask.bits");
        let blob = fs::read(&bits_path).map_err(|e| Error::io(&bits_path, e))?;

        let mut matrices = BTreeMap::new();
        let mut running = 0u64;
        for entry in &manifest.matrices {
            let key = parse_tensor_name(&entry.name).ok_or_else(|| {
                Error::corrupt(&manifest_path, format!("bad name {}", entry.name))
            })?;
            if entry.shape.len() != 2 {
                return Err(Error::corrupt(
                    &manifest_path,
                    format!("{}: mask shapes are 2-d", entry.name),
                ));
            }
            if entry.offset != running {
                return Err(Error::corrupt(
                    &manifest_path,
                    format!("{}: offset {} leaves a gap", entry.name, entry.offset),
                ));
            }
            let start = entry.offset as usize;
            let end = start + entry.n_words as usize * 8;
            if end > blob.len() {
                return Err(Error::corrupt(&bits_path, "bitset blob truncated"));
            }
            let words: Vec<u64> = blob[start..end]
                .chunks_exact(8)
                .map(|c| u64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
                .collect();
            let m = MaskMatrix::from_words(entry.shape[0], entry.shape[1], words)?;
            if matrices.insert(key, m).is_some() {
                return Err(Error::corrupt(
                    &manifest_path,
                    format!("duplicate matrix {}", entry.name),
                ));
            }
            running = end as u64;
        }
        if running != blob.len() as u64 {
            return Err(Error::corrupt(&bits_path, "trailing bytes in bitset blob"));
        }
        Ok(PruneMask {
            matrices,
            target_sparsity: manifest.target_sparsity,
            provenance: manifest.provenance,
        })
    }
}

fn parse_tensor_name(name: &str) -> Option<(usize, MatrixKind)> {
    let rest = name.strip_prefix("layers.")?;
    let (layer, tail) = rest.split_once('.')?;
    let layer: usize = layer.parse().ok()?;
    let kind = match tail {
        "attn.q" => MatrixKind::AttnQ,
        "attn.k" => MatrixKind::AttnK,
        "attn.v" => MatrixKind::AttnV,
        "attn.o" => MatrixKind::AttnO,
        "ffn.fc1" => MatrixKind::Fc1,
        "ffn.fc2" => MatrixKind::Fc2,
        _ => return None,
    };
    Some((layer, kind))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskManifest {
    provenance: String,
    target_sparsity: f64,
    matrices: Vec<MaskEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskEntry {
    name: String,
    shape: Vec<usize>,
    sparsity: f64,
    offset: u64,
    n_words: u64,
}

/// New checkpoint with dropped weights zeroed; the original is untouched.
pub fn apply_mask(model: &ModelCheckpoint, mask: &PruneMask) -> Result<ModelCheckpoint> {
    mask.validate_against(model)?;
    let mut pruned = model.clone();
    for ((layer, kind), m) in &mask.matrices {
        let weights = kind.of_mut(&mut pruned.layers[*layer]);
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                if !m.get(r, c) {
                    weights.set(r, c, 0.0);
                }
            }
        }
    }
    Ok(pruned)
}

fn require_same_shapes(a: &PruneMask, b: &PruneMask) -> Result<()> {
    if !a.same_shapes(b) {
        return Err(Error::Invalid("mask shapes differ".into()));
    }
    Ok(())
}

fn iou(intersection: u64, union: u64) -> f64 {
    if union == 0 {
        // Empty-over-empty: both masks keep nothing in this scope.
        1.0
    } else {
        intersection as f64 / union as f64
    }
}

pub fn mask_iou_global(a: &PruneMask, b: &PruneMask) -> Result<f64> {
    require_same_shapes(a, b)?;
    let mut inter = 0u64;
    let mut uni = 0u64;
    for (key, ma) in &a.matrices {
        let mb = &b.matrices[key];
        inter += ma.intersection_count(mb);
        uni += ma.union_count(mb);
    }
    Ok(iou(inter, uni))
}

pub fn mask_iou_per_layer(a: &PruneMask, b: &PruneMask) -> Result<Vec<(usize, f64)>> {
    require_same_shapes(a, b)?;
    let mut per_layer: BTreeMap<usize, (u64, u64)> = BTreeMap::new();
    for ((layer, kind), ma) in &a.matrices {
        let mb = &b.matrices[&(*layer, *kind)];
        let slot = per_layer.entry(*layer).or_insert((0, 0));
        slot.0 += ma.intersection_count(mb);
        slot.1 += ma.union_count(mb);
    }
    Ok(per_layer
        .into_iter()
        .map(|(layer, (i, u))| (layer, iou(i, u)))
        .collect())
}

pub fn mask_iou_per_kind(a: &PruneMask, b: &PruneMask) -> Result<BTreeMap<MatrixKind, f64>> {
    require_same_shapes(a, b)?;
    let mut per_kind: BTreeMap<MatrixKind, (u64, u64)> = BTreeMap::new();
    for ((layer, kind), ma) in &a.matrices {
        let mb = &b.matrices[&(*layer, *kind)];
        let slot = per_kind.entry(*kind).or_insert((0, 0));
        slot.0 += ma.intersection_count(mb);
        slot.1 += ma.union_count(mb);
    }
    Ok(per_kind
        .into_iter()
        .map(|(kind, (i, u))| (kind, iou(i, u)))
        .collect())
}

/// Elementwise AND of all masks: the alpha-subnet.
pub fn intersect_masks(masks: &[PruneMask]) -> Result<PruneMask> {
    if masks.len() < 2 {
        return Err(Error::Invalid("need at least 2 masks to intersect".into()));
    }
    for m in &masks[1..] {
        require_same_shapes(&masks[0], m)?;
    }
    let mut matrices = masks[0].matrices.clone();
    for other in &masks[1..] {
        for (key, m) in &mut matrices {
            *m = m.and(&other.matrices[key]);
        }
    }
    let target = masks
        .iter()
        .map(|m| m.target_sparsity)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(PruneMask {
        matrices,
        target_sparsity: target,
        provenance: "alpha-subnet".into(),
    })
}
