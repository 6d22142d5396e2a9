//! Pruning scores and row-wise top-k mask extraction.
//!
//! Wanda score: `S_ij = |W_ij| * ||X_j||_2`, magnitude uses `|W_ij|` alone,
//! random assigns seeded priorities. The comparison group is each output
//! row: within every row the `ceil((1 - sparsity) * in_features)` highest
//! scores are kept, ties broken toward the lower column index. Keep counts
//! nest across sparsities, so masks at growing sparsity are subsets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::checkpoint::ModelCheckpoint;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Matrix;

use super::calibration::CalibrationStats;
use super::mask::{MaskMatrix, MatrixKind, PruneMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Wanda,
    Magnitude,
    Random,
}

impl ScoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::Wanda => "wanda",
            ScoreKind::Magnitude => "magnitude",
            ScoreKind::Random => "random",
        }
    }
}

/// Row-major Wanda scores for one weight matrix.
pub fn wanda_scores(weights: &Matrix, input_norms: &[f64]) -> Result<Vec<f64>> {
    if input_norms.len() != weights.cols() {
        return Err(Error::ShapeMismatch {
            name: "wanda input norms".into(),
            expected: vec![weights.cols()],
            got: vec![input_norms.len()],
        });
    }
    let mut scores = Vec::with_capacity(weights.rows() * weights.cols());
    for r in 0..weights.rows() {
        for (c, &norm) in input_norms.iter().enumerate() {
            scores.push(f64::from(weights.get(r, c)).abs() * norm);
        }
    }
    Ok(scores)
}

pub fn magnitude_scores(weights: &Matrix) -> Vec<f64> {
    weights.data().iter().map(|&w| f64::from(w).abs()).collect()
}

/// Keep count per row: `ceil((1 - sparsity) * cols)`, at least 1. The 1e-9
/// nudge compensates sparsity values like 0.3 that are not exact binary
/// fractions.
pub fn keep_count(cols: usize, sparsity: f64) -> usize {
    let k = ((1.0 - sparsity) * cols as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(cols)
}

/// Keep the top `keep` scores of every row; ties keep the lower column.
pub fn row_topk_mask(scores: &[f64], rows: usize, cols: usize, keep: usize) -> MaskMatrix {
    debug_assert_eq!(scores.len(), rows * cols);
    let mut mask = MaskMatrix::filled(rows, cols, false);
    let mut order: Vec<usize> = Vec::with_capacity(cols);
    for r in 0..rows {
        let row = &scores[r * cols..(r + 1) * cols];
        order.clear();
        order.extend(0..cols);
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        for &c in order.iter().take(keep) {
            mask.set(r, c, true);
        }
    }
    mask
}

/// Extract a mask over every maskable matrix of the model.
pub fn score_and_mask(
    model: &ModelCheckpoint,
    kind: ScoreKind,
    stats: Option<&CalibrationStats>,
    sparsity: f64,
    seed: Option<u64>,
) -> Result<PruneMask> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::Config(format!("sparsity {sparsity} outside [0, 1)")));
    }
    if kind == ScoreKind::Wanda && stats.is_none() {
        return Err(Error::Invalid(
            "wanda scoring requires calibration stats".into(),
        ));
    }
    if kind == ScoreKind::Random && seed.is_none() {
        return Err(Error::Invalid("random masks require a seed".into()));
    }

    let mut matrices = BTreeMap::new();
    for layer in 0..model.config.n_layers {
        for mk in MatrixKind::ALL {
            let weights = mk.of(&model.layers[layer]);
            let scores = match kind {
                ScoreKind::Wanda => {
                    let norms = stats
                        .expect("checked above")
                        .input_norms(layer, mk.site())?;
                    wanda_scores(weights, &norms)?
                }
                ScoreKind::Magnitude => magnitude_scores(weights),
                ScoreKind::Random => {
                    // Stream keyed by tensor name: independent of iteration
                    // order, stable across sparsities (nested masks).
                    let mut rng =
                        Rng::seeded_with(seed.expect("checked above"), &mk.tensor_name(layer));
                    (0..weights.len()).map(|_| rng.next_f64()).collect()
                }
            };
            let keep = keep_count(weights.cols(), sparsity);
            matrices.insert(
                (layer, mk),
                row_topk_mask(&scores, weights.rows(), weights.cols(), keep),
            );
        }
    }
    Ok(PruneMask {
        matrices,
        target_sparsity: sparsity,
        provenance: kind.as_str().to_string(),
    })
}
