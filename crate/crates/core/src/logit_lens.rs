//! Decode an intermediate hidden state into a vocabulary distribution
//! through the output norm and unembedding matrix.

use crate::checkpoint::ModelCheckpoint;
use crate::error::{Error, Result};
use crate::fmath;
use crate::forward::apply_norm_f64;

/// `softmax(W_out · LN_out(hidden))` in f64. Entries are strictly positive
/// and sum to 1 up to rounding.
pub fn logit_lens(model: &ModelCheckpoint, hidden: &[f32]) -> Result<Vec<f64>> {
    if hidden.len() != model.config.hidden_dim {
        return Err(Error::ShapeMismatch {
            name: "logit_lens input".into(),
            expected: vec![model.config.hidden_dim],
            got: vec![hidden.len()],
        });
    }
    if !hidden.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("logit_lens input".into()));
    }
    let normed = apply_norm_f64(&model.out_norm, model.config.norm_kind, hidden);
    let logits: Vec<f64> = (0..model.config.vocab_size)
        .map(|v| {
            let row = model.unembed.row(v);
            row.iter()
                .zip(&normed)
                .map(|(&w, &h)| f64::from(w) * h)
                .sum()
        })
        .collect();
    Ok(fmath::softmax(&logits))
}

/// f64 distribution from an f32 logit row; shared by report-level
/// logit-divergence metrics.
pub fn distribution_from_logits(row: &[f32]) -> Vec<f64> {
    let logits: Vec<f64> = row.iter().map(|&v| f64::from(v)).collect();
    fmath::softmax(&logits)
}
