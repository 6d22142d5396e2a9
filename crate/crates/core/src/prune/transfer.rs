//! Mask transfer evaluation: apply a mask extracted from one token source
//! and measure how a target token population degrades under it.

use crate::checkpoint::ModelCheckpoint;
use crate::error::Result;
use crate::forward::{forward, ProbeSet};
use crate::logit_lens::distribution_from_logits;
use crate::metrics::ima::ima_score;
use crate::metrics::similarity::SimilarityMeasure;
use crate::metrics::vocab::kl_divergence;
use crate::sequence::{TagFilter, TaggedSequence};

use super::mask::{apply_mask, PruneMask};

#[derive(Debug, Clone)]
pub struct TransferOptions {
    /// Tokens over which the logit divergence is measured (excluded tokens
    /// are always dropped).
    pub target_filter: TagFilter,
    pub logit_kl: bool,
    /// Also compute the pruned model's IMA score over the sequences.
    pub ima_measure: Option<SimilarityMeasure>,
}

impl Default for TransferOptions {
    fn default() -> Self {
        TransferOptions {
            target_filter: TagFilter::any(),
            logit_kl: true,
            ima_measure: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferReport {
    /// Mean over selected tokens of KL(unpruned distribution || pruned).
    pub mean_logit_kl: Option<f64>,
    pub ima_score: Option<f64>,
    pub n_tokens: usize,
}

pub fn transfer_eval(
    model: &ModelCheckpoint,
    mask: &PruneMask,
    sequences: &[TaggedSequence],
    options: &TransferOptions,
) -> Result<TransferReport> {
    let pruned = apply_mask(model, mask)?;
    let probes = if options.ima_measure.is_some() {
        ProbeSet::residual_stream(model.config.n_layers)
    } else {
        ProbeSet::empty()
    };

    let mut kl_sum = 0.0f64;
    let mut n_tokens = 0usize;
    let mut ima_sum = 0.0f64;
    let mut ima_n = 0usize;
    for seq in sequences {
        let pruned_out = forward(&pruned, seq, &probes, None)?;
        if options.logit_kl {
            let base_out = forward(model, seq, &ProbeSet::empty(), None)?;
            for (t, tok) in seq.tokens.iter().enumerate() {
                if tok.excluded || !options.target_filter.matches(tok.tag) {
                    continue;
                }
                let p = distribution_from_logits(base_out.logits.row(t));
                let q = distribution_from_logits(pruned_out.logits.row(t));
                kl_sum += kl_divergence(&p, &q);
                n_tokens += 1;
            }
        }
        if let Some(measure) = options.ima_measure {
            ima_sum += ima_score(&pruned_out.trace, measure)?;
            ima_n += 1;
        }
    }

    Ok(TransferReport {
        mean_logit_kl: if options.logit_kl && n_tokens > 0 {
            Some(kl_sum / n_tokens as f64)
        } else {
            None
        },
        ima_score: if ima_n > 0 {
            Some(ima_sum / ima_n as f64)
        } else {
            None
        },
        n_tokens,
    })
}
