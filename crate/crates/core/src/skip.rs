//! FFN token skipping and FLOP accounting.
//!
//! From a start layer onward, a fraction of the tokens carrying targeted
//! modality tags bypass the FFN sublayer entirely (`X^{l+1} = X_SA`). Skipped
//! tokens still participate in attention as queries, keys and values.
//!
//! FLOP convention (documented, since reduction fractions are the comparable
//! quantity, not absolute counts):
//! - matrix-vector product of an `m x n` matrix: `2*m*n`
//! - one norm over `d` dims: [`NORM_FLOPS_PER_DIM`]` * d`
//! - softmax over `s` scores: [`SOFTMAX_FLOPS_PER_SCORE`]` * s`
//! - activation over `f` dims: [`ACT_FLOPS_PER_DIM`]` * f`
//!
//! Skipping a token at a layer saves its FC1/FC2 products and activation,
//! `2*d*f + 2*f*d + f` FLOPs; norms and attention are counted in full.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::sequence::{Modality, TagFilter, TaggedSequence};

pub const NORM_FLOPS_PER_DIM: u64 = 8;
pub const SOFTMAX_FLOPS_PER_SCORE: u64 = 5;
pub const ACT_FLOPS_PER_DIM: u64 = 1;

/// How the skipped subset is drawn from the targeted tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SkipSelection {
    /// Fresh random subset at every layer.
    #[default]
    RandomPerLayer,
    /// One random subset drawn once and reused across layers.
    RandomOnce,
    /// Every targeted token, ignoring the skip ratio.
    AllTargeted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkipPolicy {
    /// First layer at which skipping applies; `n_layers` disables skipping.
    pub start_layer: usize,
    /// Fraction of targeted tokens to skip, in [0, 1].
    pub skip_ratio: f64,
    pub target_tags: BTreeSet<Modality>,
    #[serde(default)]
    pub selection: SkipSelection,
    pub seed: u64,
}

impl SkipPolicy {
    pub fn validate(&self, n_layers: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.skip_ratio) {
            return Err(Error::Config(format!(
                "skip_ratio {} outside [0, 1]",
                self.skip_ratio
            )));
        }
        if self.start_layer > n_layers {
            return Err(Error::Config(format!(
                "start_layer {} > n_layers {n_layers}",
                self.start_layer
            )));
        }
        if self.target_tags.is_empty() {
            return Err(Error::Config("target_tags is empty".into()));
        }
        Ok(())
    }
}

/// Per-layer skip sets; `per_layer[l]` holds ascending token indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SkipPlan {
    pub per_layer: Vec<Vec<usize>>,
}

impl SkipPlan {
    pub fn none(n_layers: usize) -> Self {
        SkipPlan {
            per_layer: vec![Vec::new(); n_layers],
        }
    }

    pub fn layer(&self, l: usize) -> &[usize] {
        &self.per_layer[l]
    }

    pub fn is_empty(&self) -> bool {
        self.per_layer.iter().all(Vec::is_empty)
    }

    pub fn validate(&self, n_layers: usize, n_tokens: usize) -> Result<()> {
        if self.per_layer.len() != n_layers {
            return Err(Error::Invalid(format!(
                "skip plan covers {} layers, model has {n_layers}",
                self.per_layer.len()
            )));
        }
        for (l, set) in self.per_layer.iter().enumerate() {
            if set.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Invalid(format!(
                    "skip plan layer {l} is not strictly ascending"
                )));
            }
            if set.iter().any(|&t| t >= n_tokens) {
                return Err(Error::Invalid(format!(
                    "skip plan layer {l} indexes past {n_tokens} tokens"
                )));
            }
        }
        Ok(())
    }
}

/// Draw the per-layer skip sets for one sequence.
pub fn plan_skips(policy: &SkipPolicy, seq: &TaggedSequence, n_layers: usize) -> Result<SkipPlan> {
    policy.validate(n_layers)?;
    let filter = TagFilter(policy.target_tags.clone());
    let targeted = seq.indices_with_tags(&filter);

    let n_skip = match policy.selection {
        SkipSelection::AllTargeted => targeted.len(),
        _ => (policy.skip_ratio * targeted.len() as f64).round() as usize,
    };

    let mut per_layer = vec![Vec::new(); n_layers];
    if n_skip == 0 || policy.start_layer >= n_layers {
        return Ok(SkipPlan { per_layer });
    }

    let mut rng = Rng::new(policy.seed);
    let pick = |rng: &mut Rng| -> Vec<usize> {
        rng.choose(targeted.len(), n_skip)
            .into_iter()
            .map(|i| targeted[i])
            .collect()
    };

    let active = &mut per_layer[policy.start_layer..];
    match policy.selection {
        SkipSelection::AllTargeted => {
            for set in active.iter_mut() {
                *set = targeted.clone();
            }
        }
        SkipSelection::RandomOnce => {
            let drawn = pick(&mut rng);
            for set in active.iter_mut() {
                *set = drawn.clone();
            }
        }
        SkipSelection::RandomPerLayer => {
            for set in active.iter_mut() {
                *set = pick(&mut rng);
            }
        }
    }
    Ok(SkipPlan { per_layer })
}

/// Exact FLOP budget of one forward pass under the crate's counting
/// convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopBudget {
    pub total: u64,
    pub attention: u64,
    pub ffn: u64,
    pub norms: u64,
    pub unembedding: u64,
    pub baseline: u64,
    pub reduction_fraction: f64,
}

pub fn count_flops(config: &ModelConfig, seq_len: usize, plan: &SkipPlan) -> Result<FlopBudget> {
    config.validate()?;
    if seq_len == 0 {
        return Err(Error::Invalid("seq_len must be >= 1".into()));
    }
    plan.validate(config.n_layers, seq_len)?;

    let (attention, norms, unembedding, ffn) = component_flops(config, seq_len, plan);
    let (_, _, _, ffn_baseline) =
        component_flops(config, seq_len, &SkipPlan::none(config.n_layers));

    let total = attention + norms + unembedding + ffn;
    let baseline = attention + norms + unembedding + ffn_baseline;
    Ok(FlopBudget {
        total,
        attention,
        ffn,
        norms,
        unembedding,
        baseline,
        reduction_fraction: 1.0 - total as f64 / baseline as f64,
    })
}

fn component_flops(config: &ModelConfig, seq_len: usize, plan: &SkipPlan) -> (u64, u64, u64, u64) {
    let n = seq_len as u64;
    let d = config.hidden_dim as u64;
    let f = config.ffn_dim as u64;
    let v = config.vocab_size as u64;
    let heads = config.n_heads as u64;
    let layers = config.n_layers as u64;

    // Q,K,V,O projections plus causal score/context products and softmax.
    // Token i attends to i+1 keys; sum over i gives n(n+1)/2 positions.
    let attended = n * (n + 1) / 2;
    let attention_per_layer =
        4 * (2 * d * d) * n + attended * (4 * d + SOFTMAX_FLOPS_PER_SCORE * heads);
    let attention = attention_per_layer * layers;

    // LN1 + LN2 per token per layer, LN_out per token.
    let norms = layers * n * 2 * NORM_FLOPS_PER_DIM * d + n * NORM_FLOPS_PER_DIM * d;

    let unembedding = 2 * v * d * n;

    let ffn_per_token = 2 * d * f + 2 * f * d + ACT_FLOPS_PER_DIM * f;
    let mut ffn = 0u64;
    for l in 0..config.n_layers {
        let active = n - plan.per_layer[l].len() as u64;
        ffn += active * ffn_per_token;
    }

    (attention, norms, unembedding, ffn)
}
