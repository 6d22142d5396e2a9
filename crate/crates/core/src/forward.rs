//! Instrumented forward pass.
//!
//! Block recurrence (pre-norm decoder):
//!
//! ```text
//! X_SA    = X^l + SA(LN1(X^l))
//! X^{l+1} = X_SA + FC2(g(FC1(LN2(X_SA))))
//! ```
//!
//! with causal multi-head softmax attention, then
//! `logits = W_out · LN_out(X^L)`. Perceptual positions take their injected
//! embedding, text positions go through the embedding table.
//!
//! Weights and hidden states are f32; every reduction (dot products,
//! softmax, norm statistics) accumulates in f64 and rounds once.
//!
//! Probing copies values out and never changes the arithmetic. When a skip
//! plan is active, a skipped token's FFN sublayer is bypassed entirely
//! (`X^{l+1} = X_SA`); its FFN-internal probe rows are recorded as zeros and
//! the skip is noted in the trace.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{LayerWeights, ModelCheckpoint, NormParams};
use crate::config::{ActivationKind, NormKind, PositionalMode};
use crate::error::{Error, Result};
use crate::fmath;
use crate::prune::calibration::CalibrationRecorder;
use crate::sequence::TaggedSequence;
use crate::skip::{plan_skips, SkipPlan, SkipPolicy};
use crate::tensor::{dot_f64, Matrix};
use crate::trace::ActivationTrace;

/// Epsilon inside the norm denominators; part of the model definition.
pub const NORM_EPS: f64 = 1e-10;

/// Named locations where hidden states can be recorded.
///
/// Declaration order is computation order within a block; it is also the
/// canonical report order. `PostSa` and `PostFc2` are the sublayer outputs
/// *before* residual addition, i.e. outside the residual stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbePoint {
    ResidInput,
    PostLn1,
    PostSa,
    PostLn2,
    PostFc1,
    PostAct,
    PostFc2,
    ResidPostBlock,
}

impl ProbePoint {
    pub const ALL: [ProbePoint; 8] = [
        ProbePoint::ResidInput,
        ProbePoint::PostLn1,
        ProbePoint::PostSa,
        ProbePoint::PostLn2,
        ProbePoint::PostFc1,
        ProbePoint::PostAct,
        ProbePoint::PostFc2,
        ProbePoint::ResidPostBlock,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProbePoint::ResidInput => "resid_input",
            ProbePoint::PostLn1 => "post_ln1",
            ProbePoint::PostSa => "post_sa",
            ProbePoint::PostLn2 => "post_ln2",
            ProbePoint::PostFc1 => "post_fc1",
            ProbePoint::PostAct => "post_act",
            ProbePoint::PostFc2 => "post_fc2",
            ProbePoint::ResidPostBlock => "resid_post_block",
        }
    }
}

impl FromStr for ProbePoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProbePoint::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown probe point: {s}")))
    }
}

impl std::fmt::Display for ProbePoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Set of `(layer, probe point)` pairs to record.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProbeSet(BTreeSet<(usize, ProbePoint)>);

impl ProbeSet {
    pub fn empty() -> Self {
        ProbeSet::default()
    }

    pub fn insert(&mut self, layer: usize, probe: ProbePoint) {
        self.0.insert((layer, probe));
    }

    /// The residual stream: model input plus every block output.
    pub fn residual_stream(n_layers: usize) -> Self {
        let mut set = ProbeSet::empty();
        set.insert(0, ProbePoint::ResidInput);
        for l in 0..n_layers {
            set.insert(l, ProbePoint::ResidPostBlock);
        }
        set
    }

    /// One probe point at every layer.
    pub fn at_all_layers(n_layers: usize, probe: ProbePoint) -> Self {
        let mut set = ProbeSet::empty();
        for l in 0..n_layers {
            set.insert(l, probe);
        }
        set
    }

    pub fn all(n_layers: usize) -> Self {
        let mut set = ProbeSet::empty();
        for l in 0..n_layers {
            for p in ProbePoint::ALL {
                set.insert(l, p);
            }
        }
        set
    }

    pub fn union(mut self, other: &ProbeSet) -> Self {
        for &(l, p) in &other.0 {
            self.0.insert((l, p));
        }
        self
    }

    pub fn contains(&self, layer: usize, probe: ProbePoint) -> bool {
        self.0.contains(&(layer, probe))
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, ProbePoint)> + '_ {
        self.0.iter().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_layer(&self) -> Option<usize> {
        self.0.iter().map(|&(l, _)| l).max()
    }
}

impl FromIterator<(usize, ProbePoint)> for ProbeSet {
    fn from_iter<T: IntoIterator<Item = (usize, ProbePoint)>>(iter: T) -> Self {
        ProbeSet(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `[n_tokens, vocab_size]`.
    pub logits: Matrix,
    pub trace: ActivationTrace,
}

/// Run the model over one sequence, recording the requested probes.
pub fn forward(
    model: &ModelCheckpoint,
    seq: &TaggedSequence,
    probes: &ProbeSet,
    skip_policy: Option<&SkipPolicy>,
) -> Result<ForwardOutput> {
    let plan = skip_policy
        .map(|p| plan_skips(p, seq, model.config.n_layers))
        .transpose()?;
    forward_with(model, seq, probes, plan.as_ref(), None)
}

/// Forward pass against a pre-computed skip plan.
pub fn forward_with_plan(
    model: &ModelCheckpoint,
    seq: &TaggedSequence,
    probes: &ProbeSet,
    plan: &SkipPlan,
) -> Result<ForwardOutput> {
    forward_with(model, seq, probes, Some(plan), None)
}

pub(crate) fn forward_with(
    model: &ModelCheckpoint,
    seq: &TaggedSequence,
    probes: &ProbeSet,
    plan: Option<&SkipPlan>,
    mut recorder: Option<&mut CalibrationRecorder>,
) -> Result<ForwardOutput> {
    let config = &model.config;
    seq.validate(config)?;
    let n_layers = config.n_layers;
    if let Some(max) = probes.max_layer() {
        if max >= n_layers {
            return Err(Error::Invalid(format!(
                "probe layer {max} out of range (n_layers {n_layers})"
            )));
        }
    }
    if let Some(plan) = plan {
        plan.validate(n_layers, seq.len())?;
    }

    let n = seq.len();
    let d = config.hidden_dim;
    let mut tensors: BTreeMap<(usize, ProbePoint), Matrix> = BTreeMap::new();

    // Block-0 input: embedding lookup or injected vectors, plus optional
    // positional terms.
    let mut x: Vec<Vec<f32>> = Vec::with_capacity(n);
    for (pos, tok) in seq.tokens.iter().enumerate() {
        let mut row = match &tok.embedding {
            Some(injected) => injected.clone(),
            None => model.embedding.row(tok.id as usize).to_vec(),
        };
        if config.positional == PositionalMode::Sinusoidal
            && (config.positional_on_injected || tok.embedding.is_none())
        {
            add_sinusoidal(&mut row, pos, d);
        }
        x.push(row);
    }

    for layer_idx in 0..n_layers {
        let layer = &model.layers[layer_idx];
        let record = |tensors: &mut BTreeMap<(usize, ProbePoint), Matrix>,
                      probe: ProbePoint,
                      rows: &[Vec<f32>]|
         -> Result<()> {
            if probes.contains(layer_idx, probe) {
                tensors.insert((layer_idx, probe), Matrix::from_rows(rows)?);
            }
            Ok(())
        };

        record(&mut tensors, ProbePoint::ResidInput, &x)?;

        // Attention sublayer.
        let normed: Vec<Vec<f32>> = x
            .iter()
            .map(|row| apply_norm(&layer.ln1, config.norm_kind, row))
            .collect();
        record(&mut tensors, ProbePoint::PostLn1, &normed)?;
        if let Some(rec) = recorder.as_deref_mut() {
            for (t, row) in normed.iter().enumerate() {
                rec.record(layer_idx, AttnQkvInput, t, seq, row);
            }
        }

        let ctx = attention(layer, &normed, config.n_heads, config.head_dim());
        if let Some(rec) = recorder.as_deref_mut() {
            for (t, row) in ctx.iter().enumerate() {
                rec.record(layer_idx, AttnOutInput, t, seq, row);
            }
        }
        let sa_out: Vec<Vec<f32>> = ctx.iter().map(|c| layer.attn_o.matvec(c)).collect();
        record(&mut tensors, ProbePoint::PostSa, &sa_out)?;

        let x_sa: Vec<Vec<f32>> = x.iter().zip(&sa_out).map(|(a, b)| add_rows(a, b)).collect();

        // FFN sublayer, bypassed for skipped tokens.
        let skipped: &[usize] = plan.map_or(&[], |p| p.layer(layer_idx));
        let is_skipped = |t: usize| skipped.binary_search(&t).is_ok();

        let mut ln2_rows = vec![vec![0.0f32; d]; n];
        let mut fc1_rows = vec![vec![0.0f32; config.ffn_dim]; n];
        let mut act_rows = vec![vec![0.0f32; config.ffn_dim]; n];
        let mut fc2_rows = vec![vec![0.0f32; d]; n];
        let mut x_next = Vec::with_capacity(n);
        for (t, row_sa) in x_sa.iter().enumerate() {
            if is_skipped(t) {
                x_next.push(row_sa.clone());
                continue;
            }
            let ln2 = apply_norm(&layer.ln2, config.norm_kind, row_sa);
            if let Some(rec) = recorder.as_deref_mut() {
                rec.record(layer_idx, Fc1Input, t, seq, &ln2);
            }
            let h1 = layer.fc1.matvec(&ln2);
            let act = apply_activation(config.activation_kind, &h1);
            if let Some(rec) = recorder.as_deref_mut() {
                rec.record(layer_idx, Fc2Input, t, seq, &act);
            }
            let h2 = layer.fc2.matvec(&act);
            x_next.push(add_rows(row_sa, &h2));
            ln2_rows[t] = ln2;
            fc1_rows[t] = h1;
            act_rows[t] = act;
            fc2_rows[t] = h2;
        }
        record(&mut tensors, ProbePoint::PostLn2, &ln2_rows)?;
        record(&mut tensors, ProbePoint::PostFc1, &fc1_rows)?;
        record(&mut tensors, ProbePoint::PostAct, &act_rows)?;
        record(&mut tensors, ProbePoint::PostFc2, &fc2_rows)?;

        x = x_next;
        record(&mut tensors, ProbePoint::ResidPostBlock, &x)?;
    }

    // Unembedding.
    let mut logits = Matrix::zeros(n, config.vocab_size);
    for (t, row) in x.iter().enumerate() {
        let normed = apply_norm(&model.out_norm, config.norm_kind, row);
        let out = model.unembed.matvec(&normed);
        logits.row_mut(t).copy_from_slice(&out);
    }
    if !logits.all_finite() {
        return Err(Error::NonFinite("logits".into()));
    }

    let trace = ActivationTrace {
        config_digest: model.digest(),
        n_layers,
        hidden_dim: d,
        ffn_dim: config.ffn_dim,
        vocab_size: config.vocab_size,
        sequence: seq.clone(),
        tensors,
        skips: plan.map(|p| p.per_layer.clone()),
    };
    trace.validate()?;

    Ok(ForwardOutput { logits, trace })
}

// Re-exported site markers keep the recorder call sites readable without
// importing the enum variants one by one.
use crate::prune::calibration::LinearSite::AttnOut as AttnOutInput;
use crate::prune::calibration::LinearSite::AttnQkv as AttnQkvInput;
use crate::prune::calibration::LinearSite::Fc1 as Fc1Input;
use crate::prune::calibration::LinearSite::Fc2 as Fc2Input;

fn add_rows(a: &[f32], b: &[f32]) -> Vec<f32> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn add_sinusoidal(row: &mut [f32], pos: usize, d: usize) {
    for (j, slot) in row.iter_mut().enumerate() {
        let pair = (j / 2) as f64;
        let rate = fmath::powf(10000.0, 2.0 * pair / d as f64);
        let angle = pos as f64 / rate;
        let term = if j % 2 == 0 {
            fmath::sin(angle)
        } else {
            fmath::cos(angle)
        };
        *slot = (f64::from(*slot) + term) as f32;
    }
}

/// Normalize one token vector; f64 statistics, one f32 rounding per element.
pub fn apply_norm(params: &NormParams, kind: NormKind, x: &[f32]) -> Vec<f32> {
    apply_norm_f64(params, kind, x)
        .into_iter()
        .map(|v| v as f32)
        .collect()
}

/// Same, keeping f64 for metric paths (logit lens).
pub fn apply_norm_f64(params: &NormParams, kind: NormKind, x: &[f32]) -> Vec<f64> {
    let d = x.len() as f64;
    match kind {
        NormKind::LayerNorm => {
            let mean = x.iter().map(|&v| f64::from(v)).sum::<f64>() / d;
            let var = x
                .iter()
                .map(|&v| {
                    let c = f64::from(v) - mean;
                    c * c
                })
                .sum::<f64>()
                / d;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            let zero_bias = vec![0.0f32; x.len()];
            let bias = params.bias.as_deref().unwrap_or(&zero_bias);
            x.iter()
                .zip(params.gain.iter().zip(bias))
                .map(|(&v, (&g, &b))| (f64::from(v) - mean) * inv * f64::from(g) + f64::from(b))
                .collect()
        }
        NormKind::RmsNorm => {
            let ms = x.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>() / d;
            let inv = 1.0 / (ms + NORM_EPS).sqrt();
            x.iter()
                .zip(&params.gain)
                .map(|(&v, &g)| f64::from(v) * inv * f64::from(g))
                .collect()
        }
    }
}

pub fn apply_activation(kind: ActivationKind, x: &[f32]) -> Vec<f32> {
    x.iter()
        .map(|&v| {
            let v = f64::from(v);
            let out = match kind {
                ActivationKind::Relu => v.max(0.0),
                ActivationKind::Gelu => {
                    // tanh approximation (GPT-2 form)
                    let inner = 0.7978845608028654 * (v + 0.044715 * v * v * v);
                    0.5 * v * (1.0 + fmath::tanh(inner))
                }
                ActivationKind::Silu => v * fmath::sigmoid(v),
            };
            out as f32
        })
        .collect()
}

/// Causal multi-head attention over normalized inputs. Returns the
/// per-token context (heads concatenated, before the output projection).
fn attention(
    layer: &LayerWeights,
    normed: &[Vec<f32>],
    n_heads: usize,
    head_dim: usize,
) -> Vec<Vec<f32>> {
    let n = normed.len();
    let q: Vec<Vec<f32>> = normed.iter().map(|r| layer.attn_q.matvec(r)).collect();
    let k: Vec<Vec<f32>> = normed.iter().map(|r| layer.attn_k.matvec(r)).collect();
    let v: Vec<Vec<f32>> = normed.iter().map(|r| layer.attn_v.matvec(r)).collect();

    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut ctx = vec![vec![0.0f32; n_heads * head_dim]; n];
    for i in 0..n {
        for h in 0..n_heads {
            let span = h * head_dim..(h + 1) * head_dim;
            let qi = &q[i][span.clone()];
            let scores: Vec<f64> = (0..=i)
                .map(|j| dot_f64(qi, &k[j][span.clone()]) * scale)
                .collect();
            let weights = fmath::softmax(&scores);
            for (dim, slot) in ctx[i][span.clone()].iter_mut().enumerate() {
                let mut acc = 0.0f64;
                for (j, w) in weights.iter().enumerate() {
                    acc += w * f64::from(v[j][h * head_dim + dim]);
                }
                *slot = acc as f32;
            }
        }
    }
    ctx
}
