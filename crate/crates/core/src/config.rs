//! Model architecture configuration.

use serde::{Deserialize, Serialize};

use crate::digest::fnv1a64_hex;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    LayerNorm,
    RmsNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Relu,
    Gelu,
    Silu,
}

/// Positional information added to the block-0 input.
///
/// The checkpoint format carries no positional tensors, so the only
/// parameter-free option besides none is the sinusoidal table. When enabled
/// it applies to every position; `positional_on_injected = false` restricts
/// it to text positions, leaving injected perceptual embeddings untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PositionalMode {
    #[default]
    None,
    Sinusoidal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub norm_kind: NormKind,
    pub activation_kind: ActivationKind,
    pub max_seq_len: usize,
    #[serde(default)]
    pub positional: PositionalMode,
    #[serde(default = "default_true")]
    pub positional_on_injected: bool,
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    /// Small rmsnorm/silu model, the default family for synthetic runs.
    pub fn toy(
        n_layers: usize,
        hidden_dim: usize,
        n_heads: usize,
        ffn_dim: usize,
        vocab_size: usize,
    ) -> Self {
        ModelConfig {
            n_layers,
            hidden_dim,
            n_heads,
            ffn_dim,
            vocab_size,
            norm_kind: NormKind::RmsNorm,
            activation_kind: ActivationKind::Silu,
            max_seq_len: 128,
            positional: PositionalMode::None,
            positional_on_injected: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_layers", self.n_layers),
            ("hidden_dim", self.hidden_dim),
            ("n_heads", self.n_heads),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if !self.hidden_dim.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "hidden_dim ({}) must be divisible by n_heads ({})",
                self.hidden_dim, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.n_heads
    }

    /// Stable hex digest of the canonical JSON form; traces carry it so a
    /// trace can be matched against the model that produced it.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        fnv1a64_hex(json.as_bytes())
    }
}
