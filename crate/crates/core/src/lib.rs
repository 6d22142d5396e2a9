//! Desk-scale transformer introspection and compression toolkit.
//!
//! The crate runs small decoder-only transformers over sequences that mix
//! textual tokens with injected perceptual embeddings (image/video/audio),
//! records hidden states at named probe points, and computes the analysis
//! suite on top of those traces:
//!
//! - cross-modal similarity, norm and vocabulary-distribution metrics,
//!   including the per-layer IMA (implicit multimodal alignment) score,
//! - Wanda-style activation-aware subnetwork extraction with mask algebra
//!   (IoU, transfer, alpha-subnet intersection),
//! - FFN token skipping with exact FLOP accounting.
//!
//! Everything is deterministic: fixed seeds give byte-identical checkpoints,
//! traces and reports. See [`fmath`] for why no libm calls appear on any
//! output path.

pub mod checkpoint;
pub mod config;
pub mod digest;
pub mod error;
pub mod fmath;
pub mod forward;
pub mod logit_lens;
pub mod metrics;
pub mod prune;
pub mod rng;
pub mod sequence;
pub mod skip;
pub mod tensor;
pub mod trace;

pub use checkpoint::{LayerWeights, ModelCheckpoint, NormParams};
pub use config::{ActivationKind, ModelConfig, NormKind, PositionalMode};
pub use error::{Error, ErrorKind, Result};
pub use forward::{forward, ForwardOutput, ProbePoint, ProbeSet};
pub use logit_lens::logit_lens;
pub use rng::Rng;
pub use sequence::{Modality, TaggedSequence, Token};
pub use skip::{count_flops, plan_skips, FlopBudget, SkipPlan, SkipPolicy, SkipSelection};
pub use tensor::Matrix;
pub use trace::{load_trace, save_trace, ActivationTrace};
