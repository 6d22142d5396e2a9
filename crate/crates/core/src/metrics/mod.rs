//! Similarity, norm and vocabulary-distribution statistics over traces.
//!
//! Metrics consume [`TokenGroup`]s: token vectors selected by modality tag
//! with excluded tokens dropped. Inputs are f32 activations; every metric is
//! computed in f64 and reported in f64 so oracle tolerances stay tight.

pub mod correlate;
pub mod export;
pub mod ima;
pub mod norms;
pub mod series;
pub mod similarity;
pub mod vocab;

pub use correlate::pearson;
pub use export::export_embeddings;
pub use ima::{ima_layer_series, ima_score};
pub use norms::{detect_massive_tokens, token_norms, NormMeasure, DEFAULT_MASSIVE_FACTOR};
pub use series::{LayerSeries, MetricReport, SeriesCell};
pub use similarity::{
    consecutive_layer_sim, pairwise_sim, sim_avg, similarity, AvgSimDivisor, ConsecutiveMeasure,
    SimilarityMeasure,
};
pub use vocab::{vocab_entropy, vocab_histogram, vocab_kl, Histogram, PROB_EPSILON};

use crate::error::{Error, Result};
use crate::forward::ProbePoint;
use crate::sequence::TagFilter;
use crate::trace::ActivationTrace;

/// A labelled bag of hidden-state vectors.
///
/// `indices` remembers each vector's original token position so findings
/// (massive tokens) can be reported against the sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGroup {
    pub label: String,
    pub vectors: Vec<Vec<f32>>,
    pub indices: Vec<usize>,
}

impl TokenGroup {
    pub fn new(label: impl Into<String>, vectors: Vec<Vec<f32>>) -> Self {
        let indices = (0..vectors.len()).collect();
        TokenGroup {
            label: label.into(),
            vectors,
            indices,
        }
    }

    /// Tokens at `(layer, probe)` whose tag matches the filter, excluded
    /// tokens removed.
    pub fn from_trace(
        trace: &ActivationTrace,
        layer: usize,
        probe: ProbePoint,
        filter: &TagFilter,
        label: impl Into<String>,
    ) -> Result<TokenGroup> {
        let tensor = trace.require(layer, probe)?;
        let mut vectors = Vec::new();
        let mut indices = Vec::new();
        for (i, tok) in trace.sequence.tokens.iter().enumerate() {
            if tok.excluded || !filter.matches(tok.tag) {
                continue;
            }
            vectors.push(tensor.row(i).to_vec());
            indices.push(i);
        }
        Ok(TokenGroup {
            label: label.into(),
            vectors,
            indices,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub(crate) fn require_non_empty(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Invalid(format!(
                "token group {} is empty",
                self.label
            )));
        }
        Ok(())
    }

    /// Mean vector in f64.
    pub fn mean(&self) -> Vec<f64> {
        let d = self.dim();
        let mut mean = vec![0.0f64; d];
        for v in &self.vectors {
            for (m, &x) in mean.iter_mut().zip(v) {
                *m += f64::from(x);
            }
        }
        let n = self.len() as f64;
        for m in &mut mean {
            *m /= n;
        }
        mean
    }
}

/// Median with the even-length convention: mean of the two central values.
pub(crate) fn median(mut values: Vec<f64>) -> f64 {
    debug_assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
