//! Calibration statistics: per-input-feature squared activation sums for
//! every linear layer, accumulated over a token sample.
//!
//! `stats[j] = sum over selected tokens of x_j^2` where `x` is the input the
//! linear layer sees; the Wanda norm is `||X_j||_2 = sqrt(stats[j])`.
//! Accumulation is a per-sequence f64 fold merged in corpus order, so
//! duplicating the corpus doubles every entry exactly.

use std::collections::BTreeMap;

use crate::checkpoint::ModelCheckpoint;
use crate::error::{Error, Result};
use crate::forward::{forward_with, ProbeSet};
use crate::sequence::{TagFilter, TaggedSequence};

/// Where a linear layer reads its input inside a block. Q, K and V share
/// the LN1 output, so they share one site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LinearSite {
    /// LN1 output, input of the Q/K/V projections.
    AttnQkv,
    /// Attention context (heads concatenated), input of the O projection.
    AttnOut,
    /// LN2 output, input of FC1.
    Fc1,
    /// Activated hidden state, input of FC2.
    Fc2,
}

impl LinearSite {
    pub fn as_str(self) -> &'static str {
        match self {
            LinearSite::AttnQkv => "attn_qkv",
            LinearSite::AttnOut => "attn_out",
            LinearSite::Fc1 => "fc1",
            LinearSite::Fc2 => "fc2",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureStats {
    pub sq_sum: Vec<f64>,
    pub tokens: u64,
}

impl FeatureStats {
    fn accumulate(&mut self, x: &[f32]) {
        if self.sq_sum.is_empty() {
            self.sq_sum = vec![0.0; x.len()];
        }
        debug_assert_eq!(self.sq_sum.len(), x.len());
        for (s, &v) in self.sq_sum.iter_mut().zip(x) {
            *s += f64::from(v) * f64::from(v);
        }
        self.tokens += 1;
    }

    fn merge(&mut self, other: &FeatureStats) {
        if self.sq_sum.is_empty() {
            self.sq_sum = vec![0.0; other.sq_sum.len()];
        }
        for (s, o) in self.sq_sum.iter_mut().zip(&other.sq_sum) {
            *s += o;
        }
        self.tokens += other.tokens;
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationStats {
    pub sites: BTreeMap<(usize, LinearSite), FeatureStats>,
}

impl CalibrationStats {
    /// `||X_j||_2` per input feature of the given site.
    pub fn input_norms(&self, layer: usize, site: LinearSite) -> Result<Vec<f64>> {
        let stats = self.sites.get(&(layer, site)).ok_or_else(|| {
            Error::Invalid(format!(
                "no calibration stats for layer {layer} site {}",
                site.as_str()
            ))
        })?;
        if stats.tokens == 0 {
            return Err(Error::Invalid("calibration saw no tokens".into()));
        }
        Ok(stats.sq_sum.iter().map(|&s| s.sqrt()).collect())
    }

    pub fn tokens_seen(&self) -> u64 {
        self.sites.values().map(|s| s.tokens).next().unwrap_or(0)
    }

    fn merge(&mut self, other: &CalibrationStats) {
        for (key, stats) in &other.sites {
            self.sites.entry(*key).or_default().merge(stats);
        }
    }
}

/// Observer handed into the forward pass; filters tokens by tag and
/// exclusion flag, accumulating one sequence's worth of statistics.
pub struct CalibrationRecorder {
    filter: TagFilter,
    stats: CalibrationStats,
}

impl CalibrationRecorder {
    pub fn new(filter: TagFilter) -> Self {
        CalibrationRecorder {
            filter,
            stats: CalibrationStats::default(),
        }
    }

    pub fn record(
        &mut self,
        layer: usize,
        site: LinearSite,
        token: usize,
        seq: &TaggedSequence,
        x: &[f32],
    ) {
        let tok = &seq.tokens[token];
        if tok.excluded || !self.filter.matches(tok.tag) {
            return;
        }
        self.stats
            .sites
            .entry((layer, site))
            .or_default()
            .accumulate(x);
    }

    pub fn into_stats(self) -> CalibrationStats {
        self.stats
    }
}

/// Run the corpus through the model and accumulate calibration statistics
/// for the tokens selected by the filter.
pub fn collect_calibration(
    model: &ModelCheckpoint,
    sequences: &[TaggedSequence],
    filter: &TagFilter,
) -> Result<CalibrationStats> {
    if sequences.is_empty() {
        return Err(Error::Invalid("calibration corpus is empty".into()));
    }
    let mut total = CalibrationStats::default();
    for seq in sequences {
        let mut recorder = CalibrationRecorder::new(filter.clone());
        forward_with(model, seq, &ProbeSet::empty(), None, Some(&mut recorder))?;
        total.merge(&recorder.into_stats());
    }
    if total.tokens_seen() == 0 {
        return Err(Error::Invalid(
            "calibration filter selects no tokens".into(),
        ));
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::sequence::{Modality, Token};

    #[test]
    fn squared_sums_by_definition() {
        let seq = TaggedSequence::new(vec![Token::text(0)]);
        let mut rec = CalibrationRecorder::new(TagFilter::any());
        rec.record(0, LinearSite::Fc1, 0, &seq, &[1.0, 2.0]);
        let stats = rec.into_stats();
        let fs = &stats.sites[&(0, LinearSite::Fc1)];
        assert_eq!(fs.sq_sum, vec![1.0, 4.0]);
        assert_eq!(fs.tokens, 1);
        assert_eq!(
            stats.input_norms(0, LinearSite::Fc1).unwrap(),
            vec![1.0, 2.0]
        );
    }

    #[test]
    fn excluded_and_mismatched_tokens_are_ignored() {
        let mut seq = TaggedSequence::new(vec![
            Token::text(0),
            Token::perceptual(Modality::Image, vec![0.0, 0.0]),
        ]);
        seq.tokens[0].excluded = true;
        let mut rec = CalibrationRecorder::new(TagFilter::perceptual());
        rec.record(0, LinearSite::Fc1, 0, &seq, &[1.0, 1.0]);
        rec.record(0, LinearSite::Fc1, 1, &seq, &[3.0, 4.0]);
        let stats = rec.into_stats();
        assert_eq!(stats.sites[&(0, LinearSite::Fc1)].sq_sum, vec![9.0, 16.0]);
        assert_eq!(stats.tokens_seen(), 1);
    }

    #[test]
    fn duplicating_the_corpus_doubles_stats_exactly() {
        let config = ModelConfig::toy(2, 8, 2, 16, 32);
        let model = ModelCheckpoint::synthesize(&config, 3).unwrap();
        let seq = TaggedSequence::new(vec![
            Token::perceptual(Modality::Image, vec![0.3; 8]),
            Token::text(5),
            Token::text(9),
        ]);
        let once =
            collect_calibration(&model, std::slice::from_ref(&seq), &TagFilter::any()).unwrap();
        let twice = collect_calibration(&model, &[seq.clone(), seq], &TagFilter::any()).unwrap();
        for (key, fs) in &once.sites {
            let doubled = &twice.sites[key];
            assert_eq!(doubled.tokens, 2 * fs.tokens);
            for (a, b) in fs.sq_sum.iter().zip(&doubled.sq_sum) {
                assert_eq!(*b, 2.0 * a, "site {key:?}");
            }
        }
    }

    #[test]
    fn empty_selection_is_an_error() {
        let config = ModelConfig::toy(1, 4, 1, 8, 16);
        let model = ModelCheckpoint::synthesize(&config, 1).unwrap();
        let seq = TaggedSequence::new(vec![Token::text(1)]);
        let err = collect_calibration(&model, &[seq], &TagFilter::only(Modality::Audio));
        assert!(err.is_err());
        assert!(collect_calibration(&model, &[], &TagFilter::any()).is_err());
    }

    #[test]
    fn all_sites_are_covered() {
        let config = ModelConfig::toy(2, 8, 2, 16, 32);
        let model = ModelCheckpoint::synthesize(&config, 4).unwrap();
        let seq = TaggedSequence::new(vec![Token::text(1), Token::text(2)]);
        let stats = collect_calibration(&model, &[seq], &TagFilter::any()).unwrap();
        for layer in 0..2 {
            for site in [
                LinearSite::AttnQkv,
                LinearSite::AttnOut,
                LinearSite::Fc1,
                LinearSite::Fc2,
            ] {
                let norms = stats.input_norms(layer, site).unwrap();
                let expected_dim = match site {
                    LinearSite::Fc2 => 16,
                    _ => 8,
                };
                assert_eq!(norms.len(), expected_dim, "{site:?}");
                assert!(norms.iter().all(|&n| n >= 0.0));
            }
        }
    }
}
