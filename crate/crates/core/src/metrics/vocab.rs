//! Vocabulary-distribution statistics through the logit lens.
//!
//! Group-level KL and entropy are computed on the *mean* of the per-token
//! logit-lens distributions (averaging in probability space), matching how
//! the group-level curves are built; a per-token-then-averaged KL variant is
//! provided as an option.

use crate::checkpoint::ModelCheckpoint;
use crate::error::{Error, Result};
use crate::fmath;
use crate::logit_lens::logit_lens;

use super::TokenGroup;

/// Floor inside the log terms of KL and entropy. Softmax outputs are already
/// strictly positive; this only guards underflow.
pub const PROB_EPSILON: f64 = 1e-10;

/// Mean logit-lens distribution of a group, averaged in probability space.
pub fn mean_lens_distribution(model: &ModelCheckpoint, group: &TokenGroup) -> Result<Vec<f64>> {
    group.require_non_empty()?;
    let v = model.config.vocab_size;
    let mut mean = vec![0.0f64; v];
    for vec in &group.vectors {
        let dist = logit_lens(model, vec)?;
        for (m, p) in mean.iter_mut().zip(&dist) {
            *m += p;
        }
    }
    let n = group.len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    Ok(mean)
}

/// KL(p || q) in nats with the epsilon floor inside the log ratio,
/// clamped at zero.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let kl: f64 = p
        .iter()
        .zip(q)
        .map(|(&pi, &qi)| pi * fmath::ln((pi + PROB_EPSILON) / (qi + PROB_EPSILON)))
        .sum();
    kl.max(0.0)
}

/// Shannon entropy in nats; the floor is a max() so exact distributions stay
/// exact (a one-hot gives 0, a uniform gives ln V).
pub fn entropy(p: &[f64]) -> f64 {
    let h: f64 = p
        .iter()
        .map(|&pi| -pi * fmath::ln(pi.max(PROB_EPSILON)))
        .sum();
    h.max(0.0)
}

/// KL between the mean logit-lens distributions of two groups.
pub fn vocab_kl(model: &ModelCheckpoint, a: &TokenGroup, b: &TokenGroup) -> Result<f64> {
    let pa = mean_lens_distribution(model, a)?;
    let pb = mean_lens_distribution(model, b)?;
    Ok(kl_divergence(&pa, &pb))
}

/// Mean over `a`'s tokens of KL(token distribution || mean distribution of `b`).
pub fn vocab_kl_per_token_mean(
    model: &ModelCheckpoint,
    a: &TokenGroup,
    b: &TokenGroup,
) -> Result<f64> {
    a.require_non_empty()?;
    let pb = mean_lens_distribution(model, b)?;
    let mut sum = 0.0;
    for vec in &a.vectors {
        let dist = logit_lens(model, vec)?;
        sum += kl_divergence(&dist, &pb);
    }
    Ok(sum / a.len() as f64)
}

/// Entropy of the group's mean logit-lens distribution, in [0, ln V].
pub fn vocab_entropy(model: &ModelCheckpoint, group: &TokenGroup) -> Result<f64> {
    let p = mean_lens_distribution(model, group)?;
    Ok(entropy(&p))
}

/// Histogram of per-token distribution entries on log-spaced bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `n_bins + 1` ascending edges over (0, 1]; the lowest edge is 1e-12
    /// and entries below it are clamped into the first bin.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

const HIST_LOG_FLOOR: f64 = -12.0;

/// Bin all entries of all per-token logit-lens distributions of the group.
/// Counts sum to `group.len() * vocab_size`.
pub fn vocab_histogram(
    model: &ModelCheckpoint,
    group: &TokenGroup,
    n_bins: usize,
) -> Result<Histogram> {
    group.require_non_empty()?;
    if n_bins == 0 {
        return Err(Error::Invalid("n_bins must be >= 1".into()));
    }
    let width = -HIST_LOG_FLOOR / n_bins as f64;
    let edges: Vec<f64> = (0..=n_bins)
        .map(|i| fmath::powf(10.0, HIST_LOG_FLOOR + i as f64 * width))
        .collect();
    let mut counts = vec![0u64; n_bins];
    for vec in &group.vectors {
        let dist = logit_lens(model, vec)?;
        for p in dist {
            let log = fmath::log10(p.max(1e-300)).clamp(HIST_LOG_FLOOR, 0.0);
            let mut bin = ((log - HIST_LOG_FLOOR) / width) as usize;
            if bin >= n_bins {
                bin = n_bins - 1;
            }
            counts[bin] += 1;
        }
    }
    Ok(Histogram { edges, counts })
}
