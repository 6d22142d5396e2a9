//! Cosine-similarity measures between token groups and across layers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::ProbePoint;
use crate::sequence::TagFilter;
use crate::trace::ActivationTrace;

use super::series::LayerSeries;
use super::{median, TokenGroup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMeasure {
    /// Cosine of the mean-pooled group vectors.
    SimAvg,
    /// Maximum over all cross-group token pairs.
    MaxSim,
    /// Minimum over all cross-group token pairs.
    MinSim,
    /// Mean over all cross-group token pairs.
    AvgSim,
    /// Median over all cross-group token pairs.
    MedSim,
}

impl SimilarityMeasure {
    pub const ALL: [SimilarityMeasure; 5] = [
        SimilarityMeasure::SimAvg,
        SimilarityMeasure::MaxSim,
        SimilarityMeasure::MinSim,
        SimilarityMeasure::AvgSim,
        SimilarityMeasure::MedSim,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SimilarityMeasure::SimAvg => "sim_avg",
            SimilarityMeasure::MaxSim => "max_sim",
            SimilarityMeasure::MinSim => "min_sim",
            SimilarityMeasure::AvgSim => "avg_sim",
            SimilarityMeasure::MedSim => "med_sim",
        }
    }
}

/// Divisor of the pairwise mean in `AvgSim`.
///
/// `AllPairs` is the true mean over the `|a|*|b|` pairs. `GroupSizeSum`
/// divides the same sum by `|a| + |b|` instead; it is kept selectable
/// because some published plots use that normalization, but it is not a
/// mean and can leave [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AvgSimDivisor {
    #[default]
    AllPairs,
    GroupSizeSum,
}

fn cosine_f64(x: &[f32], y: &[f32]) -> Result<f64> {
    cosine_vec_f64(
        &x.iter().map(|&v| f64::from(v)).collect::<Vec<_>>(),
        &y.iter().map(|&v| f64::from(v)).collect::<Vec<_>>(),
    )
}

fn cosine_vec_f64(x: &[f64], y: &[f64]) -> Result<f64> {
    debug_assert_eq!(x.len(), y.len());
    let mut dot = 0.0f64;
    let mut nx = 0.0f64;
    let mut ny = 0.0f64;
    for (a, b) in x.iter().zip(y) {
        dot += a * b;
        nx += a * a;
        ny += b * b;
    }
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::Numerical("cosine of a zero-norm vector".into()));
    }
    // Clamp away the last-ulp excursions outside [-1, 1].
    Ok((dot / (nx.sqrt() * ny.sqrt())).clamp(-1.0, 1.0))
}

/// Cosine between the mean-pooled vectors of the two groups.
pub fn sim_avg(a: &TokenGroup, b: &TokenGroup) -> Result<f64> {
    a.require_non_empty()?;
    b.require_non_empty()?;
    cosine_vec_f64(&a.mean(), &b.mean())
}

/// Max/min/mean/median over all cross-group pairwise cosines.
pub fn pairwise_sim(measure: SimilarityMeasure, a: &TokenGroup, b: &TokenGroup) -> Result<f64> {
    pairwise_sim_with(measure, a, b, AvgSimDivisor::AllPairs)
}

pub fn pairwise_sim_with(
    measure: SimilarityMeasure,
    a: &TokenGroup,
    b: &TokenGroup,
    divisor: AvgSimDivisor,
) -> Result<f64> {
    a.require_non_empty()?;
    b.require_non_empty()?;
    if measure == SimilarityMeasure::SimAvg {
        return sim_avg(a, b);
    }
    let mut sims = Vec::with_capacity(a.len() * b.len());
    for va in &a.vectors {
        for vb in &b.vectors {
            sims.push(cosine_f64(va, vb)?);
        }
    }
    Ok(match measure {
        SimilarityMeasure::SimAvg => unreachable!(),
        SimilarityMeasure::MaxSim => sims.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        SimilarityMeasure::MinSim => sims.iter().copied().fold(f64::INFINITY, f64::min),
        SimilarityMeasure::AvgSim => {
            let sum: f64 = sims.iter().sum();
            match divisor {
                AvgSimDivisor::AllPairs => sum / sims.len() as f64,
                AvgSimDivisor::GroupSizeSum => sum / (a.len() + b.len()) as f64,
            }
        }
        SimilarityMeasure::MedSim => median(sims),
    })
}

/// Dispatch across all five measures.
pub fn similarity(measure: SimilarityMeasure, a: &TokenGroup, b: &TokenGroup) -> Result<f64> {
    match measure {
        SimilarityMeasure::SimAvg => sim_avg(a, b),
        other => pairwise_sim(other, a, b),
    }
}

/// Measures comparing the same tokens at layers `l` and `l+n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsecutiveMeasure {
    /// Pool each layer, then cosine.
    SimAvg,
    /// Mean of the per-token (diagonal) cosines.
    AvgDiagSim,
    /// Median of the per-token cosines.
    MedDiagSim,
    /// Median over all cross pairs between the two layers.
    MedSim,
}

impl ConsecutiveMeasure {
    pub const ALL: [ConsecutiveMeasure; 4] = [
        ConsecutiveMeasure::SimAvg,
        ConsecutiveMeasure::AvgDiagSim,
        ConsecutiveMeasure::MedDiagSim,
        ConsecutiveMeasure::MedSim,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConsecutiveMeasure::SimAvg => "sim_avg",
            ConsecutiveMeasure::AvgDiagSim => "avg_diag_sim",
            ConsecutiveMeasure::MedDiagSim => "med_diag_sim",
            ConsecutiveMeasure::MedSim => "med_sim",
        }
    }
}

/// Token similarity between block outputs `gap` layers apart.
///
/// For every layer `l` where both `(l, resid_post_block)` and
/// `(l+gap, resid_post_block)` were probed, emits one cell at layer `l` for
/// the tokens selected by the filter.
pub fn consecutive_layer_sim(
    trace: &ActivationTrace,
    gap: usize,
    measure: ConsecutiveMeasure,
    filter: &TagFilter,
    label: impl Into<String>,
) -> Result<LayerSeries> {
    if gap == 0 {
        return Err(Error::Invalid("gap must be >= 1".into()));
    }
    let label = label.into();
    let mut series = LayerSeries::new(format!("consecutive_{}_gap{gap}", measure.as_str()));
    let mut any_layer = false;
    for l in 0..trace.n_layers.saturating_sub(gap) {
        let lo = trace.get(l, ProbePoint::ResidPostBlock);
        let hi = trace.get(l + gap, ProbePoint::ResidPostBlock);
        let (Some(_), Some(_)) = (lo, hi) else {
            continue;
        };
        any_layer = true;
        let a = TokenGroup::from_trace(trace, l, ProbePoint::ResidPostBlock, filter, &*label)?;
        let b =
            TokenGroup::from_trace(trace, l + gap, ProbePoint::ResidPostBlock, filter, &*label)?;
        a.require_non_empty()?;
        let value = consecutive_value(measure, &a, &b)?;
        series.push(l, ProbePoint::ResidPostBlock, label.clone(), value);
    }
    if !any_layer {
        return Err(Error::Invalid(format!(
            "no layer pair with gap {gap} has resid_post_block probes"
        )));
    }
    Ok(series)
}

fn consecutive_value(measure: ConsecutiveMeasure, a: &TokenGroup, b: &TokenGroup) -> Result<f64> {
    debug_assert_eq!(a.len(), b.len());
    match measure {
        ConsecutiveMeasure::SimAvg => sim_avg(a, b),
        ConsecutiveMeasure::AvgDiagSim => {
            let mut sum = 0.0;
            for (va, vb) in a.vectors.iter().zip(&b.vectors) {
                sum += cosine_f64(va, vb)?;
            }
            Ok(sum / a.len() as f64)
        }
        ConsecutiveMeasure::MedDiagSim => {
            let mut sims = Vec::with_capacity(a.len());
            for (va, vb) in a.vectors.iter().zip(&b.vectors) {
                sims.push(cosine_f64(va, vb)?);
            }
            Ok(median(sims))
        }
        ConsecutiveMeasure::MedSim => pairwise_sim(SimilarityMeasure::MedSim, a, b),
    }
}
