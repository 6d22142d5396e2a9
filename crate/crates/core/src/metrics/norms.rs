//! Token L2-norm measures and massive-token detection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{median, TokenGroup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMeasure {
    /// L2 norm of the mean-pooled vector (cancellation-sensitive).
    NormAvg,
    MinNorm,
    MedianNorm,
    MaxNorm,
}

impl NormMeasure {
    pub const ALL: [NormMeasure; 4] = [
        NormMeasure::NormAvg,
        NormMeasure::MinNorm,
        NormMeasure::MedianNorm,
        NormMeasure::MaxNorm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NormMeasure::NormAvg => "norm_avg",
            NormMeasure::MinNorm => "min_norm",
            NormMeasure::MedianNorm => "median_norm",
            NormMeasure::MaxNorm => "max_norm",
        }
    }
}

fn l2_f64(v: &[f32]) -> f64 {
    v.iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt()
}

pub fn token_norms(group: &TokenGroup, measure: NormMeasure) -> Result<f64> {
    group.require_non_empty()?;
    Ok(match measure {
        NormMeasure::NormAvg => {
            let mean = group.mean();
            mean.iter().map(|x| x * x).sum::<f64>().sqrt()
        }
        NormMeasure::MinNorm => group
            .vectors
            .iter()
            .map(|v| l2_f64(v))
            .fold(f64::INFINITY, f64::min),
        NormMeasure::MaxNorm => group
            .vectors
            .iter()
            .map(|v| l2_f64(v))
            .fold(f64::NEG_INFINITY, f64::max),
        NormMeasure::MedianNorm => median(group.vectors.iter().map(|v| l2_f64(v)).collect()),
    })
}

pub const DEFAULT_MASSIVE_FACTOR: f64 = 10.0;

/// Original token indices whose L2 norm exceeds `factor` times the group's
/// median norm.
pub fn detect_massive_tokens(group: &TokenGroup, factor: f64) -> Result<Vec<usize>> {
    group.require_non_empty()?;
    if factor <= 1.0 {
        return Err(Error::Invalid(format!(
            "massive-token factor {factor} must be > 1"
        )));
    }
    let threshold = factor * token_norms(group, NormMeasure::MedianNorm)?;
    Ok(group
        .vectors
        .iter()
        .zip(&group.indices)
        .filter(|(v, _)| l2_f64(v) > threshold)
        .map(|(_, &i)| i)
        .collect())
}
