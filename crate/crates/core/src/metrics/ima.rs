//! The implicit multimodal alignment score: cross-modal similarity between
//! perceptual and textual token groups after each block, optionally averaged
//! over layers into a single scalar.

use crate::error::Result;
use crate::forward::ProbePoint;
use crate::sequence::TagFilter;
use crate::trace::ActivationTrace;

use super::series::LayerSeries;
use super::similarity::{similarity, SimilarityMeasure};
use super::TokenGroup;

/// P-vs-T similarity at `resid_post_block` for every layer of the trace.
pub fn ima_layer_series(
    trace: &ActivationTrace,
    measure: SimilarityMeasure,
) -> Result<LayerSeries> {
    let mut series = LayerSeries::new(format!("ima_{}", measure.as_str()));
    for layer in 0..trace.n_layers {
        let p = TokenGroup::from_trace(
            trace,
            layer,
            ProbePoint::ResidPostBlock,
            &TagFilter::perceptual(),
            "P",
        )?;
        let t = TokenGroup::from_trace(
            trace,
            layer,
            ProbePoint::ResidPostBlock,
            &TagFilter::text(),
            "T",
        )?;
        series.push(
            layer,
            ProbePoint::ResidPostBlock,
            "PvT",
            similarity(measure, &p, &t)?,
        );
    }
    Ok(series)
}

/// Mean of the per-layer P-vs-T similarity: the single IMA score.
pub fn ima_score(trace: &ActivationTrace, measure: SimilarityMeasure) -> Result<f64> {
    let series = ima_layer_series(trace, measure)?;
    let n = series.cells.len() as f64;
    Ok(series.values().sum::<f64>() / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::sim_avg;
    use crate::rng::Rng;
    use crate::sequence::{Modality, TaggedSequence, Token};
    use crate::tensor::Matrix;
    use std::collections::BTreeMap;

    fn trace_from_rows(per_layer: Vec<Vec<Vec<f32>>>) -> ActivationTrace {
        let n = per_layer[0].len();
        let d = per_layer[0][0].len();
        let seq = TaggedSequence::new(
            (0..n)
                .map(|i| {
                    if i < n / 2 {
                        Token::perceptual(Modality::Image, vec![0.0; d])
                    } else {
                        Token::text(0)
                    }
                })
                .collect(),
        );
        let mut tensors = BTreeMap::new();
        for (l, rows) in per_layer.iter().enumerate() {
            tensors.insert(
                (l, ProbePoint::ResidPostBlock),
                Matrix::from_rows(rows).unwrap(),
            );
        }
        ActivationTrace {
            config_digest: "t".into(),
            n_layers: per_layer.len(),
            hidden_dim: d,
            ffn_dim: 2 * d,
            vocab_size: 4,
            sequence: seq,
            tensors,
            skips: None,
        }
    }

    #[test]
    fn identical_groups_score_one() {
        let rows = vec![
            vec![0.5f32, 0.5],
            vec![0.5, 0.5],
            vec![0.5, 0.5],
            vec![0.5, 0.5],
        ];
        let trace = trace_from_rows(vec![rows.clone(), rows]);
        let series = ima_layer_series(&trace, SimilarityMeasure::SimAvg).unwrap();
        assert_eq!(series.cells.len(), 2);
        for c in &series.cells {
            assert!((c.value - 1.0).abs() < 1e-12);
        }
        assert!((ima_score(&trace, SimilarityMeasure::SimAvg).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_pooled_means_score_zero() {
        let rows = vec![
            vec![1.0f32, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        ];
        let trace = trace_from_rows(vec![rows]);
        assert_eq!(ima_score(&trace, SimilarityMeasure::SimAvg).unwrap(), 0.0);
    }

    #[test]
    fn composes_sim_avg_per_layer() {
        let mut rng = Rng::new(55);
        let mk_layer = |rng: &mut Rng| -> Vec<Vec<f32>> {
            (0..6)
                .map(|_| (0..4).map(|_| rng.gaussian_f32(1.0)).collect())
                .collect()
        };
        let layers = vec![mk_layer(&mut rng), mk_layer(&mut rng), mk_layer(&mut rng)];
        let trace = trace_from_rows(layers.clone());

        let mut expected_sum = 0.0;
        for rows in &layers {
            let p = TokenGroup::new("P", rows[..3].to_vec());
            let t = TokenGroup::new("T", rows[3..].to_vec());
            expected_sum += sim_avg(&p, &t).unwrap();
        }
        let got = ima_score(&trace, SimilarityMeasure::SimAvg).unwrap();
        assert!((got - expected_sum / 3.0).abs() < 1e-12);
    }

    #[test]
    fn missing_modality_is_an_error() {
        let rows = vec![vec![1.0f32, 0.0]];
        // Single token; n/2 == 0 so it is tagged text and P is empty.
        let trace = trace_from_rows(vec![rows]);
        assert!(ima_score(&trace, SimilarityMeasure::SimAvg).is_err());
    }
}
