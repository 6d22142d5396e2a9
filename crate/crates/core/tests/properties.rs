//! Randomized invariants for the metric and mask algebra.

use proptest::prelude::*;

use ima_core::checkpoint::ModelCheckpoint;
use ima_core::config::ModelConfig;
use ima_core::metrics::similarity::{pairwise_sim, similarity, SimilarityMeasure};
use ima_core::metrics::vocab::{entropy, kl_divergence};
use ima_core::metrics::{sim_avg, token_norms, NormMeasure, TokenGroup};
use ima_core::prune::{mask_iou_global, mask_iou_per_layer, score_and_mask, ScoreKind};
use ima_core::rng::Rng;
use ima_core::skip::{count_flops, SkipPlan};

fn vector(dim: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-5.0f32..5.0, dim).prop_filter("non-degenerate", |v| {
        v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt() > 1e-3
    })
}

fn group(dim: usize, max_len: usize) -> impl Strategy<Value = TokenGroup> {
    prop::collection::vec(vector(dim), 1..=max_len)
        .prop_filter("pooled mean non-degenerate", |vs| {
            let mut mean = vec![0.0f64; vs[0].len()];
            for v in vs {
                for (m, &x) in mean.iter_mut().zip(v) {
                    *m += x as f64;
                }
            }
            mean.iter().map(|m| m * m).sum::<f64>().sqrt() / vs.len() as f64 > 1e-3
        })
        .prop_map(|vs| TokenGroup::new("g", vs))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn similarity_bounds_and_symmetry(a in group(6, 6), b in group(6, 6)) {
        for measure in SimilarityMeasure::ALL {
            let ab = similarity(measure, &a, &b).unwrap();
            let ba = similarity(measure, &b, &a).unwrap();
            prop_assert!((-1.0..=1.0).contains(&ab), "{measure:?} out of range: {ab}");
            prop_assert!((ab - ba).abs() < 1e-12, "{measure:?} asymmetric");
        }
    }

    #[test]
    fn similarity_scale_invariance(a in group(5, 5), b in group(5, 5), log2_scale in -8i32..9) {
        // Power-of-two scales multiply f32 inputs exactly; arbitrary scalars
        // would perturb the stored vectors at ~1e-7 before the measure runs.
        let scale = (2.0f32).powi(log2_scale);
        let scale_group = |g: &TokenGroup| {
            TokenGroup::new(
                "s",
                g.vectors.iter().map(|v| v.iter().map(|&x| x * scale).collect()).collect(),
            )
        };
        let (sa, sb) = (scale_group(&a), scale_group(&b));
        for measure in SimilarityMeasure::ALL {
            let plain = similarity(measure, &a, &b).unwrap();
            let scaled = similarity(measure, &sa, &sb).unwrap();
            prop_assert!((plain - scaled).abs() < 1e-9, "{measure:?}: {plain} vs {scaled}");
        }
    }

    #[test]
    fn similarity_ordering(a in group(6, 6), b in group(6, 6)) {
        let min = pairwise_sim(SimilarityMeasure::MinSim, &a, &b).unwrap();
        let med = pairwise_sim(SimilarityMeasure::MedSim, &a, &b).unwrap();
        let avg = pairwise_sim(SimilarityMeasure::AvgSim, &a, &b).unwrap();
        let max = pairwise_sim(SimilarityMeasure::MaxSim, &a, &b).unwrap();
        prop_assert!(min <= med + 1e-12 && med <= max + 1e-12);
        prop_assert!(min <= avg + 1e-12 && avg <= max + 1e-12);
    }

    #[test]
    fn norms_are_non_negative_and_ordered(g in group(6, 7)) {
        let min = token_norms(&g, NormMeasure::MinNorm).unwrap();
        let med = token_norms(&g, NormMeasure::MedianNorm).unwrap();
        let max = token_norms(&g, NormMeasure::MaxNorm).unwrap();
        let pooled = token_norms(&g, NormMeasure::NormAvg).unwrap();
        prop_assert!(min >= 0.0 && pooled >= 0.0);
        prop_assert!(min <= med + 1e-12 && med <= max + 1e-12);
        // Pooling never exceeds the largest token norm.
        prop_assert!(pooled <= max + 1e-9);
    }

    #[test]
    fn kl_non_negative_entropy_in_range(
        la in prop::collection::vec(-4.0f64..4.0, 8),
        lb in prop::collection::vec(-4.0f64..4.0, 8),
    ) {
        let p = ima_core::fmath::softmax(&la);
        let q = ima_core::fmath::softmax(&lb);
        prop_assert!(kl_divergence(&p, &q) >= 0.0);
        let h = entropy(&p);
        prop_assert!(h >= 0.0 && h <= (8.0f64).ln() + 1e-12);
    }

    #[test]
    fn cone_structure_separates_modalities(seed in 0u64..1000) {
        // Shared mean direction per modality plus Gaussian noise at
        // sigma = 0.1 * ||mean||: intra-modal pooled similarity beats
        // cross-modal by a clear margin.
        let d = 16;
        let mut rng = Rng::new(seed);
        let unit_mean = |rng: &mut Rng| -> Vec<f64> {
            let v: Vec<f64> = (0..d).map(|_| rng.gaussian()).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        };
        let mean_a = unit_mean(&mut rng);
        let mean_b = unit_mean(&mut rng);
        let sample = |rng: &mut Rng, mean: &[f64], n: usize| -> TokenGroup {
            TokenGroup::new(
                "m",
                (0..n)
                    .map(|_| {
                        mean.iter()
                            .map(|&m| (m + 0.1 * rng.gaussian()) as f32)
                            .collect()
                    })
                    .collect(),
            )
        };
        let a1 = sample(&mut rng, &mean_a, 8);
        let a2 = sample(&mut rng, &mean_a, 8);
        let b = sample(&mut rng, &mean_b, 8);
        let intra = sim_avg(&a1, &a2).unwrap();
        let cross = sim_avg(&a1, &b).unwrap();
        prop_assert!(intra > cross + 0.1, "intra {intra} cross {cross}");
    }

    #[test]
    fn iou_bounds_and_identity(seed_a in 0u64..500, seed_b in 0u64..500, sparsity in 0.05f64..0.95) {
        let model = ModelCheckpoint::synthesize(&ModelConfig::toy(1, 8, 2, 16, 16), 2).unwrap();
        let a = score_and_mask(&model, ScoreKind::Random, None, sparsity, Some(seed_a)).unwrap();
        let b = score_and_mask(&model, ScoreKind::Random, None, sparsity, Some(seed_b)).unwrap();
        let ab = mask_iou_global(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((mask_iou_global(&b, &a).unwrap() - ab).abs() < 1e-15);
        prop_assert!((mask_iou_global(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        for (_, v) in mask_iou_per_layer(&a, &b).unwrap() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn mask_nesting_across_random_sparsities(s1 in 0.0f64..0.97, delta in 0.01f64..0.5) {
        let s2 = (s1 + delta).min(0.99);
        let model = ModelCheckpoint::synthesize(&ModelConfig::toy(1, 8, 2, 16, 16), 3).unwrap();
        for kind in [ScoreKind::Magnitude, ScoreKind::Random] {
            let lo = score_and_mask(&model, kind, None, s1, Some(11)).unwrap();
            let hi = score_and_mask(&model, kind, None, s2, Some(11)).unwrap();
            for (key, m_lo) in &lo.matrices {
                prop_assert!(m_lo.contains(&hi.matrices[key]), "{kind:?} {key:?}");
            }
        }
    }

    #[test]
    fn flop_breakdown_sums_to_total(n_skip0 in 0usize..4, n_skip1 in 0usize..4) {
        let config = ModelConfig::toy(2, 8, 2, 16, 32);
        let plan = SkipPlan {
            per_layer: vec![(0..n_skip0).collect(), (0..n_skip1).collect()],
        };
        let b = count_flops(&config, 4, &plan).unwrap();
        prop_assert_eq!(b.total, b.attention + b.ffn + b.norms + b.unembedding);
        prop_assert!(b.total <= b.baseline);
        let expected = 1.0 - b.total as f64 / b.baseline as f64;
        prop_assert!((b.reduction_fraction - expected).abs() < 1e-15);
    }
}

/// Flipping a token's excluded flag must not move any metric computed over
/// the remaining tokens: the groups built from the trace are identical.
#[test]
fn exclusion_leaves_remaining_metrics_unchanged() {
    use ima_core::forward::{forward, ProbePoint, ProbeSet};
    use ima_core::sequence::{Modality, TagFilter, TaggedSequence, Token};

    let model = ModelCheckpoint::synthesize(&ModelConfig::toy(2, 8, 2, 16, 32), 41).unwrap();
    let mut tokens = vec![
        Token::perceptual(Modality::Image, vec![0.5; 8]),
        Token::perceptual(Modality::Image, vec![-0.5; 8]),
        Token::text(3),
        Token::text(9),
        Token::text(12),
    ];
    let base_seq = TaggedSequence::new(tokens.clone());
    tokens[3].excluded = true;
    let flagged_seq = TaggedSequence::new(tokens);

    let probes = ProbeSet::residual_stream(2);
    let base = forward(&model, &base_seq, &probes, None).unwrap();
    let flagged = forward(&model, &flagged_seq, &probes, None).unwrap();

    // Token 3 dropped from the baseline group by hand; the flagged trace
    // drops it via the excluded flag. Metrics agree exactly.
    for layer in 0..2 {
        let t_flagged = TokenGroup::from_trace(
            &flagged.trace,
            layer,
            ProbePoint::ResidPostBlock,
            &TagFilter::text(),
            "T",
        )
        .unwrap();
        let t_manual = {
            let full = TokenGroup::from_trace(
                &base.trace,
                layer,
                ProbePoint::ResidPostBlock,
                &TagFilter::text(),
                "T",
            )
            .unwrap();
            let keep: Vec<Vec<f32>> = full
                .vectors
                .iter()
                .zip(&full.indices)
                .filter(|(_, &i)| i != 3)
                .map(|(v, _)| v.clone())
                .collect();
            TokenGroup::new("T", keep)
        };
        let p = TokenGroup::from_trace(
            &flagged.trace,
            layer,
            ProbePoint::ResidPostBlock,
            &TagFilter::perceptual(),
            "P",
        )
        .unwrap();
        for measure in SimilarityMeasure::ALL {
            let a = similarity(measure, &p, &t_flagged).unwrap();
            let b = similarity(measure, &p, &t_manual).unwrap();
            assert_eq!(a, b, "{measure:?} layer {layer}");
        }
        assert_eq!(
            token_norms(&t_flagged, NormMeasure::MedianNorm).unwrap(),
            token_norms(&t_manual, NormMeasure::MedianNorm).unwrap()
        );
    }
}
