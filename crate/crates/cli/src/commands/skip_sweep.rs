//! `skip-sweep`: grid of (skip ratio, start layer) cells, each reporting the
//! exact FLOP reduction, the mean logit divergence against the unskipped
//! baseline, and the IMA score under skipping.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use ima_core::checkpoint::ModelCheckpoint;
use ima_core::error::{Error, Result};
use ima_core::forward::{forward, forward_with_plan, ProbeSet};
use ima_core::logit_lens::distribution_from_logits;
use ima_core::metrics::ima::ima_score;
use ima_core::metrics::similarity::SimilarityMeasure;
use ima_core::metrics::vocab::kl_divergence;
use ima_core::sequence::TaggedSequence;
use ima_core::skip::{count_flops, plan_skips, SkipPolicy};
use ima_core::tensor::Matrix;

use crate::config::{RunConfig, SkipSweepSpec};
use crate::corpus::{resolve_corpus, resolve_model};
use crate::report::{envelope, write_all, OutFile};

pub fn execute(config: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let spec = config
        .skip_sweep
        .as_ref()
        .ok_or_else(|| Error::Config("skip-sweep requires a skip_sweep section".into()))?;
    let model_source = config
        .model
        .as_ref()
        .ok_or_else(|| Error::Config("skip-sweep requires a model".into()))?;
    let corpus_source = config
        .corpus
        .as_ref()
        .ok_or_else(|| Error::Config("skip-sweep requires a corpus".into()))?;
    let model = resolve_model(model_source)?;
    let sequences = resolve_corpus(corpus_source, &model.config)?;
    for &sl in &spec.start_layers {
        if sl > model.config.n_layers {
            return Err(Error::Config(format!(
                "start_layer {sl} > n_layers {}",
                model.config.n_layers
            )));
        }
    }

    // Unskipped baseline logits, once per sequence.
    let baselines: Vec<Matrix> = sequences
        .par_iter()
        .map(|seq| Ok(forward(&model, seq, &ProbeSet::empty(), None)?.logits))
        .collect::<Result<Vec<_>>>()?;

    let cells: Vec<(f64, usize)> = spec
        .ratios
        .iter()
        .flat_map(|&r| spec.start_layers.iter().map(move |&sl| (r, sl)))
        .collect();
    let rows: Vec<String> = cells
        .par_iter()
        .map(|&(ratio, sl)| sweep_cell(&model, &sequences, &baselines, spec, ratio, sl))
        .collect::<Result<Vec<_>>>()?;

    let mut csv =
        String::from("skip_ratio,start_layer,reduction_fraction,mean_logit_kl,ima_score\n");
    for row in &rows {
        csv.push_str(row);
    }
    let body = serde_json::json!({
        "grid": {
            "ratios": spec.ratios,
            "start_layers": spec.start_layers,
            "n_seeds": spec.n_seeds,
        },
        "rows": rows.iter().map(|r| r.trim_end().to_string()).collect::<Vec<_>>(),
    });
    let files = vec![
        OutFile::text("sweep.csv", csv),
        OutFile::json("sweep.json", &envelope("skip-sweep", config, body)),
    ];
    write_all(out_dir, files)
}

fn sweep_cell(
    model: &ModelCheckpoint,
    sequences: &[TaggedSequence],
    baselines: &[Matrix],
    spec: &SkipSweepSpec,
    ratio: f64,
    start_layer: usize,
) -> Result<String> {
    let n_layers = model.config.n_layers;
    let probes = ProbeSet::residual_stream(n_layers);

    let mut kl_sum = 0.0f64;
    let mut kl_n = 0usize;
    let mut ima_sum = 0.0f64;
    let mut ima_n = 0usize;
    let mut flops_total = 0u64;
    let mut flops_baseline = 0u64;

    for seed_offset in 0..spec.n_seeds as u64 {
        let policy = SkipPolicy {
            start_layer,
            skip_ratio: ratio,
            target_tags: spec.tags.iter().copied().collect(),
            selection: spec.selection,
            seed: spec.seed.wrapping_add(seed_offset),
        };
        for (seq, baseline) in sequences.iter().zip(baselines) {
            let plan = plan_skips(&policy, seq, n_layers)?;
            // The budget depends on set sizes only, identical across seeds;
            // accumulate it on the first seed.
            if seed_offset == 0 {
                let budget = count_flops(&model.config, seq.len(), &plan)?;
                flops_total += budget.total;
                flops_baseline += budget.baseline;
            }
            let out = forward_with_plan(model, seq, &probes, &plan)?;
            for (t, tok) in seq.tokens.iter().enumerate() {
                if tok.excluded {
                    continue;
                }
                let p = distribution_from_logits(baseline.row(t));
                let q = distribution_from_logits(out.logits.row(t));
                kl_sum += kl_divergence(&p, &q);
                kl_n += 1;
            }
            ima_sum += ima_score(&out.trace, SimilarityMeasure::SimAvg)?;
            ima_n += 1;
        }
    }

    let reduction = 1.0 - flops_total as f64 / flops_baseline as f64;
    let mean_kl = kl_sum / kl_n as f64;
    let ima = ima_sum / ima_n as f64;
    Ok(format!(
        "{ratio},{start_layer},{reduction},{mean_kl},{ima}\n"
    ))
}
