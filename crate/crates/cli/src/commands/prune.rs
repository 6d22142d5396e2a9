//! `prune`: per-group mask extraction, IoU grids, the alpha-subnet
//! intersection and the transfer grid of logit-divergence proxies.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use ima_core::digest::fnv1a64;
use ima_core::error::{Error, Result};
use ima_core::prune::{
    collect_calibration, intersect_masks, mask_iou_global, mask_iou_per_layer, score_and_mask,
    transfer_eval, PruneMask, ScoreKind, TransferOptions,
};
use ima_core::sequence::TagFilter;

use crate::config::RunConfig;
use crate::corpus::{resolve_corpus, resolve_model};
use crate::logging;
use crate::report::{envelope, write_all, OutFile};

pub fn execute(config: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let spec = config
        .pruning
        .as_ref()
        .ok_or_else(|| Error::Config("prune requires a pruning section".into()))?;
    let model_source = config
        .model
        .as_ref()
        .ok_or_else(|| Error::Config("prune requires a model".into()))?;
    let corpus_source = config
        .corpus
        .as_ref()
        .ok_or_else(|| Error::Config("prune requires a corpus".into()))?;
    let model = resolve_model(model_source)?;
    let sequences = resolve_corpus(corpus_source, &model.config)?;
    let calibration = &sequences[..sequences.len().min(spec.n_calibration)];

    // One mask per (group, sparsity). Group order follows the config.
    let stats_per_group: Vec<_> = spec
        .groups
        .par_iter()
        .map(|group| {
            if spec.kind == ScoreKind::Wanda {
                let filter = TagFilter::tags(&group.tags);
                collect_calibration(&model, calibration, &filter).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut masks: BTreeMap<(String, String), PruneMask> = BTreeMap::new();
    let mut achieved = Vec::new();
    for (group, stats) in spec.groups.iter().zip(&stats_per_group) {
        for &sparsity in &spec.sparsities {
            let seed = spec.seed.map(|s| s ^ fnv1a64(group.label.as_bytes()));
            let mut mask = score_and_mask(&model, spec.kind, stats.as_ref(), sparsity, seed)?;
            mask.provenance = format!("{}:{}", spec.kind.as_str(), group.label);
            achieved.push(serde_json::json!({
                "group": group.label,
                "target_sparsity": sparsity,
                "achieved_sparsity": mask.achieved_sparsity(),
            }));
            masks.insert((group.label.clone(), sparsity_key(sparsity)), mask);
        }
    }

    // IoU grid over unordered group pairs, global and per layer.
    let mut iou_csv = String::from("sparsity,group_a,group_b,scope,layer,value\n");
    let mut labels: Vec<&str> = spec.groups.iter().map(|g| g.label.as_str()).collect();
    labels.sort_unstable();
    for &sparsity in &spec.sparsities {
        let key = sparsity_key(sparsity);
        for (i, a) in labels.iter().enumerate() {
            for b in &labels[i..] {
                let ma = &masks[&(a.to_string(), key.clone())];
                let mb = &masks[&(b.to_string(), key.clone())];
                let global = mask_iou_global(ma, mb)?;
                let _ = writeln!(iou_csv, "{key},{a},{b},global,,{global}");
                for (layer, value) in mask_iou_per_layer(ma, mb)? {
                    let _ = writeln!(iou_csv, "{key},{a},{b},layer,{layer},{value}");
                }
            }
        }
    }

    // Alpha-subnet: intersection across groups, one per sparsity.
    let mut alpha_report = Vec::new();
    let mut alpha_masks = Vec::new();
    if spec.alpha_subnet {
        for &sparsity in &spec.sparsities {
            let key = sparsity_key(sparsity);
            let group_masks: Vec<PruneMask> = labels
                .iter()
                .map(|l| masks[&(l.to_string(), key.clone())].clone())
                .collect();
            let alpha = intersect_masks(&group_masks)?;
            alpha_report.push(serde_json::json!({
                "target_sparsity": sparsity,
                "achieved_sparsity": alpha.achieved_sparsity(),
                "groups": labels,
            }));
            alpha_masks.push((key, alpha));
        }
    }

    // Transfer grid: source mask evaluated on every group's token filter.
    let mut transfer_csv = String::from("sparsity,source,target,mean_logit_kl,n_tokens\n");
    if spec.transfer {
        let cells: Vec<(String, String, String)> = spec
            .sparsities
            .iter()
            .flat_map(|&s| {
                spec.groups.iter().flat_map(move |src| {
                    spec.groups
                        .iter()
                        .map(move |tgt| (sparsity_key(s), src.label.clone(), tgt.label.clone()))
                })
            })
            .collect();
        let rows: Vec<String> = cells
            .par_iter()
            .map(|(key, src, tgt)| {
                let mask = &masks[&(src.clone(), key.clone())];
                let target_tags = &spec
                    .groups
                    .iter()
                    .find(|g| &g.label == tgt)
                    .expect("target exists")
                    .tags;
                let options = TransferOptions {
                    target_filter: TagFilter::tags(target_tags),
                    logit_kl: true,
                    ima_measure: None,
                };
                let report = transfer_eval(&model, mask, &sequences, &options)?;
                Ok(format!(
                    "{key},{src},{tgt},{},{}\n",
                    report.mean_logit_kl.unwrap_or(f64::NAN),
                    report.n_tokens
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        for row in rows {
            transfer_csv.push_str(&row);
        }
        logging::debug("transfer grid complete");
    }

    // Assemble outputs; mask directories are written through their own
    // two-file writer after the validation work above succeeded.
    let mut files = vec![OutFile::text("iou_grid.csv", iou_csv)];
    if spec.transfer {
        files.push(OutFile::text("transfer_grid.csv", transfer_csv));
    }
    let body = serde_json::json!({
        "kind": spec.kind.as_str(),
        "masks": achieved,
        "alpha_subnet": alpha_report,
        "calibration_sequences": calibration.len(),
    });
    files.push(OutFile::json(
        "prune.json",
        &envelope("prune", config, body),
    ));
    let mut written = write_all(out_dir, files)?;

    for ((label, key), mask) in &masks {
        let dir = out_dir.join("masks").join(format!("{label}_s{key}"));
        mask.save(&dir)?;
        written.push(dir.join("manifest.json"));
        written.push(dir.join("mask.bits"));
    }
    for (key, alpha) in &alpha_masks {
        let dir = out_dir.join("masks").join(format!("alpha_s{key}"));
        alpha.save(&dir)?;
        written.push(dir.join("manifest.json"));
        written.push(dir.join("mask.bits"));
    }
    Ok(written)
}

fn sparsity_key(s: f64) -> String {
    format!("{s}")
}
