//! `analyze`: probed forwards over the corpus, then the full metric suite.
//!
//! Residual-stream series are indexed by *level*: level 0 is the model
//! input (probe `resid_input`), level k the output of block k-1 (probe
//! `resid_post_block`). Inside-block series use the block index directly.
//!
//! Per-example values are aggregated with a plain mean across sequences:
//! - `PvT`: perceptual-union vs text within each sequence,
//! - `PvP`: distinct perceptual modalities within a sequence when the corpus
//!   has several, otherwise the same modality across sequence pairs,
//! - `TvT`: text groups across sequence pairs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use ima_core::checkpoint::ModelCheckpoint;
use ima_core::error::{Error, Result};
use ima_core::forward::{forward, ProbePoint, ProbeSet};
use ima_core::metrics::similarity::{
    consecutive_layer_sim, pairwise_sim_with, similarity, AvgSimDivisor, SimilarityMeasure,
};
use ima_core::metrics::vocab::{vocab_entropy, vocab_histogram, vocab_kl};
use ima_core::metrics::{
    export_embeddings, ima_layer_series, token_norms, LayerSeries, MetricReport, TokenGroup,
};
use ima_core::sequence::{Modality, TagFilter, TaggedSequence};
use ima_core::trace::ActivationTrace;

use crate::config::{MetricsSpec, RunConfig};
use crate::corpus::{resolve_corpus, resolve_model};
use crate::logging;
use crate::report::{envelope, write_all, OutFile};

pub fn execute(config: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let model_source = config
        .model
        .as_ref()
        .ok_or_else(|| Error::Config("analyze requires a model".into()))?;
    let corpus_source = config
        .corpus
        .as_ref()
        .ok_or_else(|| Error::Config("analyze requires a corpus".into()))?;
    let model = resolve_model(model_source)?;
    let sequences = resolve_corpus(corpus_source, &model.config)?;
    logging::debug(&format!("analyze over {} sequences", sequences.len()));

    let traces = run_forwards(&model, &sequences, &config.probes)?;
    let (report, mut files) = build_metric_report(Some(&model), &traces, &config.metrics)?;

    files.insert(0, OutFile::text("metrics.csv", report.to_csv()));
    let json = envelope("analyze", config, report.to_json_value());
    files.insert(1, OutFile::json("metrics.json", &json));
    write_all(out_dir, files)
}

pub fn run_forwards(
    model: &ModelCheckpoint,
    sequences: &[TaggedSequence],
    extra_probes: &[String],
) -> Result<Vec<ActivationTrace>> {
    let mut probes = ProbeSet::residual_stream(model.config.n_layers);
    for name in extra_probes {
        let point: ProbePoint = name.parse()?;
        probes = probes.union(&ProbeSet::at_all_layers(model.config.n_layers, point));
    }
    sequences
        .par_iter()
        .map(|seq| Ok(forward(model, seq, &probes, None)?.trace))
        .collect()
}

/// Mean accumulator per report cell, merged in sequence order.
#[derive(Default)]
struct SeriesBuilder {
    cells: BTreeMap<(usize, ProbePoint, String), (f64, usize)>,
}

impl SeriesBuilder {
    fn add(&mut self, layer: usize, probe: ProbePoint, label: &str, value: f64) {
        let slot = self
            .cells
            .entry((layer, probe, label.to_string()))
            .or_insert((0.0, 0));
        slot.0 += value;
        slot.1 += 1;
    }

    fn finish(self, metric: &str) -> Option<LayerSeries> {
        if self.cells.is_empty() {
            return None;
        }
        let mut series = LayerSeries::new(metric);
        for ((layer, probe, label), (sum, n)) in self.cells {
            series.push(layer, probe, label, sum / n as f64);
        }
        Some(series)
    }
}

/// Where a report row reads its tensor from: `(report_layer, probe, trace
/// coordinates)`.
fn residual_slots(n_layers: usize) -> Vec<(usize, ProbePoint, (usize, ProbePoint))> {
    let mut slots = vec![(0, ProbePoint::ResidInput, (0, ProbePoint::ResidInput))];
    for l in 0..n_layers {
        slots.push((
            l + 1,
            ProbePoint::ResidPostBlock,
            (l, ProbePoint::ResidPostBlock),
        ));
    }
    slots
}

fn group_at(
    trace: &ActivationTrace,
    coords: (usize, ProbePoint),
    filter: &TagFilter,
    label: &str,
) -> Option<TokenGroup> {
    trace.get(coords.0, coords.1)?;
    let group = TokenGroup::from_trace(trace, coords.0, coords.1, filter, label).ok()?;
    (!group.is_empty()).then_some(group)
}

fn sim_with_flag(
    measure: SimilarityMeasure,
    a: &TokenGroup,
    b: &TokenGroup,
    group_size_divisor: bool,
) -> Result<f64> {
    if measure == SimilarityMeasure::AvgSim && group_size_divisor {
        pairwise_sim_with(measure, a, b, AvgSimDivisor::GroupSizeSum)
    } else {
        similarity(measure, a, b)
    }
}

pub fn build_metric_report(
    model: Option<&ModelCheckpoint>,
    traces: &[ActivationTrace],
    spec: &MetricsSpec,
) -> Result<(MetricReport, Vec<OutFile>)> {
    if traces.is_empty() {
        return Err(Error::Invalid("no traces to analyze".into()));
    }
    let n_layers = traces[0].n_layers;
    let mut report = MetricReport::default();
    let mut files = Vec::new();

    // Every slot that appears in any trace: residual levels plus whatever
    // inside-block points were recorded.
    let mut slots = residual_slots(n_layers);
    let mut seen: std::collections::BTreeSet<ProbePoint> = std::collections::BTreeSet::new();
    for trace in traces {
        for &(_, probe) in trace.tensors.keys() {
            if !matches!(probe, ProbePoint::ResidInput | ProbePoint::ResidPostBlock)
                && seen.insert(probe)
            {
                for l in 0..n_layers {
                    slots.push((l, probe, (l, probe)));
                }
            }
        }
    }

    // Does any trace carry two perceptual modalities at once?
    let multi_modal = traces.iter().any(|t| {
        Modality::PERCEPTUAL
            .iter()
            .filter(|&&m| {
                t.sequence
                    .tokens
                    .iter()
                    .any(|tok| tok.tag == m && !tok.excluded)
            })
            .count()
            >= 2
    });

    for &measure in &spec.similarity {
        let mut builder = SeriesBuilder::default();
        for &(layer, probe, coords) in &slots {
            for trace in traces {
                let p = group_at(trace, coords, &TagFilter::perceptual(), "P");
                let t = group_at(trace, coords, &TagFilter::text(), "T");
                if let (Some(p), Some(t)) = (&p, &t) {
                    builder.add(
                        layer,
                        probe,
                        "PvT",
                        sim_with_flag(measure, p, t, spec.avg_sim_group_size_divisor)?,
                    );
                }
                if multi_modal {
                    let groups: Vec<TokenGroup> = Modality::PERCEPTUAL
                        .iter()
                        .filter_map(|&m| group_at(trace, coords, &TagFilter::only(m), m.as_str()))
                        .collect();
                    for i in 0..groups.len() {
                        for j in i + 1..groups.len() {
                            builder.add(
                                layer,
                                probe,
                                "PvP",
                                sim_with_flag(
                                    measure,
                                    &groups[i],
                                    &groups[j],
                                    spec.avg_sim_group_size_divisor,
                                )?,
                            );
                        }
                    }
                }
            }
            // Cross-sequence pairs for TvT (and PvP with one modality).
            for i in 0..traces.len() {
                for j in i + 1..traces.len() {
                    let ti = group_at(&traces[i], coords, &TagFilter::text(), "T");
                    let tj = group_at(&traces[j], coords, &TagFilter::text(), "T");
                    if let (Some(ti), Some(tj)) = (ti, tj) {
                        builder.add(
                            layer,
                            probe,
                            "TvT",
                            sim_with_flag(measure, &ti, &tj, spec.avg_sim_group_size_divisor)?,
                        );
                    }
                    if !multi_modal {
                        let pi = group_at(&traces[i], coords, &TagFilter::perceptual(), "P");
                        let pj = group_at(&traces[j], coords, &TagFilter::perceptual(), "P");
                        if let (Some(pi), Some(pj)) = (pi, pj) {
                            builder.add(
                                layer,
                                probe,
                                "PvP",
                                sim_with_flag(measure, &pi, &pj, spec.avg_sim_group_size_divisor)?,
                            );
                        }
                    }
                }
            }
        }
        if let Some(series) = builder.finish(&format!("sim_{}", measure.as_str())) {
            report.insert(series);
        }
    }

    for &measure in &spec.norms {
        let mut builder = SeriesBuilder::default();
        for &(layer, probe, coords) in &slots {
            for trace in traces {
                for (filter, label) in [(TagFilter::perceptual(), "P"), (TagFilter::text(), "T")] {
                    if let Some(group) = group_at(trace, coords, &filter, label) {
                        builder.add(layer, probe, label, token_norms(&group, measure)?);
                    }
                }
            }
        }
        if let Some(series) = builder.finish(&format!("norm_{}", measure.as_str())) {
            report.insert(series);
        }
    }

    for &gap in &spec.consecutive_gaps {
        for &measure in &spec.consecutive_measures {
            let mut builder = SeriesBuilder::default();
            for trace in traces {
                if trace.n_layers <= gap {
                    continue;
                }
                for (filter, label) in [(TagFilter::perceptual(), "P"), (TagFilter::text(), "T")] {
                    if trace
                        .sequence
                        .tokens
                        .iter()
                        .all(|tok| tok.excluded || !filter.matches(tok.tag))
                    {
                        continue;
                    }
                    let series = consecutive_layer_sim(trace, gap, measure, &filter, label)?;
                    for cell in &series.cells {
                        builder.add(cell.layer, cell.probe, label, cell.value);
                    }
                }
            }
            if let Some(series) =
                builder.finish(&format!("consecutive_{}_gap{gap}", measure.as_str()))
            {
                report.insert(series);
            }
        }
    }

    if let Some(model) = model {
        let levels = residual_slots(n_layers);
        if spec.vocab_kl {
            let mut builder = SeriesBuilder::default();
            for &(layer, probe, coords) in &levels {
                for trace in traces {
                    let p = group_at(trace, coords, &TagFilter::perceptual(), "P");
                    let t = group_at(trace, coords, &TagFilter::text(), "T");
                    if let (Some(p), Some(t)) = (p, t) {
                        builder.add(layer, probe, "PvT", vocab_kl(model, &p, &t)?);
                    }
                }
            }
            if let Some(series) = builder.finish("vocab_kl") {
                report.insert(series);
            }
        }
        if spec.vocab_entropy {
            let mut builder = SeriesBuilder::default();
            for &(layer, probe, coords) in &levels {
                for trace in traces {
                    for (filter, label) in
                        [(TagFilter::perceptual(), "P"), (TagFilter::text(), "T")]
                    {
                        if let Some(group) = group_at(trace, coords, &filter, label) {
                            builder.add(layer, probe, label, vocab_entropy(model, &group)?);
                        }
                    }
                }
            }
            if let Some(series) = builder.finish("vocab_entropy") {
                report.insert(series);
            }
        }
        if let Some(hist_spec) = &spec.histogram {
            files.push(histogram_file(model, traces, hist_spec, n_layers)?);
        }
    }

    // IMA series and scalar, reported on residual levels 1..=L.
    {
        let mut builder = SeriesBuilder::default();
        let mut per_trace_scores = Vec::new();
        for trace in traces {
            match ima_layer_series(trace, spec.ima_measure) {
                Ok(series) => {
                    for cell in &series.cells {
                        builder.add(
                            cell.layer + 1,
                            ProbePoint::ResidPostBlock,
                            "PvT",
                            cell.value,
                        );
                    }
                    let n = series.cells.len() as f64;
                    per_trace_scores.push(series.values().sum::<f64>() / n);
                }
                Err(_) => continue,
            }
        }
        if let Some(series) = builder.finish(&format!("ima_{}", spec.ima_measure.as_str())) {
            report.insert(series);
        }
        if !per_trace_scores.is_empty() {
            report.set_scalar(
                "ima_score",
                per_trace_scores.iter().sum::<f64>() / per_trace_scores.len() as f64,
            );
        }
    }

    for export in &spec.export {
        let probe: ProbePoint = export.probe.parse()?;
        for (idx, trace) in traces.iter().enumerate() {
            let csv = export_embeddings(trace, export.layer, probe)?;
            files.push(OutFile::text(
                format!(
                    "embeddings_seq{idx:03}_layer{}_{}.csv",
                    export.layer,
                    probe.as_str()
                ),
                csv,
            ));
        }
    }

    Ok((report, files))
}

fn histogram_file(
    model: &ModelCheckpoint,
    traces: &[ActivationTrace],
    spec: &crate::config::HistogramSpec,
    n_layers: usize,
) -> Result<OutFile> {
    if spec.layer > n_layers {
        return Err(Error::Config(format!(
            "histogram.layer {} > n_layers {n_layers}",
            spec.layer
        )));
    }
    let coords = if spec.layer == 0 {
        (0, ProbePoint::ResidInput)
    } else {
        (spec.layer - 1, ProbePoint::ResidPostBlock)
    };
    let mut out = String::from("label,bin,lo,hi,count\n");
    for (filter, label) in [(TagFilter::perceptual(), "P"), (TagFilter::text(), "T")] {
        let mut total: Option<ima_core::metrics::Histogram> = None;
        for trace in traces {
            if let Some(group) = group_at(trace, coords, &filter, label) {
                let h = vocab_histogram(model, &group, spec.bins)?;
                match &mut total {
                    None => total = Some(h),
                    Some(t) => {
                        for (a, b) in t.counts.iter_mut().zip(&h.counts) {
                            *a += b;
                        }
                    }
                }
            }
        }
        if let Some(h) = total {
            for (bin, count) in h.counts.iter().enumerate() {
                out.push_str(&format!(
                    "{label},{bin},{},{},{count}\n",
                    h.edges[bin],
                    h.edges[bin + 1]
                ));
            }
        }
    }
    Ok(OutFile::text("histogram.csv", out))
}
