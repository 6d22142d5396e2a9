//! `trace-dump`: run probed forwards and write one trace file per sequence,
//! for later (or external) analysis.

use std::path::{Path, PathBuf};

use ima_core::error::{Error, Result};
use ima_core::trace::save_trace;

use crate::commands::analyze::run_forwards;
use crate::config::RunConfig;
use crate::corpus::{resolve_corpus, resolve_model};

pub fn execute(config: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let model_source = config
        .model
        .as_ref()
        .ok_or_else(|| Error::Config("trace-dump requires a model".into()))?;
    let corpus_source = config
        .corpus
        .as_ref()
        .ok_or_else(|| Error::Config("trace-dump requires a corpus".into()))?;
    let model = resolve_model(model_source)?;
    let sequences = resolve_corpus(corpus_source, &model.config)?;
    let traces = run_forwards(&model, &sequences, &config.probes)?;

    let trace_dir = match &config.trace_dir {
        Some(dir) => out_dir.join(dir),
        None => out_dir.join("traces"),
    };
    std::fs::create_dir_all(&trace_dir).map_err(|e| Error::io(&trace_dir, e))?;
    let mut written = Vec::with_capacity(traces.len());
    for (i, trace) in traces.iter().enumerate() {
        let path = trace_dir.join(format!("trace_{i:04}.imatrace"));
        save_trace(trace, &path)?;
        written.push(path);
    }
    Ok(written)
}
