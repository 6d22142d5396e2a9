//! `trace-analyze`: the metric suite over previously dumped trace files.
//! A model is optional; without one the vocabulary metrics are skipped.

use std::path::{Path, PathBuf};

use ima_core::error::{Error, Result};
use ima_core::trace::load_trace;

use crate::commands::analyze::build_metric_report;
use crate::config::RunConfig;
use crate::corpus::resolve_model;
use crate::logging;
use crate::report::{envelope, write_all, OutFile};

pub fn execute(config: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let trace_dir = config
        .trace_dir
        .as_ref()
        .ok_or_else(|| Error::Config("trace-analyze requires trace_dir".into()))?;

    let mut paths: Vec<PathBuf> = std::fs::read_dir(trace_dir)
        .map_err(|e| Error::io(trace_dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "imatrace"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Invalid(format!(
            "no .imatrace files under {}",
            trace_dir.display()
        )));
    }
    let traces = paths
        .iter()
        .map(|p| load_trace(p))
        .collect::<Result<Vec<_>>>()?;
    logging::debug(&format!("loaded {} traces", traces.len()));

    // A mixed directory would silently average across different models.
    for (path, trace) in paths.iter().zip(&traces).skip(1) {
        if trace.config_digest != traces[0].config_digest {
            return Err(Error::Invalid(format!(
                "{}: config digest {} differs from {} ({})",
                path.display(),
                trace.config_digest,
                paths[0].display(),
                traces[0].config_digest
            )));
        }
    }

    let model = match &config.model {
        Some(source) => {
            let model = resolve_model(source)?;
            for trace in &traces {
                trace.check_model(&model)?;
            }
            Some(model)
        }
        None => None,
    };

    let (report, mut files) = build_metric_report(model.as_ref(), &traces, &config.metrics)?;
    files.insert(0, OutFile::text("metrics.csv", report.to_csv()));
    let json = envelope("trace-analyze", config, report.to_json_value());
    files.insert(1, OutFile::json("metrics.json", &json));
    write_all(out_dir, files)
}
