//! `gen`: write synthetic corpus and/or checkpoint files. Fully seeded,
//! byte-identical across runs. Everything is generated and validated in
//! memory before the first byte hits disk.

use std::path::{Path, PathBuf};

use ima_core::checkpoint::ModelCheckpoint;
use ima_core::error::{Error, Result};
use ima_core::sequence::corpus_to_string;

use crate::config::RunConfig;
use crate::corpus::{generate_corpus, resolve_model};
use crate::report::{write_all, OutFile};

pub fn execute(config: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut checkpoint: Option<ModelCheckpoint> = None;
    let mut files = Vec::new();

    let model_config = match &config.model {
        Some(source) => {
            let model = resolve_model(source)?;
            let cfg = model.config.clone();
            if source.synth.is_some() {
                checkpoint = Some(model);
            }
            Some(cfg)
        }
        None => None,
    };

    if let Some(corpus_source) = &config.corpus {
        let spec = corpus_source.synthetic.as_ref().ok_or_else(|| {
            Error::Config("gen needs a synthetic corpus spec (a path is already generated)".into())
        })?;
        let model_config = model_config
            .as_ref()
            .ok_or_else(|| Error::Config("gen needs a model to size embeddings".into()))?;
        let sequences = generate_corpus(spec, model_config)?;
        files.push(OutFile::text("corpus.jsonl", corpus_to_string(&sequences)));
    }

    if files.is_empty() && checkpoint.is_none() {
        return Err(Error::Config(
            "gen has nothing to do: no synth model, no synthetic corpus".into(),
        ));
    }

    let mut written = Vec::new();
    if let Some(model) = &checkpoint {
        // Checkpoint directories are their own two-file format.
        let dir = out_dir.join("checkpoint");
        model.save(&dir)?;
        written.push(dir.join("manifest.json"));
        written.push(dir.join("weights.bin"));
    }
    written.extend(write_all(out_dir, files)?);
    Ok(written)
}
