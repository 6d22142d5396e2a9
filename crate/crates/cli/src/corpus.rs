//! Synthetic corpus generation: per-modality mean directions plus noise,
//! standing in for encoded image/video/audio prompts.

use ima_core::checkpoint::ModelCheckpoint;
use ima_core::config::ModelConfig;
use ima_core::error::{Error, Result};
use ima_core::rng::Rng;
use ima_core::sequence::{read_corpus, TaggedSequence, Token};

use crate::config::{CorpusSource, EmbeddingGenerator, SegmentSpec, SyntheticCorpusSpec};

pub fn resolve_model(source: &crate::config::ModelSource) -> Result<ModelCheckpoint> {
    match (&source.path, &source.synth) {
        (Some(path), None) => ModelCheckpoint::load(path),
        (None, Some(synth)) => ModelCheckpoint::synthesize(&synth.config, synth.seed),
        _ => Err(Error::Config("model: give path or synth".into())),
    }
}

pub fn resolve_corpus(source: &CorpusSource, config: &ModelConfig) -> Result<Vec<TaggedSequence>> {
    let sequences = match (&source.path, &source.synthetic) {
        (Some(path), None) => read_corpus(path)?,
        (None, Some(spec)) => generate_corpus(spec, config)?,
        _ => return Err(Error::Config("corpus: give path or synthetic".into())),
    };
    for (i, seq) in sequences.iter().enumerate() {
        seq.validate(config)
            .map_err(|e| Error::Invalid(format!("sequence {i}: {e}")))?;
    }
    Ok(sequences)
}

/// Unit-norm mean direction of one segment's modality cone.
fn modality_mean(spec: &SyntheticCorpusSpec, segment: &SegmentSpec, dim: usize) -> Vec<f64> {
    let seed = segment.mean_seed.unwrap_or(spec.seed);
    let mut rng = Rng::seeded_with(seed, &format!("modality-mean:{}", segment.tag));
    let v: Vec<f64> = (0..dim).map(|_| rng.gaussian()).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

pub fn generate_corpus(
    spec: &SyntheticCorpusSpec,
    config: &ModelConfig,
) -> Result<Vec<TaggedSequence>> {
    spec.validate()?;
    if spec.tokens_per_sequence() > config.max_seq_len {
        return Err(Error::Config(format!(
            "synthetic sequences of {} tokens exceed max_seq_len {}",
            spec.tokens_per_sequence(),
            config.max_seq_len
        )));
    }
    let d = config.hidden_dim;
    let means: Vec<Option<Vec<f64>>> = spec
        .segments
        .iter()
        .map(|seg| seg.tag.is_perceptual().then(|| modality_mean(spec, seg, d)))
        .collect();

    let mut rng = Rng::new(spec.seed);
    let mut sequences = Vec::with_capacity(spec.n_sequences);
    for _ in 0..spec.n_sequences {
        let mut tokens = Vec::with_capacity(spec.tokens_per_sequence());
        for (seg, mean) in spec.segments.iter().zip(&means) {
            for _ in 0..seg.n_tokens {
                let token = if let Some(mean) = mean {
                    let emb: Vec<f32> = match seg.generator {
                        EmbeddingGenerator::GaussianAroundMean => mean
                            .iter()
                            .map(|&m| (m + seg.sigma * rng.gaussian()) as f32)
                            .collect(),
                        EmbeddingGenerator::UnitSphereUniform => {
                            let v: Vec<f64> = (0..d).map(|_| rng.gaussian()).collect();
                            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                            v.into_iter().map(|x| (x / norm) as f32).collect()
                        }
                    };
                    Token::perceptual(seg.tag, emb)
                } else {
                    Token::text(rng.next_below(config.vocab_size as u64) as u32)
                };
                tokens.push(token);
            }
        }
        if spec.exclude_first {
            tokens[0].excluded = true;
        }
        sequences.push(TaggedSequence::new(tokens));
    }
    Ok(sequences)
}
