//! Tagged token sequences and the JSON-lines corpus format.
//!
//! A sequence mixes textual tokens (embedded through the model's embedding
//! table) with perceptual tokens whose embeddings are injected directly,
//! standing in for encoded image/video/audio prompts. The `excluded` flag
//! marks tokens (system message, BOS) that take part in the forward pass but
//! are dropped from every metric.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};

/// Modality tag. Enum order is the canonical report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Video,
    Audio,
    Text,
}

impl Modality {
    pub const ALL: [Modality; 4] = [
        Modality::Image,
        Modality::Video,
        Modality::Audio,
        Modality::Text,
    ];
    pub const PERCEPTUAL: [Modality; 3] = [Modality::Image, Modality::Video, Modality::Audio];

    pub fn is_perceptual(self) -> bool {
        self != Modality::Text
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Video => "video",
            Modality::Audio => "audio",
            Modality::Text => "text",
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Set of modality tags used to select tokens for metrics and calibration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagFilter(pub BTreeSet<Modality>);

impl TagFilter {
    pub fn any() -> Self {
        TagFilter(Modality::ALL.into_iter().collect())
    }

    pub fn perceptual() -> Self {
        TagFilter(Modality::PERCEPTUAL.into_iter().collect())
    }

    pub fn text() -> Self {
        TagFilter([Modality::Text].into_iter().collect())
    }

    pub fn only(tag: Modality) -> Self {
        TagFilter([tag].into_iter().collect())
    }

    pub fn tags(tags: &[Modality]) -> Self {
        TagFilter(tags.iter().copied().collect())
    }

    pub fn matches(&self, tag: Modality) -> bool {
        self.0.contains(&tag)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Token {
    pub id: u32,
    pub tag: Modality,
    #[serde(default)]
    pub excluded: bool,
    /// Raw hidden-dim vector substituting the embedding lookup.
    /// Present iff the tag is perceptual.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
}

impl Token {
    pub fn text(id: u32) -> Self {
        Token {
            id,
            tag: Modality::Text,
            excluded: false,
            embedding: None,
        }
    }

    pub fn perceptual(tag: Modality, embedding: Vec<f32>) -> Self {
        Token {
            id: 0,
            tag,
            excluded: false,
            embedding: Some(embedding),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaggedSequence {
    pub tokens: Vec<Token>,
}

impl TaggedSequence {
    pub fn new(tokens: Vec<Token>) -> Self {
        TaggedSequence { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Positions whose tag is in the filter. Ignores the excluded flag.
    pub fn indices_with_tags(&self, filter: &TagFilter) -> Vec<usize> {
        self.tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| filter.matches(t.tag))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Invalid("sequence is empty".into()));
        }
        if self.tokens.len() > config.max_seq_len {
            return Err(Error::Invalid(format!(
                "sequence length {} exceeds max_seq_len {}",
                self.tokens.len(),
                config.max_seq_len
            )));
        }
        for (i, tok) in self.tokens.iter().enumerate() {
            if tok.id as usize >= config.vocab_size {
                return Err(Error::Invalid(format!(
                    "token {i}: id {} out of vocab (size {})",
                    tok.id, config.vocab_size
                )));
            }
            match (&tok.embedding, tok.tag.is_perceptual()) {
                (Some(emb), true) => {
                    if emb.len() != config.hidden_dim {
                        return Err(Error::ShapeMismatch {
                            name: format!("token {i} embedding"),
                            expected: vec![config.hidden_dim],
                            got: vec![emb.len()],
                        });
                    }
                    if !emb.iter().all(|v| v.is_finite()) {
                        return Err(Error::NonFinite(format!("token {i} embedding")));
                    }
                }
                (None, true) => {
                    return Err(Error::Invalid(format!(
                        "token {i}: perceptual tag {} without injected embedding",
                        tok.tag
                    )));
                }
                (Some(_), false) => {
                    return Err(Error::Invalid(format!(
                        "token {i}: text token carries an injected embedding"
                    )));
                }
                (None, false) => {}
            }
        }
        Ok(())
    }
}

/// Canonical JSON-lines rendering: one sequence per line, trailing newline.
pub fn corpus_to_string(sequences: &[TaggedSequence]) -> String {
    let mut out = String::new();
    for seq in sequences {
        out.push_str(&serde_json::to_string(seq).expect("sequence serializes"));
        out.push('\n');
    }
    out
}

pub fn write_corpus(path: &Path, sequences: &[TaggedSequence]) -> Result<()> {
    fs::write(path, corpus_to_string(sequences)).map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: &Path) -> Result<Vec<TaggedSequence>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut sequences = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let seq: TaggedSequence = serde_json::from_str(&line)
            .map_err(|e| Error::corrupt(path, format!("line {}: {e}", lineno + 1)))?;
        sequences.push(seq);
    }
    if sequences.is_empty() {
        return Err(Error::corrupt(path, "corpus holds no sequences"));
    }
    Ok(sequences)
}
