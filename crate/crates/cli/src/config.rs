//! Run configuration: a single strict JSON document. Unknown keys are
//! rejected everywhere so sweep-spec typos fail fast.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ima_core::config::ModelConfig;
use ima_core::error::{Error, Result};
use ima_core::metrics::similarity::{ConsecutiveMeasure, SimilarityMeasure};
use ima_core::metrics::NormMeasure;
use ima_core::prune::ScoreKind;
use ima_core::sequence::Modality;
use ima_core::skip::SkipSelection;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<CorpusSource>,
    /// Extra probe points recorded at every layer, on top of the residual
    /// stream (names as in the trace format: post_ln1, post_sa, ...).
    #[serde(default)]
    pub probes: Vec<String>,
    #[serde(default)]
    pub metrics: MetricsSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pruning: Option<PruningSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_sweep: Option<SkipSweepSpec>,
    /// Trace directory: output of trace-dump, input of trace-analyze.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthModelSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthModelSpec {
    pub config: ModelConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticCorpusSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticCorpusSpec {
    pub n_sequences: usize,
    pub seed: u64,
    /// Ordered segments of every sequence; at least one perceptual and one
    /// text segment are required.
    pub segments: Vec<SegmentSpec>,
    /// Mark the first token of every sequence excluded (a BOS stand-in).
    #[serde(default)]
    pub exclude_first: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub tag: Modality,
    pub n_tokens: usize,
    #[serde(default)]
    pub generator: EmbeddingGenerator,
    /// Noise scale for gaussian_around_mean; ignored for text.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Seed of this modality's mean direction; derived from the corpus seed
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_seed: Option<u64>,
}

fn default_sigma() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingGenerator {
    #[default]
    GaussianAroundMean,
    UnitSphereUniform,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSpec {
    pub similarity: Vec<SimilarityMeasure>,
    pub norms: Vec<NormMeasure>,
    pub consecutive_gaps: Vec<usize>,
    pub consecutive_measures: Vec<ConsecutiveMeasure>,
    pub vocab_kl: bool,
    pub vocab_entropy: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histogram: Option<HistogramSpec>,
    pub ima_measure: SimilarityMeasure,
    /// Divide AvgSim by |P|+|T| (the literal normalization some plots use)
    /// instead of the all-pairs mean.
    pub avg_sim_group_size_divisor: bool,
    pub export: Vec<ExportSpec>,
}

impl Default for MetricsSpec {
    fn default() -> Self {
        MetricsSpec {
            similarity: vec![SimilarityMeasure::SimAvg],
            norms: NormMeasure::ALL.to_vec(),
            consecutive_gaps: vec![1],
            consecutive_measures: vec![ConsecutiveMeasure::SimAvg],
            vocab_kl: true,
            vocab_entropy: true,
            histogram: None,
            ima_measure: SimilarityMeasure::SimAvg,
            avg_sim_group_size_divisor: false,
            export: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSpec {
    /// Residual level: 0 is the model input, k the output of block k-1.
    pub layer: usize,
    pub bins: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportSpec {
    pub layer: usize,
    pub probe: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruningSpec {
    pub kind: ScoreKind,
    pub sparsities: Vec<f64>,
    pub groups: Vec<CalibGroupSpec>,
    /// Calibration sample cap, in sequences.
    #[serde(default = "default_calibration_examples")]
    pub n_calibration: usize,
    #[serde(default)]
    pub alpha_subnet: bool,
    #[serde(default)]
    pub transfer: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_calibration_examples() -> usize {
    256
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibGroupSpec {
    pub label: String,
    pub tags: Vec<Modality>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkipSweepSpec {
    pub ratios: Vec<f64>,
    pub start_layers: Vec<usize>,
    pub tags: Vec<Modality>,
    #[serde(default)]
    pub selection: SkipSelection,
    pub seed: u64,
    /// Seeds averaged per sweep cell.
    #[serde(default = "default_n_seeds")]
    pub n_seeds: usize,
}

fn default_n_seeds() -> usize {
    1
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// CLI flags win over the config document. `--seed` replaces every seed.
    pub fn apply_overrides(&mut self, out: Option<&Path>, seed: Option<u64>) {
        if let Some(out) = out {
            self.out_dir = Some(out.to_path_buf());
        }
        if let Some(seed) = seed {
            if let Some(synth) = self.model.as_mut().and_then(|m| m.synth.as_mut()) {
                synth.seed = seed;
            }
            if let Some(spec) = self.corpus.as_mut().and_then(|c| c.synthetic.as_mut()) {
                spec.seed = seed;
            }
            if let Some(pruning) = self.pruning.as_mut() {
                if pruning.seed.is_some() || pruning.kind == ScoreKind::Random {
                    pruning.seed = Some(seed);
                }
            }
            if let Some(sweep) = self.skip_sweep.as_mut() {
                sweep.seed = seed;
            }
        }
    }

    pub fn resolved_out_dir(&self) -> Result<PathBuf> {
        self.out_dir
            .clone()
            .ok_or_else(|| Error::Config("no output directory (out_dir or --out)".into()))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(model) = &self.model {
            match (&model.path, &model.synth) {
                (Some(_), Some(_)) => {
                    return Err(Error::Config("model: give path or synth, not both".into()))
                }
                (None, None) => return Err(Error::Config("model: give path or synth".into())),
                (Some(path), None) => {
                    if !path.exists() {
                        return Err(Error::Config(format!(
                            "model path {} does not exist",
                            path.display()
                        )));
                    }
                }
                (None, Some(synth)) => synth.config.validate()?,
            }
        }
        if let Some(corpus) = &self.corpus {
            match (&corpus.path, &corpus.synthetic) {
                (Some(_), Some(_)) => {
                    return Err(Error::Config(
                        "corpus: give path or synthetic, not both".into(),
                    ))
                }
                (None, None) => return Err(Error::Config("corpus: give path or synthetic".into())),
                (Some(path), None) => {
                    if !path.exists() {
                        return Err(Error::Config(format!(
                            "corpus path {} does not exist",
                            path.display()
                        )));
                    }
                }
                (None, Some(spec)) => spec.validate()?,
            }
        }
        for probe in &self.probes {
            probe.parse::<ima_core::forward::ProbePoint>()?;
        }
        if let Some(spec) = &self.metrics.histogram {
            if spec.bins == 0 {
                return Err(Error::Config("histogram.bins must be >= 1".into()));
            }
        }
        for export in &self.metrics.export {
            export.probe.parse::<ima_core::forward::ProbePoint>()?;
        }
        for gap in &self.metrics.consecutive_gaps {
            if *gap == 0 {
                return Err(Error::Config("consecutive gaps must be >= 1".into()));
            }
        }
        if let Some(pruning) = &self.pruning {
            pruning.validate()?;
        }
        if let Some(sweep) = &self.skip_sweep {
            sweep.validate()?;
        }
        Ok(())
    }
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_sequences == 0 {
            return Err(Error::Config("n_sequences must be >= 1".into()));
        }
        let mut has_perceptual = false;
        let mut has_text = false;
        for seg in &self.segments {
            if seg.n_tokens == 0 {
                return Err(Error::Config("segment n_tokens must be >= 1".into()));
            }
            if seg.sigma < 0.0 {
                return Err(Error::Config("segment sigma must be >= 0".into()));
            }
            if seg.tag.is_perceptual() {
                has_perceptual = true;
            } else {
                has_text = true;
            }
        }
        if !has_perceptual || !has_text {
            return Err(Error::Config(
                "synthetic corpus needs at least one perceptual and one text segment".into(),
            ));
        }
        Ok(())
    }

    pub fn tokens_per_sequence(&self) -> usize {
        self.segments.iter().map(|s| s.n_tokens).sum()
    }
}

impl PruningSpec {
    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::Config("pruning needs at least one group".into()));
        }
        if self.sparsities.is_empty() {
            return Err(Error::Config("pruning needs at least one sparsity".into()));
        }
        for s in &self.sparsities {
            if !(0.0..1.0).contains(s) {
                return Err(Error::Config(format!("sparsity {s} outside [0, 1)")));
            }
        }
        if self.n_calibration == 0 {
            return Err(Error::Config("n_calibration must be >= 1".into()));
        }
        let mut labels: Vec<&str> = self.groups.iter().map(|g| g.label.as_str()).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != self.groups.len() {
            return Err(Error::Config("group labels must be unique".into()));
        }
        for group in &self.groups {
            if group.label.is_empty()
                || !group
                    .label
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                return Err(Error::Config(format!(
                    "group label {:?} must be [A-Za-z0-9_-]+",
                    group.label
                )));
            }
            if group.tags.is_empty() {
                return Err(Error::Config(format!(
                    "group {} selects no tags",
                    group.label
                )));
            }
        }
        if self.kind == ScoreKind::Random && self.seed.is_none() {
            return Err(Error::Config("random pruning requires a seed".into()));
        }
        if self.alpha_subnet && self.groups.len() < 2 {
            return Err(Error::Config("alpha_subnet needs at least 2 groups".into()));
        }
        Ok(())
    }
}

impl SkipSweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ratios.is_empty() || self.start_layers.is_empty() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        for r in &self.ratios {
            if !(0.0..=1.0).contains(r) {
                return Err(Error::Config(format!("skip ratio {r} outside [0, 1]")));
            }
        }
        if self.tags.is_empty() {
            return Err(Error::Config("sweep needs target tags".into()));
        }
        if self.n_seeds == 0 {
            return Err(Error::Config("n_seeds must be >= 1".into()));
        }
        Ok(())
    }
}
