use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{SplitRatios, SynthConfig};
use crate::decoding::DEFAULT_BEAM_SIZE;
use crate::error::{Error, Result};
use crate::metrics::{DEFAULT_GROUPS, DEFAULT_KS};
use crate::model::ModelConfig;
use crate::tokenizer::TokenizerConfig;
use crate::training::TrainConfig;
use crate::util::read_to_string;

/// Environment variable naming the directory that relative output paths
/// resolve against.
pub const OUTPUT_ROOT_ENV: &str = "CARE_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct DataConfig {
    /// Interaction file to use instead of the synthetic corpus.
    pub interactions: Option<PathBuf>,
    /// Item embedding file matching `interactions`.
    pub embeddings: Option<PathBuf>,
    pub synth: SynthConfig,
    pub split: SplitRatios,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub ks: Vec<usize>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { beam_size: DEFAULT_BEAM_SIZE, ks: DEFAULT_KS.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    /// Popularity groups per level.
    pub groups: usize,
    /// Cut-off of the ranked lists used for the item-level distribution.
    pub item_k: usize,
    /// Extra diversity weights trained by `train`, one run each.
    pub alpha_sweep: Vec<f64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { groups: DEFAULT_GROUPS, item_k: 10, alpha_sweep: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// History lengths (items) to time.
    pub history_items: Vec<usize>,
    pub repetitions: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { history_items: vec![1, 2, 4, 8, 16], repetitions: 21 }
    }
}

/// Everything one experiment needs; every field has a default.
///
/// `seed` drives the synthetic corpus, codebook fitting, model
/// initialisation and batch shuffling; the per-section seed fields are
/// overridden by it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Where every command reads and writes its artifacts.
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub tokenizer: TokenizerConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub analysis: AnalysisConfig,
    pub bench: BenchConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("care-out"),
            data: DataConfig::default(),
            tokenizer: TokenizerConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            analysis: AnalysisConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_to_string(path)?)
    }

    /// The model configuration with its vocabulary tied to the tokenizer and
    /// its initialisation seeded by the experiment seed.
    pub fn effective_model(&self) -> ModelConfig {
        ModelConfig {
            levels: self.tokenizer.levels,
            codes_per_level: self.tokenizer.codebook_size + 1,
            init_seed: self.seed,
            ..self.model.clone()
        }
    }

    pub fn effective_tokenizer(&self) -> TokenizerConfig {
        TokenizerConfig { seed: self.seed, ..self.tokenizer }
    }

    pub fn effective_train(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    /// `output_dir`, resolved against `$CARE_OUTPUT_ROOT` when relative.
    pub fn output_path(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => Path::new(&root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.synth.validate()?;
        self.effective_model().validate()?;
        self.train.validate()?;
        let fail = |m: String| Err(Error::Config(m));
        if self.tokenizer.levels == 0 || self.tokenizer.codebook_size == 0 {
            return fail("tokenizer levels and codebook_size must be positive".into());
        }
        if self.data.interactions.is_some() != self.data.embeddings.is_some() {
            return fail("data.interactions and data.embeddings must be given together".into());
        }
        for p in [&self.data.interactions, &self.data.embeddings].into_iter().flatten() {
            if !p.exists() {
                return fail(format!("input file {} does not exist", p.display()));
            }
        }
        let max_k = self.decode.ks.iter().copied().max().unwrap_or(0);
        if self.decode.ks.is_empty() || self.decode.ks.contains(&0) || max_k > self.decode.beam_size {
            return fail(format!("decode.ks must be non-empty, positive and at most beam_size {}", self.decode.beam_size));
        }
        if self.analysis.groups == 0 || self.analysis.item_k == 0 || self.analysis.item_k > max_k {
            return fail(format!("analysis needs groups >= 1 and 1 <= item_k <= {max_k}"));
        }
        if self.bench.repetitions == 0 || self.bench.history_items.contains(&0) {
            return fail("bench needs positive repetitions and history lengths".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_roundtrip_and_sections() {
        let text = r#"
seed = 3
[model]
mode = "baseline"
query_counts = "1-1-4-4"
[train]
alpha = 0.0
[decode]
ks = [5, 10]
"#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.model.query_counts.0, vec![1, 1, 4, 4]);
        assert_eq!(cfg.train.alpha, 0.0);
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        assert!(ExperimentConfig::from_toml("[model]\nquery_counts = \"1-x\"").is_err());
        let cfg = ExperimentConfig { decode: DecodeConfig { beam_size: 5, ks: vec![10] }, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = ExperimentConfig {
            data: DataConfig { interactions: Some("/nonexistent/x".into()), embeddings: Some("/nonexistent/y".into()), ..Default::default() },
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
