//! Run configuration: defaults, then a TOML file, then command-line flags.

use std::collections::BTreeMap;
use std::path::Path;

use aulm_core::audio::EncoderConfig;
use aulm_core::lm::LmConfig;
use aulm_core::model::ModelConfig;
use aulm_core::tokens::{Segmentation, TemplateConfig};
use aulm_core::trainer::{Stage, StagePlan};
use aulm_data::asr::CorpusFormat;
use aulm_data::build::BuildConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult, ExitClass};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_mult: usize,
    pub context: usize,
    pub init_std: f64,
    pub adaptor_hidden: Option<usize>,
    pub encoder: EncoderConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        let lm = LmConfig::toy(1);
        ModelSection {
            dim: lm.dim,
            layers: lm.layers,
            heads: lm.heads,
            ff_mult: lm.ff_mult,
            context: lm.context,
            init_std: lm.init_std,
            adaptor_hidden: None,
            encoder: EncoderConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSection {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    /// Text-only LLM warm-start steps before stage 1 (pretrain only).
    pub llm_warm_start_steps: usize,
    pub warm_start_learning_rate: f64,
}

impl StageSection {
    fn defaults(stage: Stage) -> Self {
        StageSection {
            steps: 200,
            learning_rate: stage.default_learning_rate(),
            batch_size: 8,
            weight_decay: 0.01,
            llm_warm_start_steps: 0,
            warm_start_learning_rate: 3e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferSection {
    pub max_new_tokens: usize,
}

impl Default for InferSection {
    fn default() -> Self {
        InferSection { max_new_tokens: 64 }
    }
}

/// Fully resolved configuration of one invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dtype: Dtype,
    /// Segmentation of freshly fitted tokenizers.
    pub tokenizer: Segmentation,
    /// Layout of ASR corpora: jsonl, librispeech, aishell, magicdata or primewords.
    pub corpus_format: String,
    /// Input and output locations given on the command line.
    pub paths: BTreeMap<String, String>,
    pub template: TemplateConfig,
    pub model: ModelSection,
    pub pretrain: StageSection,
    pub finetune: StageSection,
    pub infer: InferSection,
    pub data: BuildConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            dtype: Dtype::F32,
            tokenizer: Segmentation::Word,
            corpus_format: CorpusFormat::Jsonl.name().to_string(),
            paths: BTreeMap::new(),
            template: TemplateConfig::default(),
            model: ModelSection::default(),
            pretrain: StageSection::defaults(Stage::Pretrain),
            finetune: StageSection::defaults(Stage::Finetune),
            infer: InferSection::default(),
            data: BuildConfig::default(),
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with `file` when given.
    pub fn load(file: Option<&Path>) -> CliResult<Self> {
        let Some(path) = file else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new(ExitClass::Io, format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message)))
    }

    /// Overlays a TOML document on the defaults; tables merge key by key.
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let file: toml::Table = toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        let mut merged = toml::Table::try_from(RunConfig::default()).expect("defaults serialize");
        overlay(&mut merged, file);
        merged.try_into().map_err(|e: toml::de::Error| CliError::config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn set_path(&mut self, key: &str, value: &Path) {
        self.paths.insert(key.to_string(), value.display().to_string());
    }

    pub fn corpus_format(&self) -> CliResult<CorpusFormat> {
        Ok(self.corpus_format.parse()?)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.template.validate()?;
        self.corpus_format()?;
        self.model_config(1).validate()?;
        if self.model.context < self.template.audio_token_len + 2 {
            return Err(CliError::config("model.context cannot hold one audio slot"));
        }
        for (name, s) in [("pretrain", &self.pretrain), ("finetune", &self.finetune)] {
            if s.learning_rate.is_nan()
                || s.learning_rate <= 0.0
                || s.batch_size == 0
                || s.warm_start_learning_rate.is_nan()
                || s.warm_start_learning_rate <= 0.0
            {
                return Err(CliError::config(format!(
                    "{name}: learning rates and batch_size must be positive"
                )));
            }
        }
        Ok(())
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            encoder: m.encoder.clone(),
            audio_token_len: self.template.audio_token_len,
            adaptor_hidden: m.adaptor_hidden,
            lm: LmConfig {
                vocab_size,
                dim: m.dim,
                layers: m.layers,
                heads: m.heads,
                ff_mult: m.ff_mult,
                context: m.context,
                init_std: m.init_std,
            },
            seed: self.seed,
        }
    }

    pub fn stage(&self, stage: Stage) -> &StageSection {
        match stage {
            Stage::Pretrain => &self.pretrain,
            Stage::Finetune => &self.finetune,
        }
    }

    pub fn stage_mut(&mut self, stage: Stage) -> &mut StageSection {
        match stage {
            Stage::Pretrain => &mut self.pretrain,
            Stage::Finetune => &mut self.finetune,
        }
    }

    pub fn plan(&self, stage: Stage) -> StagePlan {
        let s = self.stage(stage);
        let mut plan = StagePlan::new(stage, s.steps)
            .with_learning_rate(s.learning_rate)
            .with_batch_size(s.batch_size)
            .with_seed(self.seed);
        plan.weight_decay = s.weight_decay;
        plan
    }
}

fn overlay(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => overlay(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
