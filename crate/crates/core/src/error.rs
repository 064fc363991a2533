use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TokenizerError {
    #[error("vocabulary conflict: base tokenizer already contains {0:?}")]
    VocabularyConflict(String),
    #[error("tokenizer has no {0:?} entry")]
    MissingSpecial(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot parse configuration: {0}")]
    Parse(String),
    #[error("cannot read {0}: {1}")]
    Io(String, String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("unsupported language {0:?} (expected \"en\" or \"zh\")")]
    UnsupportedLanguage(String),
    #[error("sample has {len} tokens, limit is {max}")]
    TooLong { len: usize, max: usize },
}

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("cannot decode audio: {0}")]
    Decode(String),
    #[error("audio contains no samples")]
    Empty,
    #[error("audio lasts {seconds:.2} s, limit is {max:.2} s")]
    TooLong { seconds: f64, max: f64 },
    #[error("sample rate must be positive")]
    InvalidRate,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("splice error: {0}")]
    Splice(String),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("sequence of {len} tokens exceeds the context of {max}")]
    Context { len: usize, max: usize },
    #[error(transparent)]
    Audio(#[from] AudioError),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("stage data error: {0}")]
    StageData(String),
    #[error("invalid stage plan: {0}")]
    Plan(String),
    #[error("loss diverged (non-finite) at step {step}")]
    Divergence { step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint-incompatible: {0}")]
    Incompatible(String),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
