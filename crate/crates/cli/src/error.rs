use std::fmt;

use aulm_core::error::{
    AudioError, CheckpointError, ConfigError, ModelError, TemplateError, TokenizerError, TrainError,
};
use aulm_data::DataError;

/// Error class; the discriminant is the process exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitClass {
    Other = 1,
    /// Bad configuration, flags or input data, including stage-data mismatch.
    Config = 2,
    /// Missing or unreadable input, failed writes.
    Io = 3,
    /// Speech synthesis client unavailable.
    Client = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub class: ExitClass,
    pub message: String,
}

impl CliError {
    pub fn new(class: ExitClass, message: impl Into<String>) -> Self {
        CliError { class, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ExitClass::Config, message)
    }

    pub fn exit_code(&self) -> i32 {
        self.class as i32
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let class = match &e {
            DataError::Io { .. } => ExitClass::Io,
            DataError::Malformed { .. } | DataError::Corpus { .. } | DataError::Config(_) => {
                ExitClass::Config
            }
            DataError::Client(_) => ExitClass::Client,
        };
        CliError::new(class, e.to_string())
    }
}

impl From<AudioError> for CliError {
    fn from(e: AudioError) -> Self {
        let class = match &e {
            AudioError::Io(_) => ExitClass::Io,
            _ => ExitClass::Other,
        };
        CliError::new(class, e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Audio(a) => a.into(),
            ModelError::Config(_) | ModelError::Context { .. } => CliError::config(e.to_string()),
            other => CliError::new(ExitClass::Other, other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::StageData(_) | TrainError::Plan(_) => CliError::config(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Divergence { .. } => CliError::new(ExitClass::Other, e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        let class = match &e {
            CheckpointError::Io(_) => ExitClass::Io,
            CheckpointError::Incompatible(_) => ExitClass::Config,
            CheckpointError::Format(_) => ExitClass::Other,
        };
        CliError::new(class, e.to_string())
    }
}

impl From<TemplateError> for CliError {
    fn from(e: TemplateError) -> Self {
        CliError::config(e.to_string())
    }
}

impl From<TokenizerError> for CliError {
    fn from(e: TokenizerError) -> Self {
        CliError::config(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        let class = match &e {
            ConfigError::Io(..) => ExitClass::Io,
            _ => ExitClass::Config,
        };
        CliError::new(class, e.to_string())
    }
}
