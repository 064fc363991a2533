//! Corpus preparation for both training stages.
//!
//! [`asr`] ingests public ASR corpora into pre-training records. The
//! instruction pipeline loads chat conversations ([`conversation`]), drops the
//! ones that cannot be read aloud or carry no useful answer ([`filter`]),
//! renders the human turns to speech ([`tts`]) and writes a jsonl manifest
//! with per-source statistics ([`build`], [`stats`]).

pub mod asr;
pub mod build;
pub mod conversation;
pub mod error;
pub mod filter;
pub mod stats;
pub mod tts;

use std::path::{Path, PathBuf};

pub use error::{DataError, TtsError};

pub(crate) fn is_han(c: char) -> bool {
    matches!(c as u32,
        0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF | 0x20000..=0x2EBEF)
}

/// Every regular file below `root`, sorted by path.
pub(crate) fn walk_files(root: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = std::fs::read_dir(&dir).map_err(|e| DataError::io(&dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| DataError::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.is_file() {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}
