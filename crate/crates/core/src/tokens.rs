//! Vocabulary, audio special tokens and template constants.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, TokenizerError};

pub type TokenId = u32;

pub const B_INST: &str = "[INST]";
pub const E_INST: &str = "[/INST]";
pub const B_SYS: &str = "<<SYS>>\n";
pub const E_SYS: &str = "\n<</SYS>>\n\n";

pub const AUDIO_START: &str = "<au_start>";
pub const AUDIO_END: &str = "<au_end>";
pub const AUDIO_PATCH: &str = "<au_patch>";

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

pub const DEFAULT_SYSTEM_PROMPT: &str = "You are a helpful language and speech assistant. \
You are able to understand the speech content that the user provides, and assist the user \
with a variety of tasks using natural language.";

pub const DEFAULT_AUDIO_TOKEN_LEN: usize = 64;

/// How plain text is cut into pieces before vocabulary lookup.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segmentation {
    /// One piece per Unicode scalar value.
    Char,
    /// Words with their leading space, single punctuation marks, single
    /// whitespace characters, single Han characters.
    Word,
}

fn word_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\p{Han}| ?[^\s\p{Han}\p{P}\p{S}]+| ?[\p{P}\p{S}]|\s").expect("valid regex")
    })
}

/// Ids of the tokens the templates need, plus their surface forms as
/// constants in this module.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokenTable {
    pub bos: TokenId,
    pub eos: TokenId,
    pub audio_start: TokenId,
    pub audio_end: TokenId,
    pub audio_patch: TokenId,
}

impl SpecialTokenTable {
    pub fn is_audio(&self, id: TokenId) -> bool {
        id == self.audio_start || id == self.audio_end || id == self.audio_patch
    }
}

/// Piece vocabulary with greedy special-token splitting.
///
/// Ids `0`, `1`, `2` are always `<unk>`, `<s>`, `</s>`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "TokenizerFile", into = "TokenizerFile")]
pub struct Tokenizer {
    segmentation: Segmentation,
    pieces: Vec<String>,
    index: HashMap<String, TokenId>,
    /// Ids recognised verbatim in input text, longest surface form first.
    added: Vec<TokenId>,
}

#[derive(Serialize, Deserialize)]
struct TokenizerFile {
    segmentation: Segmentation,
    pieces: Vec<String>,
    added: Vec<TokenId>,
}

impl From<TokenizerFile> for Tokenizer {
    fn from(f: TokenizerFile) -> Self {
        let index = f.pieces.iter().enumerate().map(|(i, p)| (p.clone(), i as TokenId)).collect();
        Tokenizer { segmentation: f.segmentation, pieces: f.pieces, index, added: f.added }
    }
}

impl From<Tokenizer> for TokenizerFile {
    fn from(t: Tokenizer) -> Self {
        TokenizerFile { segmentation: t.segmentation, pieces: t.pieces, added: t.added }
    }
}

impl Tokenizer {
    /// Builds a base vocabulary from a corpus. Printable ASCII, `\n` and `\t`
    /// are always present so that any English text has a character fallback.
    pub fn fit<'a, I>(segmentation: Segmentation, corpus: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut set: BTreeSet<String> = (0x20u8..0x7f)
            .map(|b| (b as char).to_string())
            .chain(["\n".to_string(), "\t".to_string()])
            .collect();
        for text in corpus {
            set.extend(text.chars().map(|c| c.to_string()));
            if segmentation == Segmentation::Word {
                set.extend(word_pattern().find_iter(text).map(|m| m.as_str().to_string()));
            }
        }
        let pieces: Vec<String> = [UNK, BOS, EOS]
            .into_iter()
            .map(str::to_string)
            .chain(set.into_iter().filter(|p| p != UNK && p != BOS && p != EOS))
            .collect();
        TokenizerFile { segmentation, pieces, added: Vec::new() }.into()
    }

    pub fn char_level<'a, I: IntoIterator<Item = &'a str>>(corpus: I) -> Self {
        Self::fit(Segmentation::Char, corpus)
    }

    pub fn word_level<'a, I: IntoIterator<Item = &'a str>>(corpus: I) -> Self {
        Self::fit(Segmentation::Word, corpus)
    }

    pub fn segmentation(&self) -> Segmentation {
        self.segmentation
    }

    pub fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    pub fn unk(&self) -> TokenId {
        0
    }

    pub fn bos(&self) -> TokenId {
        1
    }

    pub fn eos(&self) -> TokenId {
        2
    }

    pub fn token_to_id(&self, piece: &str) -> Option<TokenId> {
        self.index.get(piece).copied()
    }

    pub fn id_to_token(&self, id: TokenId) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    /// Appends a new piece that is matched verbatim in input text.
    fn add_special(&mut self, surface: &str) -> Result<TokenId, TokenizerError> {
        if self.index.contains_key(surface) {
            return Err(TokenizerError::VocabularyConflict(surface.to_string()));
        }
        let id = self.pieces.len() as TokenId;
        self.pieces.push(surface.to_string());
        self.index.insert(surface.to_string(), id);
        self.added.push(id);
        let pieces = &self.pieces;
        self.added.sort_by_key(|&i| std::cmp::Reverse(pieces[i as usize].len()));
        Ok(id)
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        let mut rest = text;
        while !rest.is_empty() {
            let hit = self
                .added
                .iter()
                .filter_map(|&id| rest.find(&self.pieces[id as usize]).map(|pos| (pos, id)))
                .min_by_key(|&(pos, _)| pos);
            match hit {
                Some((pos, id)) => {
                    self.encode_plain(&rest[..pos], &mut out);
                    out.push(id);
                    rest = &rest[pos + self.pieces[id as usize].len()..];
                }
                None => {
                    self.encode_plain(rest, &mut out);
                    break;
                }
            }
        }
        out
    }

    fn encode_plain(&self, text: &str, out: &mut Vec<TokenId>) {
        let lookup_chars = |piece: &str, out: &mut Vec<TokenId>| {
            let mut buf = [0u8; 4];
            for c in piece.chars() {
                out.push(self.token_to_id(c.encode_utf8(&mut buf)).unwrap_or(self.unk()));
            }
        };
        match self.segmentation {
            Segmentation::Char => lookup_chars(text, out),
            Segmentation::Word => {
                for m in word_pattern().find_iter(text) {
                    match self.token_to_id(m.as_str()) {
                        Some(id) => out.push(id),
                        None => lookup_chars(m.as_str(), out),
                    }
                }
            }
        }
    }

    /// Concatenates the surface forms of `ids`. Out-of-range ids render as
    /// `<unk>`.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter().map(|&id| self.id_to_token(id).unwrap_or(UNK)).collect()
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, json)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}

/// Appends `<au_start>`, `<au_end>`, `<au_patch>` (in that order) to a base
/// vocabulary.
pub fn extend_vocabulary(base: &Tokenizer) -> Result<(Tokenizer, SpecialTokenTable), TokenizerError> {
    let mut tok = base.clone();
    let audio_start = tok.add_special(AUDIO_START)?;
    let audio_end = tok.add_special(AUDIO_END)?;
    let audio_patch = tok.add_special(AUDIO_PATCH)?;
    let table = SpecialTokenTable { bos: tok.bos(), eos: tok.eos(), audio_start, audio_end, audio_patch };
    Ok((tok, table))
}

/// Recovers the special-token table of an already extended tokenizer.
pub fn special_table(tok: &Tokenizer) -> Result<SpecialTokenTable, TokenizerError> {
    let find = |s: &str| tok.token_to_id(s).ok_or_else(|| TokenizerError::MissingSpecial(s.to_string()));
    Ok(SpecialTokenTable {
        bos: tok.bos(),
        eos: tok.eos(),
        audio_start: find(AUDIO_START)?,
        audio_end: find(AUDIO_END)?,
        audio_patch: find(AUDIO_PATCH)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplateConfig {
    pub system_prompt: String,
    pub audio_token_len: usize,
    pub instruction_bank_en: Vec<String>,
    pub instruction_bank_zh: Vec<String>,
    /// Samples longer than this are rejected, never truncated.
    pub max_seq_len: usize,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        default_template_config()
    }
}

pub fn default_template_config() -> TemplateConfig {
    let en = [
        "Transcribe the audio into text.",
        "Please write down what is said in this audio.",
        "What does the speaker say?",
        "Convert the speech to text.",
        "Recognize the speech and give me the transcription.",
        "Listen to the audio and transcribe it.",
    ];
    let zh = [
        "将这段音频转写成文字。",
        "请识别这段语音的内容。",
        "这段音频说了什么？",
        "把语音转换成文本。",
        "请写出音频中的文字内容。",
        "听一下这段音频并转写出来。",
    ];
    TemplateConfig {
        system_prompt: DEFAULT_SYSTEM_PROMPT.to_string(),
        audio_token_len: DEFAULT_AUDIO_TOKEN_LEN,
        instruction_bank_en: en.iter().map(|s| s.to_string()).collect(),
        instruction_bank_zh: zh.iter().map(|s| s.to_string()).collect(),
        max_seq_len: 2048,
    }
}

impl TemplateConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.audio_token_len == 0 {
            return Err(ConfigError::Invalid("audio_token_len must be at least 1".into()));
        }
        if self.instruction_bank_en.is_empty() || self.instruction_bank_zh.is_empty() {
            return Err(ConfigError::Invalid("instruction banks must be non-empty".into()));
        }
        if self.max_seq_len == 0 {
            return Err(ConfigError::Invalid("max_seq_len must be positive".into()));
        }
        Ok(())
    }

    /// Parses a TOML document; absent keys keep their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: TemplateConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(path.display().to_string(), e.to_string()))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("template config serialises")
    }
}
