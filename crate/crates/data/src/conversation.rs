//! Chat conversations and the adapters that read them from public dumps.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use aulm_core::template::Language;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::DataError;
use crate::{is_han, walk_files};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    WizardLm,
    ShareGpt,
    Gpt4Llm,
    Other,
}

impl Source {
    pub const ALL: [Source; 4] = [Source::WizardLm, Source::ShareGpt, Source::Gpt4Llm, Source::Other];

    pub fn key(self) -> &'static str {
        match self {
            Source::WizardLm => "wizardlm",
            Source::ShareGpt => "sharegpt",
            Source::Gpt4Llm => "gpt4llm",
            Source::Other => "other",
        }
    }

    /// Name used in the statistics table.
    pub fn display_name(self) -> &'static str {
        match self {
            Source::WizardLm => "WizardLM",
            Source::ShareGpt => "ShareGPT",
            Source::Gpt4Llm => "GPT-4-LLM",
            Source::Other => "Other",
        }
    }

    /// Guesses the source from a dump's file name.
    pub fn from_file_name(name: &str) -> Source {
        let n = name.to_ascii_lowercase().replace(['-', '_', ' '], "");
        if n.contains("wizard") {
            Source::WizardLm
        } else if n.contains("sharegpt") {
            Source::ShareGpt
        } else if n.contains("gpt4") {
            Source::Gpt4Llm
        } else {
            Source::Other
        }
    }
}

impl FromStr for Source {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let n = s.to_ascii_lowercase().replace(['-', '_', ' '], "");
        Source::ALL
            .into_iter()
            .find(|src| src.key() == n)
            .ok_or_else(|| DataError::Config(format!("unknown conversation source {s:?}")))
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Human,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

/// Turns strictly alternate human/assistant, starting with a human turn and
/// ending with an assistant turn.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Conversation {
    pub id: String,
    pub source: Source,
    turns: Vec<Turn>,
    pub language: Language,
}

impl Conversation {
    /// Language is detected from the share of Han characters among letters.
    pub fn new(id: impl Into<String>, source: Source, turns: Vec<Turn>) -> Result<Self, String> {
        if turns.len() < 2 {
            return Err("needs at least one human/assistant round".into());
        }
        if !turns.len().is_multiple_of(2) {
            return Err("ends on a human turn".into());
        }
        for (i, t) in turns.iter().enumerate() {
            let want = if i % 2 == 0 { Role::Human } else { Role::Assistant };
            if t.role != want {
                return Err(format!("turn {i} should be {want:?}, found {:?}", t.role));
            }
        }
        let language = detect_language(turns.iter().map(|t| t.text.as_str()));
        Ok(Conversation { id: id.into(), source, turns, language })
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    /// `(human, assistant)` text pairs, one per round.
    pub fn rounds(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.turns.chunks_exact(2).map(|p| (p[0].text.as_str(), p[1].text.as_str()))
    }

    pub fn num_rounds(&self) -> usize {
        self.turns.len() / 2
    }
}

pub fn detect_language<'a>(texts: impl IntoIterator<Item = &'a str>) -> Language {
    let (mut han, mut letters) = (0usize, 0usize);
    for c in texts.into_iter().flat_map(str::chars) {
        if c.is_alphabetic() {
            letters += 1;
            han += is_han(c) as usize;
        }
    }
    if letters > 0 && han * 10 >= letters * 3 {
        Language::Zh
    } else {
        Language::En
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Malformed {
    pub id: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct LoadReport {
    pub conversations: Vec<Conversation>,
    pub malformed: Vec<Malformed>,
}

/// Loads conversations from a `.json`/`.jsonl` dump or a directory of them.
///
/// Each record may be ShareGPT-style (`conversations: [{from, value}]`),
/// Alpaca-style (`instruction`, `input`, `output`) or native
/// (`id`, `source`, `turns: [{role, text}]`). The source defaults to the one
/// named by the file. Records that do not form a valid conversation are
/// reported, not fatal; unparsable JSON is.
pub fn load_conversations(path: &Path) -> Result<LoadReport, DataError> {
    let files = if path.is_dir() {
        walk_files(path)?
            .into_iter()
            .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("json" | "jsonl")))
            .collect()
    } else if path.is_file() {
        vec![path.to_path_buf()]
    } else {
        return Err(DataError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "conversation corpus not found"),
        ));
    };
    let mut report = LoadReport::default();
    let mut seen = HashSet::new();
    for file in files {
        let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("conv").to_string();
        let source = Source::from_file_name(&stem);
        for (n, value) in read_values(&file)?.into_iter().enumerate() {
            let fallback = format!("{stem}-{n}");
            let raw_id = value
                .get("id")
                .and_then(|v| v.as_str().map(str::to_string).or_else(|| v.as_u64().map(|u| u.to_string())))
                .unwrap_or(fallback);
            let id = unique_id(&sanitize_id(&raw_id), &mut seen);
            match parse_record(&value, source) {
                Ok((src, turns)) => match Conversation::new(id.clone(), src, turns) {
                    Ok(c) => report.conversations.push(c),
                    Err(reason) => report.malformed.push(Malformed { id, reason }),
                },
                Err(reason) => report.malformed.push(Malformed { id, reason }),
            }
        }
    }
    for m in &report.malformed {
        log::warn!("skipping conversation {}: {}", m.id, m.reason);
    }
    Ok(report)
}

fn read_values(file: &Path) -> Result<Vec<Value>, DataError> {
    let text = std::fs::read_to_string(file).map_err(|e| DataError::io(file, e))?;
    let bad = |line: usize, e: serde_json::Error| DataError::Malformed {
        path: file.to_path_buf(),
        line,
        msg: e.to_string(),
    };
    if file.extension().and_then(|e| e.to_str()) == Some("jsonl") {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if !line.trim().is_empty() {
                out.push(serde_json::from_str(line).map_err(|e| bad(i + 1, e))?);
            }
        }
        Ok(out)
    } else {
        match serde_json::from_str(&text).map_err(|e| bad(e.line(), e))? {
            Value::Array(items) => Ok(items),
            other => Ok(vec![other]),
        }
    }
}

fn role_of(name: &str) -> Option<Option<Role>> {
    match name.to_ascii_lowercase().as_str() {
        "human" | "user" => Some(Some(Role::Human)),
        "gpt" | "assistant" | "chatgpt" | "bard" | "bing" | "model" => Some(Some(Role::Assistant)),
        "system" => Some(None),
        _ => None,
    }
}

fn parse_record(v: &Value, default_source: Source) -> Result<(Source, Vec<Turn>), String> {
    let source = match v.get("source").and_then(Value::as_str) {
        Some(s) => s.parse().map_err(|e: DataError| e.to_string())?,
        None => default_source,
    };
    let list = v.get("conversations").or_else(|| v.get("turns"));
    let mut turns = Vec::new();
    if let Some(list) = list {
        let items = list.as_array().ok_or("turn list is not an array")?;
        for (i, t) in items.iter().enumerate() {
            let who = t
                .get("from")
                .or_else(|| t.get("role"))
                .and_then(Value::as_str)
                .ok_or_else(|| format!("turn {i} has no speaker"))?;
            let text = t
                .get("value")
                .or_else(|| t.get("text"))
                .and_then(Value::as_str)
                .ok_or_else(|| format!("turn {i} has no text"))?;
            match role_of(who) {
                Some(Some(role)) => turns.push(Turn { role, text: text.to_string() }),
                Some(None) => {}
                None => return Err(format!("turn {i} has unknown speaker {who:?}")),
            }
        }
        // Dumps often end on an unanswered question.
        if turns.last().is_some_and(|t| t.role == Role::Human) {
            turns.pop();
        }
    } else if let Some(instruction) = v.get("instruction").and_then(Value::as_str) {
        let input = v.get("input").and_then(Value::as_str).unwrap_or("").trim();
        let output = v.get("output").and_then(Value::as_str).ok_or("record has no output")?;
        let human =
            if input.is_empty() { instruction.to_string() } else { format!("{instruction}\n\n{input}") };
        turns.push(Turn { role: Role::Human, text: human });
        turns.push(Turn { role: Role::Assistant, text: output.to_string() });
    } else {
        return Err("unrecognized record layout".into());
    }
    Ok((source, turns))
}

/// Keeps ids usable as directory names.
pub fn sanitize_id(raw: &str) -> String {
    let s: String = raw
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    let s = s.trim_matches('_');
    if s.is_empty() {
        "conv".into()
    } else {
        s.to_string()
    }
}

fn unique_id(base: &str, seen: &mut HashSet<String>) -> String {
    let mut id = base.to_string();
    let mut k = 2;
    while !seen.insert(id.clone()) {
        id = format!("{base}-{k}");
        k += 1;
    }
    id
}
