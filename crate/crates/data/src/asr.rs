//! ASR corpus ingestion for modality-adaptation pre-training.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use aulm_core::audio::probe_audio;
use aulm_core::template::Language;
use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::{is_han, walk_files};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsrRecord {
    pub audio_path: PathBuf,
    pub transcript: String,
    pub language: Language,
    pub source_corpus: String,
}

/// Supported on-disk corpus layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorpusFormat {
    /// `<spk>/<chapter>/<spk>-<chapter>.trans.txt` next to `<utt>.flac`.
    LibriSpeech,
    /// `transcript/*.txt` with `<utt> <words...>`, audio under `wav/**/<utt>.wav`.
    Aishell,
    /// `TRANS.txt` (tab separated, with header) per split, audio at `<split>/<speaker>/<utt>`.
    MagicData,
    /// `set1_transcript.json` array of `{file, text}`, audio anywhere below the root.
    Primewords,
    /// One JSON [`AsrRecord`] per line; audio paths relative to the manifest.
    Jsonl,
}

impl CorpusFormat {
    pub const ALL: [CorpusFormat; 5] = [
        CorpusFormat::LibriSpeech,
        CorpusFormat::Aishell,
        CorpusFormat::MagicData,
        CorpusFormat::Primewords,
        CorpusFormat::Jsonl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorpusFormat::LibriSpeech => "librispeech",
            CorpusFormat::Aishell => "aishell",
            CorpusFormat::MagicData => "magicdata",
            CorpusFormat::Primewords => "primewords",
            CorpusFormat::Jsonl => "jsonl",
        }
    }

    /// Language implied by the corpus identity; `None` when records carry their own.
    pub fn language(self) -> Option<Language> {
        match self {
            CorpusFormat::LibriSpeech => Some(Language::En),
            CorpusFormat::Aishell | CorpusFormat::MagicData | CorpusFormat::Primewords => Some(Language::Zh),
            CorpusFormat::Jsonl => None,
        }
    }
}

impl FromStr for CorpusFormat {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase();
        CorpusFormat::ALL.into_iter().find(|f| f.name() == key).ok_or_else(|| {
            let names: Vec<_> = CorpusFormat::ALL.iter().map(|f| f.name()).collect();
            DataError::Config(format!("unknown corpus format {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

impl fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Skipped {
    pub utterance: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub records: Vec<AsrRecord>,
    pub skipped: Vec<Skipped>,
}

struct Candidate {
    utterance: String,
    audio: Option<PathBuf>,
    transcript: String,
    language: Language,
    source: Option<String>,
}

/// Reads a corpus in the given layout and keeps the utterances whose audio
/// header decodes and whose transcript is non-empty.
pub fn ingest_asr(path: &Path, format: CorpusFormat) -> Result<IngestReport, DataError> {
    if !path.exists() {
        return Err(DataError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "corpus not found"),
        ));
    }
    let candidates = match format {
        CorpusFormat::LibriSpeech => librispeech(path)?,
        CorpusFormat::Aishell => aishell(path)?,
        CorpusFormat::MagicData => magicdata(path)?,
        CorpusFormat::Primewords => primewords(path)?,
        CorpusFormat::Jsonl => jsonl(path)?,
    };
    let mut report = IngestReport::default();
    for c in candidates {
        let skip = |reason: String| Skipped { utterance: c.utterance.clone(), reason };
        let Some(audio) = c.audio.clone() else {
            log::warn!("skipping {}: audio file not found", c.utterance);
            report.skipped.push(skip("audio file not found".into()));
            continue;
        };
        if c.transcript.trim().is_empty() {
            report.skipped.push(skip("empty transcript".into()));
            continue;
        }
        if let Err(e) = probe_audio(&audio) {
            log::warn!("skipping {}: {e}", c.utterance);
            report.skipped.push(skip(format!("unreadable audio: {e}")));
            continue;
        }
        report.records.push(AsrRecord {
            audio_path: audio,
            transcript: c.transcript.trim().to_string(),
            language: c.language,
            source_corpus: c.source.clone().unwrap_or_else(|| format.name().to_string()),
        });
    }
    Ok(report)
}

fn read(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|e| DataError::io(path, e))
}

fn malformed(path: &Path, line: usize, msg: impl Into<String>) -> DataError {
    DataError::Malformed { path: path.to_path_buf(), line, msg: msg.into() }
}

/// Maps file stem to path for every file under `root` with one of `exts`.
fn index_audio(root: &Path, exts: &[&str]) -> Result<HashMap<String, PathBuf>, DataError> {
    let mut index = HashMap::new();
    for p in walk_files(root)? {
        let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        if exts.contains(&ext.as_str()) {
            if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                index.entry(stem.to_string()).or_insert(p);
            }
        }
    }
    Ok(index)
}

/// Splits `<id><whitespace><text>`; `None` if either part is missing.
fn id_and_text(line: &str) -> Option<(&str, &str)> {
    let line = line.trim();
    let cut = line.find(char::is_whitespace)?;
    let (id, rest) = line.split_at(cut);
    Some((id, rest.trim()))
}

/// Drops word-segmentation spaces next to Han characters.
pub fn join_han(text: &str) -> String {
    let chars: Vec<char> = text.split_whitespace().collect::<Vec<_>>().join(" ").chars().collect();
    let mut out = String::with_capacity(text.len());
    for (i, &c) in chars.iter().enumerate() {
        if c == ' ' {
            let prev = i.checked_sub(1).map(|j| chars[j]);
            let next = chars.get(i + 1).copied();
            if prev.is_some_and(is_han) || next.is_some_and(is_han) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

fn librispeech(root: &Path) -> Result<Vec<Candidate>, DataError> {
    let mut out = Vec::new();
    for file in walk_files(root)? {
        let name = file.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if !name.ends_with(".trans.txt") {
            continue;
        }
        let dir = file.parent().unwrap_or(root);
        for (i, line) in read(&file)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, text) = id_and_text(line)
                .ok_or_else(|| malformed(&file, i + 1, "expected `<utterance-id> <transcript>`"))?;
            let audio =
                ["flac", "wav"].iter().map(|ext| dir.join(format!("{id}.{ext}"))).find(|p| p.is_file());
            out.push(Candidate {
                utterance: id.to_string(),
                audio,
                transcript: text.to_string(),
                language: Language::En,
                source: None,
            });
        }
    }
    Ok(out)
}

fn aishell(root: &Path) -> Result<Vec<Candidate>, DataError> {
    let tdir = root.join("transcript");
    if !tdir.is_dir() {
        return Err(DataError::Corpus {
            path: root.to_path_buf(),
            msg: "missing transcript/ directory".into(),
        });
    }
    let audio = index_audio(&root.join("wav"), &["wav"])?;
    let mut out = Vec::new();
    for file in walk_files(&tdir)? {
        if file.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        for (i, line) in read(&file)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, text) = id_and_text(line)
                .ok_or_else(|| malformed(&file, i + 1, "expected `<utterance-id> <transcript>`"))?;
            out.push(Candidate {
                utterance: id.to_string(),
                audio: audio.get(id).cloned(),
                transcript: join_han(text),
                language: Language::Zh,
                source: None,
            });
        }
    }
    Ok(out)
}

fn magicdata(root: &Path) -> Result<Vec<Candidate>, DataError> {
    let mut out = Vec::new();
    for file in walk_files(root)? {
        if file.file_name().and_then(|n| n.to_str()) != Some("TRANS.txt") {
            continue;
        }
        let dir = file.parent().unwrap_or(root);
        let text = read(&file)?;
        let mut lines = text.lines().enumerate();
        let header = lines.next().map(|(_, h)| h).unwrap_or("");
        if !header.to_ascii_lowercase().starts_with("utteranceid") {
            return Err(malformed(&file, 1, "expected header `UtteranceID\\tSpeakerID\\tTranscription`"));
        }
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 3 {
                return Err(malformed(&file, i + 1, "expected three tab-separated columns"));
            }
            let p = dir.join(cols[1]).join(cols[0]);
            out.push(Candidate {
                utterance: cols[0].trim_end_matches(".wav").to_string(),
                audio: p.is_file().then_some(p),
                transcript: join_han(cols[2]),
                language: Language::Zh,
                source: None,
            });
        }
    }
    Ok(out)
}

#[derive(Deserialize)]
struct PrimewordsEntry {
    file: String,
    text: String,
}

fn primewords(root: &Path) -> Result<Vec<Candidate>, DataError> {
    let file = root.join("set1_transcript.json");
    let entries: Vec<PrimewordsEntry> =
        serde_json::from_str(&read(&file)?).map_err(|e| malformed(&file, e.line(), e.to_string()))?;
    let audio = index_audio(root, &["wav", "flac"])?;
    Ok(entries
        .into_iter()
        .map(|e| {
            let stem = Path::new(&e.file).file_stem().and_then(|s| s.to_str()).unwrap_or(&e.file).to_string();
            Candidate {
                audio: audio.get(&stem).cloned(),
                utterance: stem,
                transcript: join_han(&e.text),
                language: Language::Zh,
                source: None,
            }
        })
        .collect())
}

#[derive(Deserialize)]
struct JsonlEntry {
    audio_path: PathBuf,
    transcript: String,
    language: Language,
    #[serde(default)]
    source_corpus: Option<String>,
}

fn jsonl(path: &Path) -> Result<Vec<Candidate>, DataError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in read(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let e: JsonlEntry = serde_json::from_str(line).map_err(|e| malformed(path, i + 1, e.to_string()))?;
        let p = base.join(&e.audio_path);
        out.push(Candidate {
            utterance: e.audio_path.display().to_string(),
            audio: p.is_file().then_some(p),
            transcript: e.transcript,
            language: e.language,
            source: e.source_corpus,
        });
    }
    Ok(out)
}

/// Writes records as a jsonl manifest with audio paths relative to its directory
/// where possible.
pub fn write_asr_manifest(records: &[AsrRecord], path: &Path) -> Result<(), DataError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut buf = Vec::new();
    for r in records {
        let mut r = r.clone();
        if let Ok(rel) = r.audio_path.strip_prefix(base) {
            r.audio_path = rel.to_path_buf();
        }
        serde_json::to_writer(&mut buf, &r).expect("record serializes");
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    f.write_all(&buf).map_err(|e| DataError::io(path, e))
}
