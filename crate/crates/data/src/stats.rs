//! Per-source dataset statistics and the instruction manifest format.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use aulm_core::template::Language;
use serde::{Deserialize, Serialize};

use crate::conversation::Source;
use crate::error::DataError;

/// One manifest line: a single human/assistant round with the human turn
/// rendered to speech. `user_audio_path` is relative to the manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub conversation_id: String,
    pub round_index: usize,
    pub user_audio_path: String,
    pub user_text: String,
    pub assistant_text: String,
    pub language: Language,
    pub source: Source,
}

pub fn read_manifest(path: &Path) -> Result<Vec<InstructionRecord>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| DataError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn manifest_bytes(records: &[InstructionRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("record serializes");
        buf.push(b'\n');
    }
    buf
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceStats {
    pub conversations: usize,
    pub samples: usize,
    pub english_samples: usize,
    pub chinese_samples: usize,
}

impl std::ops::AddAssign for SourceStats {
    fn add_assign(&mut self, o: Self) {
        self.conversations += o.conversations;
        self.samples += o.samples;
        self.english_samples += o.english_samples;
        self.chinese_samples += o.chinese_samples;
    }
}

/// Counts per source; the total is always derived.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    per_source: BTreeMap<Source, SourceStats>,
}

impl Default for DatasetStats {
    fn default() -> Self {
        DatasetStats { per_source: Source::ALL.into_iter().map(|s| (s, SourceStats::default())).collect() }
    }
}

impl DatasetStats {
    /// Each record is one sample; a conversation counts once per source.
    pub fn from_records(records: &[InstructionRecord]) -> Self {
        let mut stats = DatasetStats::default();
        let mut seen = BTreeSet::new();
        for r in records {
            let row = stats.per_source.entry(r.source).or_default();
            if seen.insert((r.source, r.conversation_id.as_str())) {
                row.conversations += 1;
            }
            row.samples += 1;
            match r.language {
                Language::En => row.english_samples += 1,
                Language::Zh => row.chinese_samples += 1,
            }
        }
        stats
    }

    pub fn source(&self, s: Source) -> SourceStats {
        self.per_source.get(&s).copied().unwrap_or_default()
    }

    pub fn total(&self) -> SourceStats {
        let mut t = SourceStats::default();
        for &row in self.per_source.values() {
            t += row;
        }
        t
    }

    /// Aligned text table: one row per source and a total row.
    pub fn render_table(&self) -> String {
        let header = ["Source", "Conversations", "Samples", "English Samples", "Chinese Samples"];
        let mut rows: Vec<[String; 5]> =
            Source::ALL.iter().map(|&s| row_cells(s.display_name(), self.source(s))).collect();
        rows.push(row_cells("Total", self.total()));
        let mut widths = header.map(str::len);
        for r in &rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: &[String]| {
            let mut l = format!("{:<w$}", cells[0], w = widths[0]);
            for (c, w) in cells[1..].iter().zip(&widths[1..]) {
                write!(l, "  {c:>w$}").unwrap();
            }
            out.push_str(l.trim_end());
            out.push('\n');
        };
        line(&mut out, &header.map(String::from));
        let rule: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
        out.push_str(&"-".repeat(rule));
        out.push('\n');
        for (i, r) in rows.iter().enumerate() {
            if i == rows.len() - 1 {
                out.push_str(&"-".repeat(rule));
                out.push('\n');
            }
            line(&mut out, r);
        }
        out
    }
}

fn row_cells(name: &str, s: SourceStats) -> [String; 5] {
    [
        name.to_string(),
        s.conversations.to_string(),
        s.samples.to_string(),
        s.english_samples.to_string(),
        s.chinese_samples.to_string(),
    ]
}

pub fn compute_stats(manifest: &Path) -> Result<DatasetStats, DataError> {
    Ok(DatasetStats::from_records(&read_manifest(manifest)?))
}
