//! Heuristic conversation filters.
//!
//! The vocalization filter drops conversations containing text that cannot be
//! read aloud sensibly; the answer-quality filter drops ones whose assistant
//! turns carry no information. Both report the first offending turn.

use std::fmt;

use regex::{Regex, RegexSet};
use serde::{Deserialize, Serialize};

use crate::conversation::{Conversation, Role};
use crate::error::DataError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    Code,
    Url,
    Symbols,
    NonPrintable,
    ShortAnswer,
    Refusal,
    Placeholder,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::Code => "code",
            Rule::Url => "url",
            Rule::Symbols => "symbols",
            Rule::NonPrintable => "non-printable",
            Rule::ShortAnswer => "short-answer",
            Rule::Refusal => "refusal",
            Rule::Placeholder => "placeholder",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropReason {
    pub rule: Rule,
    /// Index into the flat turn list.
    pub turn: usize,
    pub detail: String,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} in turn {}: {}", self.rule.name(), self.turn, self.detail)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Verdict {
    Keep,
    Drop(DropReason),
}

impl Verdict {
    pub fn is_keep(&self) -> bool {
        matches!(self, Verdict::Keep)
    }
}

/// Thresholds and pattern lists; all patterns are case-insensitive regexes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Drop when symbols / letters exceeds this...
    pub max_symbol_ratio: f64,
    /// ...and there are at least this many symbols.
    pub min_symbols: usize,
    /// Consecutive indented non-empty lines that count as a code block.
    pub indented_code_lines: usize,
    pub max_nonprintable_ratio: f64,
    /// Minimum answer length in characters after trimming.
    pub min_answer_chars: usize,
    /// Refusal patterns only apply to answers up to this many characters, so
    /// a long helpful answer with a polite caveat survives.
    pub refusal_max_chars: usize,
    pub refusal_patterns: Vec<String>,
    /// Matched against the whole trimmed answer.
    pub placeholder_patterns: Vec<String>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|p| p.to_string()).collect();
        FilterConfig {
            max_symbol_ratio: 0.3,
            min_symbols: 3,
            indented_code_lines: 2,
            max_nonprintable_ratio: 0.01,
            min_answer_chars: 2,
            refusal_max_chars: 200,
            refusal_patterns: s(&[
                r"\bas an? (ai|artificial intelligence)\b",
                r"\bas an? (ai )?language model\b",
                r"\bi('m| am) (sorry|afraid),? (but )?i (can(no|')t|am (not able|unable)|won't)\b",
                r"\bi (can(no|')t|am (not able|unable) to|won't) (help|assist|provide|answer|do|comply|fulfill)\b",
                r"\bi do(n't| not) have (access|the ability|personal)\b",
                r"作为(一个)?(人工智能|ai|语言模型|AI助手)",
                r"(我)?(无法|不能)(回答|提供|帮助|完成|满足)",
                r"(很)?抱歉，?我(无法|不能)",
            ]),
            placeholder_patterns: s(&[
                r"n/?a",
                r"none",
                r"null",
                r"nil",
                r"todo",
                r"tbd",
                r"\.{2,}|…+",
                r"\?+",
                r"-+",
                r"<[^>]*>",
                r"\[[^\]]*\]",
                r"lorem ipsum.*",
                r"(no|empty) (output|answer|response)\.?",
                r"无|暂无|略",
            ]),
        }
    }
}

pub struct Filters {
    config: FilterConfig,
    url: Regex,
    refusal: RegexSet,
    placeholder: RegexSet,
}

const COMMON_PUNCTUATION: &str = ".,!?;:'\"()-%$&/";
const ZH_PUNCTUATION: &str = "，。！？；：、“”‘’（）《》【】…—·～";

impl Filters {
    pub fn new(config: &FilterConfig) -> Result<Self, DataError> {
        if config.max_symbol_ratio.is_nan()
            || config.max_symbol_ratio < 0.0
            || config.max_nonprintable_ratio.is_nan()
            || config.max_nonprintable_ratio < 0.0
        {
            return Err(DataError::Config("filter ratios must be non-negative".into()));
        }
        if config.indented_code_lines == 0 {
            return Err(DataError::Config("indented_code_lines must be at least 1".into()));
        }
        let bad = |e: regex::Error| DataError::Config(format!("filter pattern: {e}"));
        let ci = |p: &String| format!("(?i){p}");
        let anchored = |p: &String| format!("(?i)^(?:{p})$");
        Ok(Filters {
            config: config.clone(),
            url: Regex::new(
                r"(?i)\b(?:https?://|ftp://|www\.)\S+|\b[a-z0-9][a-z0-9-]*\.(?:com|org|net|io|edu|gov|cn|co\.uk|de|jp)(?:/\S*)?\b",
            )
            .map_err(bad)?,
            refusal: RegexSet::new(config.refusal_patterns.iter().map(ci)).map_err(bad)?,
            placeholder: RegexSet::new(config.placeholder_patterns.iter().map(anchored))
                .map_err(bad)?,
        })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    /// First stage: every turn must be speakable.
    pub fn vocalization(&self, conv: &Conversation) -> Verdict {
        for (i, t) in conv.turns().iter().enumerate() {
            if let Some((rule, detail)) = self.unspeakable(&t.text) {
                return Verdict::Drop(DropReason { rule, turn: i, detail });
            }
        }
        Verdict::Keep
    }

    /// Second stage: every assistant turn must carry content.
    pub fn answer_quality(&self, conv: &Conversation) -> Verdict {
        for (i, t) in conv.turns().iter().enumerate() {
            if t.role != Role::Assistant {
                continue;
            }
            if let Some((rule, detail)) = self.weak_answer(&t.text) {
                return Verdict::Drop(DropReason { rule, turn: i, detail });
            }
        }
        Verdict::Keep
    }

    fn unspeakable(&self, text: &str) -> Option<(Rule, String)> {
        if text.contains("```") {
            return Some((Rule::Code, "fenced code block".into()));
        }
        let mut run = 0;
        for line in text.lines() {
            let indented = (line.starts_with("    ") || line.starts_with('\t')) && !line.trim().is_empty();
            run = if indented { run + 1 } else { 0 };
            if run >= self.config.indented_code_lines {
                return Some((Rule::Code, "indented code block".into()));
            }
        }
        if let Some(m) = self.url.find(text) {
            return Some((Rule::Url, m.as_str().to_string()));
        }
        let (mut symbols, mut letters, mut bad, mut total) = (0usize, 0usize, 0usize, 0usize);
        for c in text.chars() {
            total += 1;
            if c.is_alphanumeric() {
                letters += 1;
            } else if is_nonprintable(c) {
                bad += 1;
            } else if !c.is_whitespace() && !COMMON_PUNCTUATION.contains(c) && !ZH_PUNCTUATION.contains(c) {
                symbols += 1;
            }
        }
        let ratio = symbols as f64 / letters.max(1) as f64;
        if symbols >= self.config.min_symbols && ratio > self.config.max_symbol_ratio {
            return Some((Rule::Symbols, format!("{symbols} symbols for {letters} letters")));
        }
        if total > 0 && bad as f64 / total as f64 > self.config.max_nonprintable_ratio {
            return Some((Rule::NonPrintable, format!("{bad} of {total} characters")));
        }
        None
    }

    fn weak_answer(&self, text: &str) -> Option<(Rule, String)> {
        let t = text.trim();
        let n = t.chars().count();
        if n < self.config.min_answer_chars {
            return Some((Rule::ShortAnswer, format!("{n} characters")));
        }
        if self.placeholder.is_match(t) {
            return Some((Rule::Placeholder, truncate(t)));
        }
        if n <= self.config.refusal_max_chars && self.refusal.is_match(t) {
            return Some((Rule::Refusal, truncate(t)));
        }
        None
    }
}

fn is_nonprintable(c: char) -> bool {
    (c.is_control() && !matches!(c, '\n' | '\r' | '\t'))
        || c == '\u{FFFD}'
        || matches!(c as u32, 0xE000..=0xF8FF | 0x200B..=0x200F)
}

fn truncate(s: &str) -> String {
    let mut out: String = s.chars().take(60).collect();
    if s.chars().count() > 60 {
        out.push('…');
    }
    out
}

/// Runs a conversation through both stages in order.
pub fn apply(filters: &Filters, conv: &Conversation) -> Result<(), (&'static str, DropReason)> {
    if let Verdict::Drop(r) = filters.vocalization(conv) {
        return Err(("vocalization", r));
    }
    if let Verdict::Drop(r) = filters.answer_quality(conv) {
        return Err(("answer-quality", r));
    }
    Ok(())
}
