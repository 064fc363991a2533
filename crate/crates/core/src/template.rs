//! Interleaved token sequences with loss masks and audio-slot bookkeeping.
//!
//! Pre-training layout (one audio clip, one transcript):
//!
//! ```text
//! <s>[INST] <<SYS>>\n{system}\n<</SYS>>\n\n{user} [/INST] {label}</s>
//! ```
//!
//! where `{user}` is `{instruction}\n{audio}` or `{audio}\n{instruction}` and
//! `{audio}` is `<au_start>` followed by `audio_token_len` copies of
//! `<au_patch>` and `<au_end>`. Instruction samples repeat
//! `[INST] {audio} [/INST] {response}</s>` once per round, with the system
//! block only in the first round and a single `<s>` at the very start.
//! Only the label/response tokens and their closing `</s>` carry loss.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::TemplateError;
use crate::tokens::{
    special_table, SpecialTokenTable, TemplateConfig, TokenId, Tokenizer, B_INST, B_SYS, E_INST, E_SYS,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    Zh,
}

impl FromStr for Language {
    type Err = TemplateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "en" => Ok(Language::En),
            "zh" => Ok(Language::Zh),
            _ => Err(TemplateError::UnsupportedLanguage(s.to_string())),
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Language::En => "en",
            Language::Zh => "zh",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleKind {
    Pretrain,
    Instruct,
}

impl fmt::Display for SampleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SampleKind::Pretrain => "pretrain",
            SampleKind::Instruct => "instruct",
        })
    }
}

/// Location of one `<au_start> <au_patch>… <au_end>` block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioSlot {
    pub start_index: usize,
    pub patch_range: Range<usize>,
    pub audio_ref: String,
}

impl AudioSlot {
    /// Index of the closing `<au_end>`.
    pub fn end_index(&self) -> usize {
        self.patch_range.end
    }

    /// Every index of the block, markers included.
    pub fn span(&self) -> Range<usize> {
        self.start_index..self.patch_range.end + 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplatedSample {
    pub tokens: Vec<TokenId>,
    pub loss_mask: Vec<u8>,
    pub audio_slots: Vec<AudioSlot>,
    pub kind: SampleKind,
    /// Label/response spans, each ending with its `</s>`.
    pub targets: Vec<Range<usize>>,
}

impl TemplatedSample {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn loss_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.loss_mask.iter().enumerate().filter(|(_, &m)| m == 1).map(|(i, _)| i)
    }
}

/// Token sequence with audio slots, as consumed by the model.
pub trait AudioSequence {
    fn tokens(&self) -> &[TokenId];
    fn audio_slots(&self) -> &[AudioSlot];
}

impl AudioSequence for TemplatedSample {
    fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    fn audio_slots(&self) -> &[AudioSlot] {
        &self.audio_slots
    }
}

impl AudioSequence for PromptSample {
    fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    fn audio_slots(&self) -> &[AudioSlot] {
        &self.audio_slots
    }
}

/// A sequence that stops right after `[/INST] `, ready for generation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptSample {
    pub tokens: Vec<TokenId>,
    pub audio_slots: Vec<AudioSlot>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    pub user_audio_ref: String,
    pub assistant_text: String,
}

impl Round {
    pub fn new(user_audio_ref: impl Into<String>, assistant_text: impl Into<String>) -> Self {
        Round { user_audio_ref: user_audio_ref.into(), assistant_text: assistant_text.into() }
    }
}

/// Where the simple instruction goes relative to the audio block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Placement {
    InstructionFirst,
    AudioFirst,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    LengthMismatch,
    NonBinaryMask,
    MissingBos,
    MissingEos,
    NoTarget,
    SlotStructure,
    PatchCount,
    StrayPatch,
    SlotOrder,
    LossOnAudio,
    LossOnPrompt,
    MissingLoss,
    TargetWithoutEos,
    TooLong,
}

impl ViolationKind {
    pub fn name(self) -> &'static str {
        match self {
            ViolationKind::LengthMismatch => "length-mismatch",
            ViolationKind::NonBinaryMask => "non-binary-mask",
            ViolationKind::MissingBos => "missing-bos",
            ViolationKind::MissingEos => "missing-eos",
            ViolationKind::NoTarget => "no-target",
            ViolationKind::SlotStructure => "slot-structure",
            ViolationKind::PatchCount => "patch-count-mismatch",
            ViolationKind::StrayPatch => "stray-patch",
            ViolationKind::SlotOrder => "slot-order",
            ViolationKind::LossOnAudio => "loss-on-audio",
            ViolationKind::LossOnPrompt => "loss-on-prompt",
            ViolationKind::MissingLoss => "missing-loss",
            ViolationKind::TargetWithoutEos => "target-without-eos",
            ViolationKind::TooLong => "too-long",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub index: Option<usize>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "{} at index {}: {}", self.kind.name(), i, self.detail),
            None => write!(f, "{}: {}", self.kind.name(), self.detail),
        }
    }
}

struct SeqBuilder {
    tokens: Vec<TokenId>,
    mask: Vec<u8>,
    slots: Vec<AudioSlot>,
    targets: Vec<Range<usize>>,
}

impl SeqBuilder {
    fn new() -> Self {
        SeqBuilder { tokens: Vec::new(), mask: Vec::new(), slots: Vec::new(), targets: Vec::new() }
    }

    fn push(&mut self, ids: &[TokenId], loss: bool) {
        self.tokens.extend_from_slice(ids);
        self.mask.extend(std::iter::repeat_n(loss as u8, ids.len()));
    }
}

/// Builds samples for one tokenizer and template configuration.
pub struct Templater<'a> {
    tok: &'a Tokenizer,
    table: SpecialTokenTable,
    config: &'a TemplateConfig,
}

impl<'a> Templater<'a> {
    /// `tok` must already carry the audio special tokens.
    pub fn new(tok: &'a Tokenizer, config: &'a TemplateConfig) -> Result<Self, TemplateError> {
        let table = special_table(tok).map_err(|e| TemplateError::InvalidSample(e.to_string()))?;
        config.validate().map_err(|e| TemplateError::InvalidSample(e.to_string()))?;
        Ok(Templater { tok, table, config })
    }

    pub fn table(&self) -> SpecialTokenTable {
        self.table
    }

    pub fn config(&self) -> &TemplateConfig {
        self.config
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        self.tok
    }

    pub fn instruction_bank(&self, language: Language) -> &[String] {
        match language {
            Language::En => &self.config.instruction_bank_en,
            Language::Zh => &self.config.instruction_bank_zh,
        }
    }

    fn system_block(&self) -> Vec<TokenId> {
        self.tok.encode(&format!("{B_INST} {B_SYS}{}{E_SYS}", self.config.system_prompt))
    }

    fn push_audio(&self, b: &mut SeqBuilder, audio_ref: &str) {
        let start_index = b.tokens.len();
        b.push(&[self.table.audio_start], false);
        let first = b.tokens.len();
        b.push(&vec![self.table.audio_patch; self.config.audio_token_len], false);
        let patch_range = first..b.tokens.len();
        b.push(&[self.table.audio_end], false);
        b.slots.push(AudioSlot { start_index, patch_range, audio_ref: audio_ref.to_string() });
    }

    fn push_target(&self, b: &mut SeqBuilder, text: &str) {
        let start = b.tokens.len();
        b.push(&self.tok.encode(text), true);
        b.push(&[self.table.eos], true);
        b.targets.push(start..b.tokens.len());
    }

    fn finish(&self, b: SeqBuilder, kind: SampleKind) -> Result<TemplatedSample, TemplateError> {
        if b.tokens.len() > self.config.max_seq_len {
            return Err(TemplateError::TooLong { len: b.tokens.len(), max: self.config.max_seq_len });
        }
        Ok(TemplatedSample {
            tokens: b.tokens,
            loss_mask: b.mask,
            audio_slots: b.slots,
            kind,
            targets: b.targets,
        })
    }

    /// Pre-training sample with a random simple instruction in random
    /// position. Draws one index from the bank, then one boolean for
    /// placement.
    pub fn build_pretrain_sample<R: Rng + ?Sized>(
        &self,
        audio_ref: &str,
        text_label: &str,
        language: Language,
        rng: &mut R,
    ) -> Result<TemplatedSample, TemplateError> {
        let bank = self.instruction_bank(language);
        let instruction = bank[rng.gen_range(0..bank.len())].clone();
        let placement = if rng.gen_bool(0.5) { Placement::InstructionFirst } else { Placement::AudioFirst };
        self.build_pretrain_sample_with(audio_ref, text_label, &instruction, placement)
    }

    pub fn build_pretrain_sample_with(
        &self,
        audio_ref: &str,
        text_label: &str,
        instruction: &str,
        placement: Placement,
    ) -> Result<TemplatedSample, TemplateError> {
        if text_label.trim().is_empty() {
            return Err(TemplateError::InvalidSample("empty text label".into()));
        }
        let mut b = SeqBuilder::new();
        b.push(&[self.table.bos], false);
        b.push(&self.system_block(), false);
        let newline = self.tok.encode("\n");
        match placement {
            Placement::InstructionFirst => {
                b.push(&self.tok.encode(instruction), false);
                b.push(&newline, false);
                self.push_audio(&mut b, audio_ref);
            }
            Placement::AudioFirst => {
                self.push_audio(&mut b, audio_ref);
                b.push(&newline, false);
                b.push(&self.tok.encode(instruction), false);
            }
        }
        b.push(&self.tok.encode(&format!(" {E_INST} ")), false);
        self.push_target(&mut b, text_label);
        self.finish(b, SampleKind::Pretrain)
    }

    pub fn build_instruct_sample(&self, rounds: &[Round]) -> Result<TemplatedSample, TemplateError> {
        if rounds.is_empty() {
            return Err(TemplateError::InvalidSample("no rounds".into()));
        }
        let mut b = SeqBuilder::new();
        b.push(&[self.table.bos], false);
        for (i, round) in rounds.iter().enumerate() {
            if round.assistant_text.trim().is_empty() {
                return Err(TemplateError::InvalidSample(format!("round {i} has an empty response")));
            }
            self.push_user_turn(&mut b, i == 0, &round.user_audio_ref);
            self.push_target(&mut b, &round.assistant_text);
        }
        self.finish(b, SampleKind::Instruct)
    }

    fn push_user_turn(&self, b: &mut SeqBuilder, first: bool, audio_ref: &str) {
        if first {
            b.push(&self.system_block(), false);
        } else {
            b.push(&self.tok.encode(&format!("{B_INST} ")), false);
        }
        self.push_audio(b, audio_ref);
        b.push(&self.tok.encode(&format!(" {E_INST} ")), false);
    }

    /// Prompt for a new user turn after `history`; ends right after `[/INST] `.
    pub fn build_instruct_prompt(
        &self,
        history: &[Round],
        audio_ref: &str,
    ) -> Result<PromptSample, TemplateError> {
        let mut b = SeqBuilder::new();
        b.push(&[self.table.bos], false);
        for (i, round) in history.iter().enumerate() {
            self.push_user_turn(&mut b, i == 0, &round.user_audio_ref);
            self.push_target(&mut b, &round.assistant_text);
        }
        self.push_user_turn(&mut b, history.is_empty(), audio_ref);
        if b.tokens.len() > self.config.max_seq_len {
            return Err(TemplateError::TooLong { len: b.tokens.len(), max: self.config.max_seq_len });
        }
        Ok(PromptSample { tokens: b.tokens, audio_slots: b.slots })
    }

    /// Every broken sample invariant, in index order per check. Empty iff the
    /// sample is well formed.
    pub fn validate_sample(&self, s: &TemplatedSample) -> Vec<Violation> {
        validate_sample(s, &self.table, self.config)
    }
}

pub fn validate_sample(
    s: &TemplatedSample,
    table: &SpecialTokenTable,
    config: &TemplateConfig,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut flag = |kind, index, detail: String| out.push(Violation { kind, index, detail });
    let n = s.tokens.len();
    if s.loss_mask.len() != n {
        flag(
            ViolationKind::LengthMismatch,
            None,
            format!("{} tokens but {} mask entries", n, s.loss_mask.len()),
        );
        return out;
    }
    if n > config.max_seq_len {
        flag(ViolationKind::TooLong, None, format!("{n} tokens, limit {}", config.max_seq_len));
    }
    if let Some(i) = s.loss_mask.iter().position(|&m| m > 1) {
        flag(ViolationKind::NonBinaryMask, Some(i), format!("value {}", s.loss_mask[i]));
    }
    if s.tokens.first() != Some(&table.bos) {
        flag(ViolationKind::MissingBos, Some(0), "first token is not BOS".into());
    }
    if n == 0 || s.tokens[n - 1] != table.eos {
        flag(ViolationKind::MissingEos, n.checked_sub(1), "last token is not EOS".into());
    }
    if s.loss_mask.iter().all(|&m| m == 0) {
        flag(ViolationKind::NoTarget, None, "no loss-bearing position".into());
    }

    let mut in_slot = vec![false; n];
    let mut prev_end: Option<usize> = None;
    for (k, slot) in s.audio_slots.iter().enumerate() {
        if slot.start_index >= slot.patch_range.start
            || slot.patch_range.start != slot.start_index + 1
            || slot.patch_range.end >= n
        {
            flag(
                ViolationKind::SlotStructure,
                Some(slot.start_index),
                format!("slot {k} has inconsistent bounds"),
            );
            continue;
        }
        if let Some(pe) = prev_end {
            if slot.start_index <= pe {
                flag(
                    ViolationKind::SlotOrder,
                    Some(slot.start_index),
                    format!("slot {k} overlaps or precedes slot {}", k - 1),
                );
            }
        }
        prev_end = Some(slot.end_index());
        if s.tokens[slot.start_index] != table.audio_start {
            flag(
                ViolationKind::SlotStructure,
                Some(slot.start_index),
                format!("slot {k} does not open with <au_start>"),
            );
        }
        if s.tokens[slot.end_index()] != table.audio_end {
            flag(
                ViolationKind::SlotStructure,
                Some(slot.end_index()),
                format!("slot {k} does not close with <au_end>"),
            );
        }
        if let Some(i) = slot.patch_range.clone().find(|&i| s.tokens[i] != table.audio_patch) {
            flag(ViolationKind::SlotStructure, Some(i), format!("slot {k} contains a non-patch token"));
        }
        if slot.patch_range.len() != config.audio_token_len {
            flag(
                ViolationKind::PatchCount,
                Some(slot.patch_range.start),
                format!(
                    "slot {k} has {} patch tokens, expected {}",
                    slot.patch_range.len(),
                    config.audio_token_len
                ),
            );
        }
        for i in slot.span() {
            in_slot[i] = true;
        }
    }
    if let Some(i) = (0..n).find(|&i| s.tokens[i] == table.audio_patch && !in_slot[i]) {
        flag(ViolationKind::StrayPatch, Some(i), "patch token outside any slot".into());
    }

    let mut in_target = vec![false; n];
    for t in &s.targets {
        if t.is_empty() || t.end > n {
            flag(ViolationKind::TargetWithoutEos, Some(t.start), "empty or out-of-range target".into());
            continue;
        }
        if s.tokens[t.end - 1] != table.eos {
            flag(
                ViolationKind::TargetWithoutEos,
                Some(t.end - 1),
                "target span does not end with EOS".into(),
            );
        }
        for i in t.clone() {
            in_target[i] = true;
        }
    }
    for i in 0..n {
        match (s.loss_mask[i] == 1, in_target[i]) {
            (true, false) if in_slot[i] => {
                flag(ViolationKind::LossOnAudio, Some(i), "loss-bearing position inside an audio slot".into())
            }
            (true, false) => flag(
                ViolationKind::LossOnPrompt,
                Some(i),
                "loss-bearing position in the prompt region".into(),
            ),
            (false, true) => {
                flag(ViolationKind::MissingLoss, Some(i), "label/response position without loss".into())
            }
            _ => {}
        }
    }
    out
}
