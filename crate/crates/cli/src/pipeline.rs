//! Manifests to training examples, tokenizer fitting and checkpoint handling.

use std::path::{Path, PathBuf};

use aulm_core::audio::{load_audio, AudioWave};
use aulm_core::checkpoint::{self, Bundle};
use aulm_core::error::TrainError;
use aulm_core::model::SpeechLm;
use aulm_core::template::{Round, TemplatedSample, Templater};
use aulm_core::tokens::{extend_vocabulary, Tokenizer};
use aulm_core::trainer::{Stage, TextExample, TrainExample};
use aulm_core::Float;
use aulm_data::asr::{ingest_asr, AsrRecord, CorpusFormat};
use aulm_data::stats::{read_manifest, InstructionRecord};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// What a manifest holds, judged from its first record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ManifestKind {
    Asr,
    Instruction,
    Unknown,
}

pub fn sniff_manifest(path: &Path) -> ManifestKind {
    let Ok(text) = std::fs::read_to_string(path) else {
        return ManifestKind::Unknown;
    };
    let Some(line) = text.lines().find(|l| !l.trim().is_empty()) else {
        return ManifestKind::Unknown;
    };
    match serde_json::from_str::<serde_json::Value>(line) {
        Ok(serde_json::Value::Object(m)) if m.contains_key("assistant_text") => ManifestKind::Instruction,
        Ok(serde_json::Value::Object(m)) if m.contains_key("transcript") => ManifestKind::Asr,
        _ => ManifestKind::Unknown,
    }
}

fn mismatch(stage: Stage, path: &Path, found: &str) -> CliError {
    TrainError::StageData(format!(
        "{stage} needs {} data but {} holds {found} records",
        match stage {
            Stage::Pretrain => "ASR",
            Stage::Finetune => "instruction",
        },
        path.display()
    ))
    .into()
}

pub fn load_asr(path: &Path, format: CorpusFormat) -> CliResult<Vec<AsrRecord>> {
    if path.is_file() && sniff_manifest(path) == ManifestKind::Instruction {
        return Err(mismatch(Stage::Pretrain, path, "instruction"));
    }
    let report = ingest_asr(path, format)?;
    for s in &report.skipped {
        log::warn!("skipped {}: {}", s.utterance, s.reason);
    }
    if report.records.is_empty() {
        return Err(TrainError::StageData(format!("no usable ASR records in {}", path.display())).into());
    }
    Ok(report.records)
}

pub fn load_instructions(path: &Path) -> CliResult<Vec<InstructionRecord>> {
    if sniff_manifest(path) == ManifestKind::Asr {
        return Err(mismatch(Stage::Finetune, path, "ASR"));
    }
    let records = read_manifest(path)?;
    if records.is_empty() {
        return Err(TrainError::StageData(format!("no instruction records in {}", path.display())).into());
    }
    Ok(records)
}

/// Audio location of an instruction record; relative paths resolve against
/// the manifest directory.
pub fn instruction_audio(manifest: &Path, r: &InstructionRecord) -> PathBuf {
    manifest.parent().unwrap_or(Path::new(".")).join(&r.user_audio_path)
}

/// Fits a tokenizer on the template text and `texts`, then adds the audio
/// tokens.
pub fn fit_tokenizer<'a>(
    cfg: &'a RunConfig,
    texts: impl IntoIterator<Item = &'a str>,
) -> CliResult<Tokenizer> {
    let t = &cfg.template;
    let corpus = std::iter::once(t.system_prompt.as_str())
        .chain(t.instruction_bank_en.iter().map(String::as_str))
        .chain(t.instruction_bank_zh.iter().map(String::as_str))
        .chain(texts);
    let base = Tokenizer::fit(cfg.tokenizer, corpus);
    Ok(extend_vocabulary(&base)?.0)
}

/// A fresh model for `cfg`, or the bundle stored in `init_from`.
pub fn init_bundle<F: Float>(
    cfg: &RunConfig,
    init_from: Option<&Path>,
    texts: &[&str],
) -> CliResult<Bundle<F>> {
    if let Some(dir) = init_from {
        let bundle = checkpoint::restore::<F>(dir)?;
        log::info!("initialized from {}", dir.display());
        if bundle.template != cfg.template {
            log::warn!("using the template stored in {}", dir.display());
        }
        return Ok(bundle);
    }
    let tokenizer = fit_tokenizer(cfg, texts.iter().copied())?;
    let model = SpeechLm::new(cfg.model_config(tokenizer.vocab_size()))?;
    Ok(Bundle { model, tokenizer, template: cfg.template.clone() })
}

fn load_wave<F: Float>(model: &SpeechLm<F>, path: &Path) -> CliResult<AudioWave> {
    Ok(load_audio(path, model.config().encoder.sample_rate)?)
}

/// Stage-1 examples plus their text-only counterparts for warm start.
pub fn pretrain_examples<F: Float>(
    bundle: &Bundle<F>,
    records: &[AsrRecord],
    seed: u64,
) -> CliResult<(Vec<TrainExample<F>>, Vec<TextExample>)> {
    let templater = Templater::new(&bundle.tokenizer, &bundle.template)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(records.len());
    let mut text = Vec::with_capacity(records.len());
    for r in records {
        let audio_ref = r.audio_path.display().to_string();
        let sample = templater.build_pretrain_sample(&audio_ref, &r.transcript, r.language, &mut rng)?;
        let wave = load_wave(&bundle.model, &r.audio_path)?;
        text.push(TextExample {
            sample: sample.clone(),
            transcripts: vec![bundle.tokenizer.encode(&r.transcript)],
        });
        data.push(TrainExample::encode(&bundle.model, sample, &[wave])?);
    }
    Ok((data, text))
}

/// One single-round stage-2 example per manifest record.
pub fn instruct_examples<F: Float>(
    bundle: &Bundle<F>,
    manifest: &Path,
    records: &[InstructionRecord],
) -> CliResult<Vec<TrainExample<F>>> {
    let templater = Templater::new(&bundle.tokenizer, &bundle.template)?;
    records
        .iter()
        .map(|r| {
            let sample =
                templater.build_instruct_sample(&[Round::new(&r.user_audio_path, &r.assistant_text)])?;
            let wave = load_wave(&bundle.model, &instruction_audio(manifest, r))?;
            Ok(TrainExample::encode(&bundle.model, sample, &[wave])?)
        })
        .collect()
}

/// Templated samples of a manifest for validation, with a label per sample.
/// Samples that cannot be built come back as errors.
pub fn templated_samples(
    templater: &Templater<'_>,
    kind: ManifestKind,
    path: &Path,
    format: CorpusFormat,
    seed: u64,
) -> CliResult<Vec<(String, Result<TemplatedSample, String>)>> {
    let mut out = Vec::new();
    match kind {
        ManifestKind::Instruction => {
            for r in read_manifest(path)? {
                let label = format!("{}#{}", r.conversation_id, r.round_index);
                let s = templater.build_instruct_sample(&[Round::new(&r.user_audio_path, &r.assistant_text)]);
                out.push((label, s.map_err(|e| e.to_string())));
            }
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for r in ingest_asr(path, format)?.records {
                let label = r.audio_path.display().to_string();
                let s = templater.build_pretrain_sample(&label, &r.transcript, r.language, &mut rng);
                out.push((label, s.map_err(|e| e.to_string())));
            }
        }
    }
    Ok(out)
}
