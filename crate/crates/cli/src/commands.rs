//! One function per subcommand.

use std::path::Path;

use aulm_core::audio::load_audio;
use aulm_core::checkpoint::{self, MODEL_FILE};
use aulm_core::error::CheckpointError;
use aulm_core::template::Templater;
use aulm_core::trainer::{run_stage, warm_start_llm, Stage};
use aulm_core::Float;
use aulm_data::build::build_instruction_dataset;
use aulm_data::conversation::load_conversations;
use aulm_data::stats::{compute_stats, read_manifest};
use aulm_data::tts::{CommandTtsClient, MockTtsClient, TtsClient};

use crate::config::{Dtype, RunConfig};
use crate::error::{CliError, CliResult, ExitClass};
use crate::pipeline::{self, ManifestKind};
use crate::{
    BuildDatasetArgs, CommonArgs, FinetuneArgs, InferArgs, PretrainArgs, StatsArgs, TrainArgs, TtsBackend,
    ValidateArgs,
};

pub const REPORT_FILE: &str = "train_report.jsonl";
pub const RUN_CONFIG_FILE: &str = "run_config.toml";

fn base_config(common: &CommonArgs) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(dtype) = common.dtype {
        cfg.dtype = dtype;
    }
    if let Some(path) = &common.config {
        cfg.set_path("config", path);
    }
    Ok(cfg)
}

/// Validates `cfg` and prints it to stderr; runs before any side effect.
fn resolved(cfg: RunConfig) -> CliResult<RunConfig> {
    cfg.validate()?;
    eprintln!("# effective configuration\n{}", cfg.to_toml());
    Ok(cfg)
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::new(ExitClass::Io, format!("{}: {e}", path.display()))
}

pub fn build_dataset(a: BuildDatasetArgs) -> CliResult<()> {
    let mut cfg = base_config(&a.common)?;
    cfg.set_path("corpus", &a.corpus);
    cfg.set_path("out", &a.out);
    cfg.data.dry_run |= a.dry_run;
    if let Some(n) = a.concurrency {
        cfg.data.concurrency = n;
    }
    let cfg = resolved(cfg)?;

    let client: Box<dyn TtsClient> = match a.tts {
        TtsBackend::Mock => Box::new(MockTtsClient::new(cfg.data.synth.sample_rate)),
        TtsBackend::Command => Box::new(CommandTtsClient::from_env()?),
    };
    let loaded = load_conversations(&a.corpus)?;
    for m in &loaded.malformed {
        log::warn!("malformed conversation {}: {}", m.id, m.reason);
    }
    let out = build_instruction_dataset(&loaded.conversations, client.as_ref(), &a.out, &cfg.data)?;
    print!("{}", out.stats.render_table());
    eprintln!(
        "conversations: {} read, {} malformed, {} dropped; samples: {} written, {} failed; tts calls: {}",
        loaded.conversations.len(),
        loaded.malformed.len(),
        out.dropped().count(),
        out.records.len(),
        out.failed().count(),
        out.tts_invocations
    );
    match &out.manifest_path {
        Some(p) => eprintln!("manifest: {}", p.display()),
        None => eprintln!("dry run: nothing written"),
    }
    Ok(())
}

fn train_config(a: &TrainArgs, stage: Stage) -> CliResult<RunConfig> {
    let mut cfg = base_config(&a.common)?;
    cfg.set_path("manifest", &a.manifest);
    cfg.set_path("out", &a.out);
    if let Some(p) = &a.init_from {
        cfg.set_path("init_from", p);
    }
    let s = cfg.stage_mut(stage);
    if let Some(n) = a.steps {
        s.steps = n;
    }
    if let Some(lr) = a.learning_rate {
        s.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        s.batch_size = b;
    }
    Ok(cfg)
}

pub fn pretrain(a: PretrainArgs) -> CliResult<()> {
    let mut cfg = train_config(&a.train, Stage::Pretrain)?;
    if let Some(f) = a.corpus_format {
        cfg.corpus_format = f.name().to_string();
    }
    if let Some(n) = a.llm_warm_start {
        cfg.pretrain.llm_warm_start_steps = n;
    }
    let cfg = resolved(cfg)?;
    match cfg.dtype {
        Dtype::F32 => train::<f32>(&cfg, Stage::Pretrain, &a.train),
        Dtype::F64 => train::<f64>(&cfg, Stage::Pretrain, &a.train),
    }
}

pub fn finetune(a: FinetuneArgs) -> CliResult<()> {
    let cfg = resolved(train_config(&a.train, Stage::Finetune)?)?;
    match cfg.dtype {
        Dtype::F32 => train::<f32>(&cfg, Stage::Finetune, &a.train),
        Dtype::F64 => train::<f64>(&cfg, Stage::Finetune, &a.train),
    }
}

fn train<F: Float>(cfg: &RunConfig, stage: Stage, a: &TrainArgs) -> CliResult<()> {
    let init = a.init_from.as_deref();
    let (mut bundle, data, text) = match stage {
        Stage::Pretrain => {
            let records = pipeline::load_asr(&a.manifest, cfg.corpus_format()?)?;
            let texts: Vec<&str> = records.iter().map(|r| r.transcript.as_str()).collect();
            let bundle = pipeline::init_bundle::<F>(cfg, init, &texts)?;
            let (data, text) = pipeline::pretrain_examples(&bundle, &records, cfg.seed)?;
            (bundle, data, text)
        }
        Stage::Finetune => {
            let records = pipeline::load_instructions(&a.manifest)?;
            let texts: Vec<&str> = records.iter().map(|r| r.assistant_text.as_str()).collect();
            let bundle = pipeline::init_bundle::<F>(cfg, init, &texts)?;
            let data = pipeline::instruct_examples(&bundle, &a.manifest, &records)?;
            (bundle, data, Vec::new())
        }
    };
    let s = cfg.stage(stage);
    if stage == Stage::Pretrain && s.llm_warm_start_steps > 0 {
        let losses =
            warm_start_llm(&mut bundle.model, &text, s.llm_warm_start_steps, s.warm_start_learning_rate)?;
        if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
            eprintln!("llm warm start: {} steps, loss {first:.4} -> {last:.4}", losses.len());
        }
    }
    let mut report = run_stage(&cfg.plan(stage), &data, &mut bundle.model)?;
    report.checkpoint = Some(a.out.clone());
    bundle.save(&a.out)?;
    let report_path = a.out.join(REPORT_FILE);
    std::fs::write(&report_path, report.to_jsonl()).map_err(|e| io_error(&report_path, e))?;
    let cfg_path = a.out.join(RUN_CONFIG_FILE);
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(|e| io_error(&cfg_path, e))?;
    eprintln!(
        "{stage}: {} samples, {} steps, final loss {}, checkpoint {}",
        data.len(),
        report.steps(),
        report.losses.last().map_or("n/a".to_string(), |l| format!("{l:.4}")),
        a.out.display()
    );
    Ok(())
}

pub fn validate(a: ValidateArgs) -> CliResult<()> {
    let mut cfg = base_config(&a.common)?;
    cfg.set_path("input", &a.path);
    if let Some(f) = a.corpus_format {
        cfg.corpus_format = f.name().to_string();
    }
    let cfg = resolved(cfg)?;
    if !a.path.exists() {
        return Err(io_error(&a.path, std::io::ErrorKind::NotFound.into()));
    }

    let mut violations = Vec::new();
    let checked;
    if a.path.join(MODEL_FILE).is_file() {
        match checkpoint::verify(&a.path) {
            Ok(n) => eprintln!("checkpoint {}: {n} parameters", a.path.display()),
            Err(CheckpointError::Io(e)) => return Err(io_error(&a.path, e)),
            Err(e) => violations.push(format!("{}: {e}", a.path.display())),
        }
        checked = 1;
    } else {
        let kind = if a.path.is_file() { pipeline::sniff_manifest(&a.path) } else { ManifestKind::Asr };
        let texts: Vec<String> = match kind {
            ManifestKind::Instruction => {
                read_manifest(&a.path)?.into_iter().map(|r| r.assistant_text).collect()
            }
            _ => {
                pipeline::load_asr(&a.path, cfg.corpus_format()?)?.into_iter().map(|r| r.transcript).collect()
            }
        };
        let tok = pipeline::fit_tokenizer(&cfg, texts.iter().map(String::as_str))?;
        let templater = Templater::new(&tok, &cfg.template)?;
        let samples = pipeline::templated_samples(&templater, kind, &a.path, cfg.corpus_format()?, cfg.seed)?;
        checked = samples.len();
        for (label, sample) in samples {
            match sample {
                Ok(s) => violations
                    .extend(templater.validate_sample(&s).into_iter().map(|v| format!("{label}: {v}"))),
                Err(e) => violations.push(format!("{label}: {e}")),
            }
        }
    }
    for v in &violations {
        println!("{v}");
    }
    eprintln!("{checked} checked, {} violations", violations.len());
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::new(
            ExitClass::Other,
            format!("{} violations in {}", violations.len(), a.path.display()),
        ))
    }
}

pub fn infer(a: InferArgs) -> CliResult<()> {
    let mut cfg = base_config(&a.common)?;
    cfg.set_path("checkpoint", &a.checkpoint);
    cfg.set_path("audio", &a.audio);
    if let Some(n) = a.max_new_tokens {
        cfg.infer.max_new_tokens = n;
    }
    let cfg = resolved(cfg)?;
    let text = match cfg.dtype {
        Dtype::F32 => respond::<f32>(&a.checkpoint, &a.audio, cfg.infer.max_new_tokens)?,
        Dtype::F64 => respond::<f64>(&a.checkpoint, &a.audio, cfg.infer.max_new_tokens)?,
    };
    println!("{text}");
    Ok(())
}

/// Greedy response of the checkpoint in `dir` to the spoken instruction in `audio`.
pub fn respond<F: Float>(dir: &Path, audio: &Path, max_new_tokens: usize) -> CliResult<String> {
    let bundle = checkpoint::restore::<F>(dir)?;
    let templater = Templater::new(&bundle.tokenizer, &bundle.template)?;
    let prompt = templater.build_instruct_prompt(&[], &audio.display().to_string())?;
    let wave = load_audio(audio, bundle.model.config().encoder.sample_rate)?;
    let ids = bundle.model.generate(&prompt, &[wave], max_new_tokens, templater.table().eos)?;
    Ok(bundle.tokenizer.decode(&ids))
}

pub fn stats(a: StatsArgs) -> CliResult<()> {
    print!("{}", compute_stats(&a.manifest)?.render_table());
    Ok(())
}
