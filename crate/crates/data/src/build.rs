//! The instruction dataset builder: filter, synthesize, write manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use aulm_core::template::Language;
use serde::{Deserialize, Serialize};

use crate::conversation::{Conversation, Source};
use crate::error::{DataError, TtsError};
use crate::filter::{self, FilterConfig, Filters, Rule};
use crate::stats::{manifest_bytes, DatasetStats, InstructionRecord};
use crate::tts::{SynthConfig, Synthesizer, TtsClient, VoicePools};

pub const MANIFEST_FILE: &str = "instructions.jsonl";
pub const FILTER_LOG_FILE: &str = "filter_log.jsonl";
pub const STATS_FILE: &str = "stats.txt";
pub const CACHE_DIR: &str = ".tts_cache";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    pub filters: FilterConfig,
    pub synth: SynthConfig,
    pub voices: VoicePools,
    /// Parallel synthesis workers.
    pub concurrency: usize,
    /// Defaults to `<out_dir>/.tts_cache`.
    pub cache_dir: Option<PathBuf>,
    /// Run the filters and report would-be statistics; write nothing.
    pub dry_run: bool,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            filters: FilterConfig::default(),
            synth: SynthConfig::default(),
            voices: VoicePools::default(),
            concurrency: 4,
            cache_dir: None,
            dry_run: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Keep,
    Drop,
    Failed,
}

/// One line of the filter log. Each conversation gets exactly one keep or
/// drop entry; synthesis failures add `failed` entries naming the round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub conversation_id: String,
    pub source: Source,
    pub decision: Decision,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rule: Option<Rule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub turn: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub round: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl LogEntry {
    fn keep(c: &Conversation) -> Self {
        LogEntry {
            conversation_id: c.id.clone(),
            source: c.source,
            decision: Decision::Keep,
            stage: None,
            rule: None,
            turn: None,
            round: None,
            detail: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BuildOutput {
    /// `None` for a dry run.
    pub manifest_path: Option<PathBuf>,
    pub records: Vec<InstructionRecord>,
    pub stats: DatasetStats,
    pub log: Vec<LogEntry>,
    /// Client calls made, retries included.
    pub tts_invocations: usize,
}

impl BuildOutput {
    pub fn dropped(&self) -> impl Iterator<Item = &LogEntry> {
        self.log.iter().filter(|e| e.decision == Decision::Drop)
    }

    pub fn failed(&self) -> impl Iterator<Item = &LogEntry> {
        self.log.iter().filter(|e| e.decision == Decision::Failed)
    }
}

struct Job<'c> {
    conv: &'c Conversation,
    round: usize,
    text: &'c str,
    answer: &'c str,
    voice: String,
}

impl Job<'_> {
    fn rel_path(&self) -> String {
        format!("audio/{}/{}.wav", self.conv.id, self.round)
    }

    fn record(&self) -> InstructionRecord {
        InstructionRecord {
            conversation_id: self.conv.id.clone(),
            round_index: self.round,
            user_audio_path: self.rel_path(),
            user_text: self.text.to_string(),
            assistant_text: self.answer.to_string(),
            language: self.conv.language,
            source: self.conv.source,
        }
    }
}

/// Filters `conversations`, synthesizes every kept human turn and writes
/// `instructions.jsonl`, `filter_log.jsonl`, `stats.txt` and `audio/` under
/// `out_dir`. Synthesis failures are logged per round; write failures abort
/// and remove what this run created.
pub fn build_instruction_dataset(
    conversations: &[Conversation],
    client: &dyn TtsClient,
    out_dir: &Path,
    config: &BuildConfig,
) -> Result<BuildOutput, DataError> {
    let filters = Filters::new(&config.filters)?;
    config.voices.validate()?;
    if config.concurrency == 0 {
        return Err(DataError::Config("concurrency must be at least 1".into()));
    }

    let mut log = Vec::with_capacity(conversations.len());
    let mut jobs = Vec::new();
    let mut per_language: BTreeMap<Language, usize> = BTreeMap::new();
    for conv in conversations {
        match filter::apply(&filters, conv) {
            Err((stage, reason)) => log.push(LogEntry {
                conversation_id: conv.id.clone(),
                source: conv.source,
                decision: Decision::Drop,
                stage: Some(stage.into()),
                rule: Some(reason.rule),
                turn: Some(reason.turn),
                round: None,
                detail: Some(reason.detail),
            }),
            Ok(()) => {
                log.push(LogEntry::keep(conv));
                let k = per_language.entry(conv.language).or_default();
                let voice = config.voices.pick(conv.language, *k).to_string();
                *k += 1;
                for (round, (text, answer)) in conv.rounds().enumerate() {
                    jobs.push(Job { conv, round, text, answer, voice: voice.clone() });
                }
            }
        }
    }

    if config.dry_run {
        let records: Vec<_> = jobs.iter().map(Job::record).collect();
        return Ok(BuildOutput {
            manifest_path: None,
            stats: DatasetStats::from_records(&records),
            records,
            log,
            tts_invocations: 0,
        });
    }

    let cache = config.cache_dir.clone().unwrap_or_else(|| out_dir.join(CACHE_DIR));
    let synth = Synthesizer::new(client, cache, config.synth.clone())?;
    let rendered = render_all(&synth, &jobs, config.concurrency);

    let mut writer = OutputWriter::new();
    let result = (|| {
        writer.mkdir(out_dir)?;
        let mut records = Vec::new();
        for (job, audio) in jobs.iter().zip(rendered) {
            match audio {
                Ok(bytes) => {
                    writer.write(&out_dir.join(job.rel_path()), &bytes)?;
                    records.push(job.record());
                }
                Err(e) => {
                    log::warn!("synthesis failed for {} round {}: {e}", job.conv.id, job.round);
                    log.push(LogEntry {
                        conversation_id: job.conv.id.clone(),
                        source: job.conv.source,
                        decision: Decision::Failed,
                        stage: Some("tts".into()),
                        rule: None,
                        turn: Some(2 * job.round),
                        round: Some(job.round),
                        detail: Some(e.0),
                    });
                }
            }
        }
        let stats = DatasetStats::from_records(&records);
        let manifest = out_dir.join(MANIFEST_FILE);
        writer.write_atomic(&manifest, &manifest_bytes(&records))?;
        let mut log_bytes = Vec::new();
        for e in &log {
            serde_json::to_writer(&mut log_bytes, e).expect("log entry serializes");
            log_bytes.push(b'\n');
        }
        writer.write_atomic(&out_dir.join(FILTER_LOG_FILE), &log_bytes)?;
        writer.write_atomic(&out_dir.join(STATS_FILE), stats.render_table().as_bytes())?;
        Ok((manifest, records, stats))
    })();
    match result {
        Ok((manifest, records, stats)) => Ok(BuildOutput {
            manifest_path: Some(manifest),
            records,
            stats,
            log,
            tts_invocations: synth.invocations(),
        }),
        Err(e) => {
            writer.rollback();
            Err(e)
        }
    }
}

/// Runs the jobs on `workers` threads; results come back in job order.
fn render_all(synth: &Synthesizer<'_>, jobs: &[Job<'_>], workers: usize) -> Vec<Result<Vec<u8>, TtsError>> {
    let next = AtomicUsize::new(0);
    let mut results: Vec<Option<Result<Vec<u8>, TtsError>>> = (0..jobs.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers.min(jobs.len()).max(1))
            .map(|_| {
                s.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        let Some(job) = jobs.get(i) else { break };
                        done.push((i, synth.render(job.text, job.conv.language, &job.voice)));
                    }
                    done
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("synthesis worker panicked") {
                results[i] = Some(r);
            }
        }
    });
    results.into_iter().map(|r| r.expect("every job ran")).collect()
}

/// Tracks files and directories created by one build so a failed build can
/// remove them again.
struct OutputWriter {
    created_files: Vec<PathBuf>,
    created_dirs: Vec<PathBuf>,
}

impl OutputWriter {
    fn new() -> Self {
        OutputWriter { created_files: Vec::new(), created_dirs: Vec::new() }
    }

    fn mkdir(&mut self, dir: &Path) -> Result<(), DataError> {
        let mut missing = Vec::new();
        let mut d = Some(dir);
        while let Some(p) = d {
            if p.as_os_str().is_empty() || p.exists() {
                break;
            }
            missing.push(p.to_path_buf());
            d = p.parent();
        }
        std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
        self.created_dirs.extend(missing.into_iter().rev());
        Ok(())
    }

    fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<(), DataError> {
        if let Some(parent) = path.parent() {
            self.mkdir(parent)?;
        }
        let existed = path.exists();
        std::fs::write(path, bytes).map_err(|e| DataError::io(path, e))?;
        if !existed {
            self.created_files.push(path.to_path_buf());
        }
        Ok(())
    }

    fn write_atomic(&mut self, path: &Path, bytes: &[u8]) -> Result<(), DataError> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        let existed = path.exists();
        let res = std::fs::write(&tmp, bytes).and_then(|_| std::fs::rename(&tmp, path));
        if let Err(e) = res {
            let _ = std::fs::remove_file(&tmp);
            return Err(DataError::io(path, e));
        }
        if !existed {
            self.created_files.push(path.to_path_buf());
        }
        Ok(())
    }

    fn rollback(self) {
        for f in self.created_files.iter().rev() {
            let _ = std::fs::remove_file(f);
        }
        for d in self.created_dirs.iter().rev() {
            // Leaves directories that still hold files from elsewhere.
            let _ = std::fs::remove_dir(d);
        }
    }
}
