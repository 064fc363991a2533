//! Text-to-speech clients with a content-addressed cache, retries and rate limiting.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use aulm_core::audio::{decode_audio_bytes, tone_code};
use aulm_core::template::Language;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DataError, TtsError};

/// Environment variable naming the shell command of [`CommandTtsClient`].
pub const TTS_COMMAND_ENV: &str = "AULM_TTS_COMMAND";

/// Renders `text` with `voice`; returns a WAV or FLAC file as bytes.
pub trait TtsClient: Send + Sync {
    fn synthesize(&self, text: &str, language: Language, voice: &str) -> Result<Vec<u8>, TtsError>;
}

/// Offline client producing [`tone_code`] audio. Counts its invocations.
pub struct MockTtsClient {
    sample_rate: u32,
    calls: AtomicUsize,
    fail_marker: Option<String>,
}

impl MockTtsClient {
    pub fn new(sample_rate: u32) -> Self {
        MockTtsClient { sample_rate, calls: AtomicUsize::new(0), fail_marker: None }
    }

    /// Every request whose text contains `marker` fails.
    pub fn failing_on(mut self, marker: impl Into<String>) -> Self {
        self.fail_marker = Some(marker.into());
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl TtsClient for MockTtsClient {
    fn synthesize(&self, text: &str, _language: Language, _voice: &str) -> Result<Vec<u8>, TtsError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if self.fail_marker.as_deref().is_some_and(|m| text.contains(m)) {
            return Err(TtsError("mock failure".into()));
        }
        Ok(tone_code(text, self.sample_rate, 30.0).to_wav_bytes())
    }
}

/// Delegates to an external program for real synthesis backends.
///
/// The command runs under `sh -c` with the request in `AULM_TTS_TEXT`,
/// `AULM_TTS_LANGUAGE` and `AULM_TTS_VOICE`, and must print audio bytes on
/// stdout. Credentials reach it through the inherited environment.
pub struct CommandTtsClient {
    command: String,
}

impl CommandTtsClient {
    pub fn new(command: impl Into<String>) -> Self {
        CommandTtsClient { command: command.into() }
    }

    pub fn from_env() -> Result<Self, DataError> {
        match std::env::var(TTS_COMMAND_ENV) {
            Ok(cmd) if !cmd.trim().is_empty() => Ok(Self::new(cmd)),
            _ => Err(DataError::Client(format!("{TTS_COMMAND_ENV} is not set"))),
        }
    }
}

impl TtsClient for CommandTtsClient {
    fn synthesize(&self, text: &str, language: Language, voice: &str) -> Result<Vec<u8>, TtsError> {
        let out = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .env("AULM_TTS_TEXT", text)
            .env("AULM_TTS_LANGUAGE", language.to_string())
            .env("AULM_TTS_VOICE", voice)
            .stdin(Stdio::null())
            .output()
            .map_err(|e| TtsError(format!("cannot run tts command: {e}")))?;
        if !out.status.success() {
            let msg = String::from_utf8_lossy(&out.stderr);
            return Err(TtsError(format!("tts command failed ({}): {}", out.status, msg.trim())));
        }
        Ok(out.stdout)
    }
}

/// Language-keyed voice names, assigned round-robin per conversation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoicePools {
    pub en: Vec<String>,
    pub zh: Vec<String>,
}

impl Default for VoicePools {
    fn default() -> Self {
        VoicePools {
            en: vec!["en-female-1".into(), "en-male-1".into()],
            zh: vec!["zh-female-1".into(), "zh-male-1".into()],
        }
    }
}

impl VoicePools {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.en.is_empty() || self.zh.is_empty() {
            return Err(DataError::Config("every language needs at least one voice".into()));
        }
        Ok(())
    }

    /// Voice for the `k`-th conversation in `language`.
    pub fn pick(&self, language: Language, k: usize) -> &str {
        let pool = match language {
            Language::En => &self.en,
            Language::Zh => &self.zh,
        };
        &pool[k % pool.len()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub sample_rate: u32,
    pub max_attempts: usize,
    /// Delay before the second attempt; doubles after each failure.
    pub backoff_ms: u64,
    /// Requests per second across all workers; `None` is unlimited.
    pub max_requests_per_sec: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sample_rate: aulm_core::audio::DEFAULT_SAMPLE_RATE,
            max_attempts: 3,
            backoff_ms: 500,
            max_requests_per_sec: None,
        }
    }
}

struct RateLimiter {
    interval: Option<Duration>,
    next: Mutex<Instant>,
}

impl RateLimiter {
    fn new(per_sec: Option<f64>) -> Self {
        RateLimiter {
            interval: per_sec.map(|r| Duration::from_secs_f64(1.0 / r)),
            next: Mutex::new(Instant::now()),
        }
    }

    fn wait(&self) {
        let Some(interval) = self.interval else { return };
        let mut next = self.next.lock().unwrap_or_else(|e| e.into_inner());
        let now = Instant::now();
        if *next > now {
            std::thread::sleep(*next - now);
        }
        *next = (*next).max(now) + interval;
    }
}

/// Shared front end for a client: cache lookup, retries, rate limit and
/// normalization to the configured sample rate.
pub struct Synthesizer<'a> {
    client: &'a dyn TtsClient,
    cache_dir: PathBuf,
    config: SynthConfig,
    limiter: RateLimiter,
    invocations: AtomicUsize,
}

impl<'a> Synthesizer<'a> {
    pub fn new(
        client: &'a dyn TtsClient,
        cache_dir: impl Into<PathBuf>,
        config: SynthConfig,
    ) -> Result<Self, DataError> {
        if config.sample_rate == 0 || config.max_attempts == 0 {
            return Err(DataError::Config("sample_rate and max_attempts must be positive".into()));
        }
        if config.max_requests_per_sec.is_some_and(|r| r.is_nan() || r <= 0.0) {
            return Err(DataError::Config("max_requests_per_sec must be positive".into()));
        }
        Ok(Synthesizer {
            client,
            cache_dir: cache_dir.into(),
            limiter: RateLimiter::new(config.max_requests_per_sec),
            config,
            invocations: AtomicUsize::new(0),
        })
    }

    /// Client calls made through this synthesizer so far, retries included.
    pub fn invocations(&self) -> usize {
        self.invocations.load(Ordering::SeqCst)
    }

    pub fn cache_key(&self, text: &str, language: Language, voice: &str) -> String {
        let mut h = Sha256::new();
        for part in [voice, &language.to_string(), &self.config.sample_rate.to_string(), text] {
            h.update(part.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }

    /// WAV bytes at the configured rate, from the cache when possible.
    pub fn render(&self, text: &str, language: Language, voice: &str) -> Result<Vec<u8>, TtsError> {
        let key = self.cache_key(text, language, voice);
        let cached = self.cache_dir.join(format!("{key}.wav"));
        if let Ok(bytes) = std::fs::read(&cached) {
            return Ok(bytes);
        }
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut last = TtsError("no attempt made".into());
        for attempt in 1..=self.config.max_attempts {
            self.limiter.wait();
            self.invocations.fetch_add(1, Ordering::SeqCst);
            let result = self.client.synthesize(text, language, voice).and_then(|raw| {
                decode_audio_bytes(&raw, self.config.sample_rate)
                    .map(|w| w.to_wav_bytes())
                    .map_err(|e| TtsError(format!("client returned bad audio: {e}")))
            });
            match result {
                Ok(wav) => {
                    if let Err(e) = store(&self.cache_dir, &key, &wav) {
                        log::warn!("tts cache write failed: {e}");
                    }
                    return Ok(wav);
                }
                Err(e) => {
                    log::debug!("tts attempt {attempt}/{} failed: {e}", self.config.max_attempts);
                    last = e;
                    if attempt < self.config.max_attempts {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(TtsError(format!("gave up after {} attempts: {}", self.config.max_attempts, last.0)))
    }
}

fn store(dir: &Path, key: &str, bytes: &[u8]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!("{key}.{:?}.tmp", std::thread::current().id()).replace(['(', ')'], ""));
    let mut f = std::fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    drop(f);
    std::fs::rename(&tmp, dir.join(format!("{key}.wav")))
}

/// Renders `text` and writes it to `dest`.
pub fn synthesize_speech(
    synth: &Synthesizer<'_>,
    text: &str,
    language: Language,
    voice: &str,
    dest: &Path,
) -> Result<PathBuf, TtsError> {
    let wav = synth.render(text, language, voice)?;
    if let Some(dir) = dest.parent() {
        std::fs::create_dir_all(dir).map_err(|e| TtsError(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(dest, wav).map_err(|e| TtsError(format!("{}: {e}", dest.display())))?;
    Ok(dest.to_path_buf())
}
