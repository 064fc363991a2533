#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aulm_core::audio::tone_code;
use aulm_core::template::Language;
use aulm_data::conversation::Source;
use aulm_data::stats::{manifest_bytes, InstructionRecord};

pub const LABELS: [&str; 16] = [
    "red apple",
    "blue sky",
    "green tree",
    "cold water",
    "warm sun",
    "dark night",
    "tall man",
    "small cat",
    "big dog",
    "fast car",
    "slow boat",
    "old house",
    "new book",
    "soft bed",
    "loud bell",
    "quiet room",
];

pub const QA: [(&str, &str); 8] = [
    ("what color is the sky", "blue"),
    ("name a fruit", "an apple"),
    ("how many legs has a cat", "four legs"),
    ("say hello", "hello there"),
    ("what is two plus two", "four"),
    ("where do fish live", "in water"),
    ("what do cows drink", "water"),
    ("when does the sun rise", "in the morning"),
];

/// Small model for fast command-line runs.
pub const TINY_CONFIG: &str = r#"
[model]
dim = 32
layers = 1
heads = 2
context = 192
[pretrain]
batch_size = 4
learning_rate = 0.01
[finetune]
batch_size = 4
learning_rate = 0.003
"#;

pub fn aulm() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_aulm"));
    c.env_remove("AULM_TTS_COMMAND").env("RUST_LOG", "error");
    c
}

pub fn run(args: &[&str]) -> Output {
    aulm().args(args).output().expect("aulm runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn mini_corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../data/tests/fixtures/mini_corpus")
}

pub fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

/// ASR jsonl manifest over tone-coded renderings of `labels`.
pub fn asr_fixture(dir: &Path, labels: &[&str]) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let mut lines = String::new();
    for (i, label) in labels.iter().enumerate() {
        let name = format!("a{i}.wav");
        tone_code(label, 16_000, 30.0).write_wav(&dir.join(&name)).unwrap();
        lines.push_str(
            &serde_json::json!({"audio_path": name, "transcript": label, "language": "en"}).to_string(),
        );
        lines.push('\n');
    }
    let p = dir.join("asr.jsonl");
    std::fs::write(&p, lines).unwrap();
    p
}

/// Instruction manifest whose questions are tone-coded audio.
pub fn instruct_fixture(dir: &Path, pairs: &[(&str, &str)]) -> PathBuf {
    std::fs::create_dir_all(dir.join("audio")).unwrap();
    let records: Vec<InstructionRecord> = pairs
        .iter()
        .enumerate()
        .map(|(i, (q, a))| {
            let rel = format!("audio/q{i}.wav");
            tone_code(q, 16_000, 30.0).write_wav(&dir.join(&rel)).unwrap();
            InstructionRecord {
                conversation_id: format!("c{i}"),
                round_index: 0,
                user_audio_path: rel,
                user_text: q.to_string(),
                assistant_text: a.to_string(),
                language: Language::En,
                source: Source::Other,
            }
        })
        .collect();
    let p = dir.join("instructions.jsonl");
    std::fs::write(&p, manifest_bytes(&records)).unwrap();
    p
}

pub fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}
