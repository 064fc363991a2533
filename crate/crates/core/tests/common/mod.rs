#![allow(dead_code)]

use aulm_core::audio::{AudioWave, EncoderConfig};
use aulm_core::lm::LmConfig;
use aulm_core::model::ModelConfig;
use aulm_core::template::{AudioSlot, SampleKind, TemplatedSample};
use aulm_core::tokens::{SpecialTokenTable, TokenId};

pub const VOCAB: usize = 32;
pub const PATCHES: usize = 4;

pub fn mini_table() -> SpecialTokenTable {
    SpecialTokenTable { bos: 1, eos: 2, audio_start: 29, audio_end: 30, audio_patch: 31 }
}

/// vocab 32, llm_dim 8, 4 patches, tiny encoder.
pub fn mini_config(hidden: Option<usize>) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            n_fft: 64,
            win_length: 64,
            hop_length: 32,
            n_mels: 8,
            encoder_dim: 6,
            sample_rate: 8000,
            max_duration_secs: 2.0,
        },
        audio_token_len: PATCHES,
        adaptor_hidden: hidden,
        lm: LmConfig {
            vocab_size: VOCAB,
            dim: 8,
            layers: 1,
            heads: 2,
            ff_mult: 2,
            context: 64,
            init_std: 0.3,
        },
        seed: 7,
    }
}

/// BOS, prompt ids, one slot per entry of `slots` separated by `sep`, then
/// `target` + EOS as the loss-bearing tail of each round.
pub fn mini_sample(prompt: &[TokenId], rounds: &[&[TokenId]]) -> TemplatedSample {
    let t = mini_table();
    let mut tokens = vec![t.bos];
    let mut mask = vec![0u8];
    let mut slots = Vec::new();
    let mut targets = Vec::new();
    tokens.extend_from_slice(prompt);
    mask.extend(prompt.iter().map(|_| 0));
    for (k, target) in rounds.iter().enumerate() {
        let start = tokens.len();
        tokens.push(t.audio_start);
        tokens.extend(std::iter::repeat_n(t.audio_patch, PATCHES));
        tokens.push(t.audio_end);
        tokens.push(3);
        mask.extend(std::iter::repeat_n(0, PATCHES + 3));
        slots.push(AudioSlot {
            start_index: start,
            patch_range: start + 1..start + 1 + PATCHES,
            audio_ref: format!("w{k}"),
        });
        let ts = tokens.len();
        tokens.extend_from_slice(target);
        tokens.push(t.eos);
        mask.extend(std::iter::repeat_n(1, target.len() + 1));
        targets.push(ts..tokens.len());
    }
    TemplatedSample {
        tokens,
        loss_mask: mask,
        audio_slots: slots,
        kind: if rounds.len() == 1 { SampleKind::Pretrain } else { SampleKind::Instruct },
        targets,
    }
}

pub fn chirp(seconds: f64, rate: u32, f0: f64) -> AudioWave {
    let n = (seconds * rate as f64) as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / rate as f64;
            (0.4 * (2.0 * std::f64::consts::PI * (f0 + 300.0 * t) * t).sin()) as f32
        })
        .collect();
    AudioWave::new(samples, rate).unwrap()
}
