//! Encoder → adaptor → LLM composition, embedding splicing, masked loss and
//! greedy generation.

use std::collections::BTreeSet;

use aulm_tensor::{Graph, Mat, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptor::{AdaptedAudioBlock, AdaptorConfig, ModalAdaptor};
use crate::audio::{AudioWave, EncoderConfig, FrameEmbeddingMatrix, SpeechEncoder, ToyEncoder};
use crate::error::ModelError;
use crate::lm::{LmConfig, ToyCausalLm, TOKEN_EMBEDDING};
use crate::params::{Bindings, ParamGroup, ParamSnapshot};
use crate::template::{AudioSequence, TemplatedSample};
use crate::tokens::{TokenId, DEFAULT_AUDIO_TOKEN_LEN};
use crate::Float;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub audio_token_len: usize,
    #[serde(default)]
    pub adaptor_hidden: Option<usize>,
    pub lm: LmConfig,
    pub seed: u64,
}

impl ModelConfig {
    pub fn toy(vocab_size: usize) -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            audio_token_len: DEFAULT_AUDIO_TOKEN_LEN,
            adaptor_hidden: None,
            lm: LmConfig::toy(vocab_size),
            seed: 0,
        }
    }

    pub fn adaptor(&self) -> AdaptorConfig {
        AdaptorConfig {
            audio_token_len: self.audio_token_len,
            encoder_dim: self.encoder.encoder_dim,
            llm_dim: self.lm.dim,
            hidden_dim: self.adaptor_hidden,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.audio_token_len == 0 {
            return Err(ModelError::Config("audio_token_len must be positive".into()));
        }
        if self.encoder.encoder_dim == 0 || self.encoder.hop_length == 0 || self.encoder.n_mels == 0 {
            return Err(ModelError::Config("encoder sizes must be positive".into()));
        }
        self.lm.validate()
    }
}

/// Replaces the patch positions of every slot with the matching block rows;
/// all other positions take their embedding-table row.
pub fn splice<F: Float, S: AudioSequence + ?Sized>(
    sample: &S,
    blocks: &[AdaptedAudioBlock<F>],
    embed_table: &Mat<F>,
) -> Result<Mat<F>, ModelError> {
    let slots = sample.audio_slots();
    if blocks.len() != slots.len() {
        return Err(ModelError::Splice(format!("{} blocks for {} audio slots", blocks.len(), slots.len())));
    }
    let tokens = sample.tokens();
    let mut out = Mat::zeros((tokens.len(), embed_table.ncols()));
    for (i, &t) in tokens.iter().enumerate() {
        let row = embed_table.row(t as usize);
        out.row_mut(i).assign(&row);
    }
    for (k, (slot, block)) in slots.iter().zip(blocks).enumerate() {
        if block.rows() != slot.patch_range.len() {
            return Err(ModelError::Splice(format!(
                "block {k} has {} rows, slot has {} patches",
                block.rows(),
                slot.patch_range.len()
            )));
        }
        if block.values().ncols() != embed_table.ncols() {
            return Err(ModelError::Splice(format!("block {k} width mismatch")));
        }
        for (r, i) in slot.patch_range.clone().enumerate() {
            out.row_mut(i).assign(&block.values().row(r));
        }
    }
    Ok(out)
}

/// Per-row next-token targets: row `i` predicts `tokens[i + 1]` and counts
/// iff `loss_mask[i + 1] == 1`. The last row never counts.
pub fn next_token_targets<F: Float>(sample: &TemplatedSample) -> (Vec<usize>, Vec<F>) {
    let n = sample.tokens.len();
    let mut targets = vec![0usize; n];
    let mut weights = vec![F::zero(); n];
    for i in 0..n.saturating_sub(1) {
        targets[i] = sample.tokens[i + 1] as usize;
        if sample.loss_mask[i + 1] == 1 {
            weights[i] = F::one();
        }
    }
    (targets, weights)
}

/// Mean next-token cross-entropy over loss-bearing target positions,
/// computed directly from a logits matrix.
pub fn loss<F: Float>(logits: &Mat<F>, sample: &TemplatedSample) -> Result<F, ModelError> {
    if logits.nrows() != sample.tokens.len() {
        return Err(ModelError::InvalidSample(format!(
            "{} logit rows for {} tokens",
            logits.nrows(),
            sample.tokens.len()
        )));
    }
    let (targets, weights) = next_token_targets::<F>(sample);
    let count = weights.iter().filter(|&&w| w > F::zero()).count();
    if count == 0 {
        return Err(ModelError::InvalidSample("no loss-bearing position".into()));
    }
    let mut total = F::zero();
    for (i, row) in logits.rows().into_iter().enumerate() {
        if weights[i] == F::zero() {
            continue;
        }
        let max = row.iter().fold(F::neg_infinity(), |m, &x| m.max(x));
        let lse = row.iter().map(|&x| (x - max).exp()).sum::<F>().ln() + max;
        total += lse - row[targets[i]];
    }
    Ok(total / F::lit(count as f64))
}

pub struct SpeechLm<F: Float> {
    config: ModelConfig,
    encoder: ToyEncoder<F>,
    adaptor: ModalAdaptor<F>,
    lm: ToyCausalLm<F>,
}

impl<F: Float> SpeechLm<F> {
    /// Every parameter is drawn from one ChaCha stream per group, all keyed by
    /// `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let encoder = ToyEncoder::new(config.encoder.clone(), config.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let adaptor = ModalAdaptor::new(config.adaptor(), &mut rng);
        rng.set_stream(2);
        let lm = ToyCausalLm::new(config.lm.clone(), &mut rng)?;
        Ok(SpeechLm { config, encoder, adaptor, lm })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encoder(&self) -> &ToyEncoder<F> {
        &self.encoder
    }

    pub fn adaptor(&self) -> &ModalAdaptor<F> {
        &self.adaptor
    }

    pub fn lm(&self) -> &ToyCausalLm<F> {
        &self.lm
    }

    pub fn vocab_size(&self) -> usize {
        self.config.lm.vocab_size
    }

    pub fn params(&self) -> Vec<(String, &Mat<F>)> {
        let mut out = vec![
            ("encoder.proj.weight".to_string(), &self.encoder.weight),
            ("encoder.proj.bias".to_string(), &self.encoder.bias),
        ];
        out.extend(self.adaptor.params());
        out.extend(self.lm.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Mat<F>)> {
        let mut out = vec![
            ("encoder.proj.weight".to_string(), &mut self.encoder.weight),
            ("encoder.proj.bias".to_string(), &mut self.encoder.bias),
        ];
        out.extend(self.adaptor.params_mut());
        out.extend(self.lm.params_mut());
        out
    }

    pub fn group_params(&self, group: ParamGroup) -> Vec<(String, &Mat<F>)> {
        self.params().into_iter().filter(|(n, _)| ParamGroup::of(n) == Some(group)).collect()
    }

    pub fn snapshot(&self) -> ParamSnapshot<F> {
        self.params().into_iter().map(|(n, m)| (n, m.clone())).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn bind(&self, g: &mut Graph<F>, trainable: &BTreeSet<ParamGroup>) -> Bindings {
        Bindings::new(g, &self.params(), trainable)
    }

    pub fn encode(&self, wave: &AudioWave) -> Result<FrameEmbeddingMatrix<F>, ModelError> {
        Ok(self.encoder.encode(wave)?)
    }

    pub fn encode_all(&self, waves: &[AudioWave]) -> Result<Vec<FrameEmbeddingMatrix<F>>, ModelError> {
        waves.iter().map(|w| self.encode(w)).collect()
    }

    /// Spliced input embeddings in `g`: token lookup with every slot's patch
    /// rows replaced by the adapted block of the matching clip.
    pub fn embed<S: AudioSequence + ?Sized>(
        &self,
        g: &mut Graph<F>,
        bind: &Bindings,
        sample: &S,
        frames: &[FrameEmbeddingMatrix<F>],
    ) -> Result<Var, ModelError> {
        let slots = sample.audio_slots();
        if frames.len() != slots.len() {
            return Err(ModelError::Splice(format!(
                "{} audio inputs for {} audio slots",
                frames.len(),
                slots.len()
            )));
        }
        let blocks =
            frames.iter().map(|f| self.adaptor.forward(g, bind, f)).collect::<Result<Vec<_>, _>>()?;
        self.splice_blocks(g, bind, sample, &blocks)
    }

    /// Token lookup with slot `k`'s patch rows taken from `blocks[k]`.
    pub fn splice_blocks<S: AudioSequence + ?Sized>(
        &self,
        g: &mut Graph<F>,
        bind: &Bindings,
        sample: &S,
        blocks: &[Var],
    ) -> Result<Var, ModelError> {
        let slots = sample.audio_slots();
        if blocks.len() != slots.len() {
            return Err(ModelError::Splice(format!(
                "{} blocks for {} audio slots",
                blocks.len(),
                slots.len()
            )));
        }
        let ids = self.checked_ids(sample.tokens())?;
        let mut x = g.gather(bind.get(TOKEN_EMBEDDING), &ids);
        for (slot, &block) in slots.iter().zip(blocks) {
            let (rows, cols) = g.value(block).dim();
            if rows != slot.patch_range.len() || cols != self.config.lm.dim {
                return Err(ModelError::Splice(format!(
                    "block is {rows}x{cols}, slot needs {}x{}",
                    slot.patch_range.len(),
                    self.config.lm.dim
                )));
            }
            x = g.splice(x, block, slot.patch_range.start);
        }
        Ok(x)
    }

    fn checked_ids(&self, tokens: &[TokenId]) -> Result<Vec<usize>, ModelError> {
        let vocab = self.vocab_size();
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= vocab) {
            return Err(ModelError::InvalidSample(format!("token id {bad} outside vocabulary of {vocab}")));
        }
        Ok(tokens.iter().map(|&t| t as usize).collect())
    }

    /// Logits with every audio slot filled by the token embeddings of a
    /// transcript, stretched over the patch positions the same way pooling
    /// stretches frames. Only the LLM is involved.
    pub fn logits_text_graph<S: AudioSequence + ?Sized>(
        &self,
        g: &mut Graph<F>,
        bind: &Bindings,
        sample: &S,
        transcripts: &[Vec<TokenId>],
    ) -> Result<Var, ModelError> {
        let len = self.config.audio_token_len;
        let blocks = transcripts
            .iter()
            .map(|t| {
                if t.is_empty() {
                    return Err(ModelError::InvalidSample("empty transcript".into()));
                }
                let ids = self.checked_ids(t)?;
                let stretched: Vec<usize> = (0..len).map(|b| ids[b * ids.len() / len]).collect();
                Ok(g.gather(bind.get(TOKEN_EMBEDDING), &stretched))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let x = self.splice_blocks(g, bind, sample, &blocks)?;
        self.lm.forward(g, bind, x)
    }

    pub fn logits_graph<S: AudioSequence + ?Sized>(
        &self,
        g: &mut Graph<F>,
        bind: &Bindings,
        sample: &S,
        frames: &[FrameEmbeddingMatrix<F>],
    ) -> Result<Var, ModelError> {
        let x = self.embed(g, bind, sample, frames)?;
        self.lm.forward(g, bind, x)
    }

    /// Logits (`len(tokens) × vocab`) with all parameters frozen.
    pub fn forward_frames<S: AudioSequence + ?Sized>(
        &self,
        sample: &S,
        frames: &[FrameEmbeddingMatrix<F>],
    ) -> Result<Mat<F>, ModelError> {
        let mut g = Graph::new();
        let bind = self.bind(&mut g, &BTreeSet::new());
        let out = self.logits_graph(&mut g, &bind, sample, frames)?;
        Ok(g.value(out).clone())
    }

    pub fn forward<S: AudioSequence + ?Sized>(
        &self,
        sample: &S,
        waves: &[AudioWave],
    ) -> Result<Mat<F>, ModelError> {
        let frames = self.encode_all(waves)?;
        self.forward_frames(sample, &frames)
    }

    pub fn adapt_all(
        &self,
        frames: &[FrameEmbeddingMatrix<F>],
    ) -> Result<Vec<AdaptedAudioBlock<F>>, ModelError> {
        frames.iter().map(|f| self.adaptor.adapt(f)).collect()
    }

    /// Greedy decoding after `prompt` until `eos` or `max_new_tokens`; the
    /// returned ids exclude `eos`.
    pub fn generate<S: AudioSequence + ?Sized>(
        &self,
        prompt: &S,
        waves: &[AudioWave],
        max_new_tokens: usize,
        eos: TokenId,
    ) -> Result<Vec<TokenId>, ModelError> {
        let frames = self.encode_all(waves)?;
        let mut seq = crate::template::PromptSample {
            tokens: prompt.tokens().to_vec(),
            audio_slots: prompt.audio_slots().to_vec(),
        };
        let mut out = Vec::new();
        while out.len() < max_new_tokens && seq.tokens.len() < self.config.lm.context {
            let logits = self.forward_frames(&seq, &frames)?;
            let last = logits.row(logits.nrows() - 1);
            if last.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::InvalidSample("non-finite logits".into()));
            }
            let next = last
                .iter()
                .enumerate()
                .fold((0usize, F::neg_infinity()), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0 as TokenId;
            if next == eos {
                break;
            }
            out.push(next);
            seq.tokens.push(next);
        }
        Ok(out)
    }
}
