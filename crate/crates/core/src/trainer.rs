//! Two-stage schedule: adaptor-only modality alignment, then joint
//! adaptor + LLM instruction tuning. The encoder never trains.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::PathBuf;
use std::time::Instant;

use aulm_tensor::{AdamW, Graph, Mat};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioWave, FrameEmbeddingMatrix};
use crate::error::TrainError;
use crate::model::{next_token_targets, SpeechLm};
use crate::params::{max_delta_per_group, ParamGroup};
use crate::template::{SampleKind, TemplatedSample};
use crate::tokens::TokenId;
use crate::Float;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl Stage {
    pub fn sample_kind(self) -> SampleKind {
        match self {
            Stage::Pretrain => SampleKind::Pretrain,
            Stage::Finetune => SampleKind::Instruct,
        }
    }

    pub fn trainable(self) -> BTreeSet<ParamGroup> {
        match self {
            Stage::Pretrain => [ParamGroup::Adaptor].into(),
            Stage::Finetune => [ParamGroup::Adaptor, ParamGroup::Llm].into(),
        }
    }

    pub fn default_learning_rate(self) -> f64 {
        match self {
            Stage::Pretrain => 1e-3,
            Stage::Finetune => 1e-4,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stage: Stage,
    pub trainable: BTreeSet<ParamGroup>,
    pub frozen: BTreeSet<ParamGroup>,
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
}

fn default_weight_decay() -> f64 {
    0.01
}

impl StagePlan {
    pub fn new(stage: Stage, steps: usize) -> Self {
        let trainable = stage.trainable();
        let frozen = ParamGroup::ALL.into_iter().filter(|g| !trainable.contains(g)).collect();
        StagePlan {
            stage,
            trainable,
            frozen,
            steps,
            learning_rate: stage.default_learning_rate(),
            batch_size: 8,
            seed: 0,
            weight_decay: default_weight_decay(),
        }
    }

    pub fn pretrain(steps: usize) -> Self {
        Self::new(Stage::Pretrain, steps)
    }

    pub fn finetune(steps: usize) -> Self {
        Self::new(Stage::Finetune, steps)
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }

    pub fn with_batch_size(mut self, n: usize) -> Self {
        self.batch_size = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |m: String| Err(TrainError::Plan(m));
        if self.trainable != self.stage.trainable() {
            return err(format!(
                "{} trains exactly {:?}, plan lists {:?}",
                self.stage,
                self.stage.trainable(),
                self.trainable
            ));
        }
        if !self.trainable.is_disjoint(&self.frozen) {
            return err("a group is both trainable and frozen".into());
        }
        let must_freeze: &[ParamGroup] = match self.stage {
            Stage::Pretrain => &[ParamGroup::Encoder, ParamGroup::Llm],
            Stage::Finetune => &[ParamGroup::Encoder],
        };
        if let Some(g) = must_freeze.iter().find(|g| !self.frozen.contains(g)) {
            return err(format!("{} must freeze {g}", self.stage));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return err("learning rate must be positive".into());
        }
        if self.batch_size == 0 {
            return err("batch size must be positive".into());
        }
        Ok(())
    }
}

/// One templated sample with the frozen encoder's output for each of its
/// audio slots.
#[derive(Clone, Debug)]
pub struct TrainExample<F> {
    pub sample: TemplatedSample,
    pub frames: Vec<FrameEmbeddingMatrix<F>>,
}

impl<F: Float> TrainExample<F> {
    /// Runs the frozen encoder once; its output never changes during training.
    pub fn encode(
        model: &SpeechLm<F>,
        sample: TemplatedSample,
        waves: &[AudioWave],
    ) -> Result<Self, TrainError> {
        if waves.len() != sample.audio_slots.len() {
            return Err(TrainError::StageData(format!(
                "{} waves for {} audio slots",
                waves.len(),
                sample.audio_slots.len()
            )));
        }
        Ok(TrainExample { frames: model.encode_all(waves)?, sample })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: Stage,
    pub losses: Vec<f64>,
    /// Largest absolute parameter change per group over the run.
    pub max_abs_delta: BTreeMap<ParamGroup, f64>,
    pub wall_clock_secs: f64,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Serialize)]
struct StepRecord {
    step: usize,
    loss: f64,
}

#[derive(Serialize)]
struct SummaryRecord<'a> {
    summary: &'a TrainReport,
    steps: usize,
    final_loss: Option<f64>,
}

impl TrainReport {
    pub fn steps(&self) -> usize {
        self.losses.len()
    }

    /// One `{"step", "loss"}` line per step, then a summary line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (i, &loss) in self.losses.iter().enumerate() {
            out.push_str(&serde_json::to_string(&StepRecord { step: i + 1, loss }).expect("json"));
            out.push('\n');
        }
        let summary = SummaryRecord {
            summary: self,
            steps: self.losses.len(),
            final_loss: self.losses.last().copied(),
        };
        out.push_str(&serde_json::to_string(&summary).expect("json"));
        out.push('\n');
        out
    }
}

/// Mean masked loss of `batch` and gradients for every parameter that
/// requires one under `trainable`.
pub fn batch_loss_and_grads<F: Float>(
    model: &SpeechLm<F>,
    batch: &[&TrainExample<F>],
    trainable: &BTreeSet<ParamGroup>,
) -> Result<(F, HashMap<String, Mat<F>>), TrainError> {
    let mut g = Graph::new();
    let bind = model.bind(&mut g, trainable);
    let mut parts = Vec::with_capacity(batch.len());
    let mut count = 0usize;
    for ex in batch {
        let logits = model.logits_graph(&mut g, &bind, &ex.sample, &ex.frames)?;
        let (targets, weights) = next_token_targets::<F>(&ex.sample);
        count += weights.iter().filter(|&&w| w > F::zero()).count();
        parts.push(g.cross_entropy(logits, &targets, &weights));
    }
    if count == 0 {
        return Err(TrainError::StageData("batch has no loss-bearing position".into()));
    }
    let total = g.sum_scalars(&parts);
    let mean = g.scale(total, F::one() / F::lit(count as f64));
    let loss = g.scalar(mean);
    let mut grads = g.backward(mean);
    let out =
        bind.iter().filter_map(|(name, var)| grads.take(var).map(|gr| (name.to_string(), gr))).collect();
    Ok((loss, out))
}

/// Mean masked loss over `data` without gradients.
pub fn evaluate<F: Float>(model: &SpeechLm<F>, data: &[TrainExample<F>]) -> Result<F, TrainError> {
    let refs: Vec<&TrainExample<F>> = data.iter().collect();
    Ok(batch_loss_and_grads(model, &refs, &BTreeSet::new())?.0)
}

/// Drops gradients of parameters outside `trainable`, so even a gradient
/// that reached a frozen group can never be applied.
pub fn select_updates<F: Float>(
    grads: HashMap<String, Mat<F>>,
    trainable: &BTreeSet<ParamGroup>,
) -> HashMap<String, Mat<F>> {
    grads
        .into_iter()
        .filter(|(name, _)| ParamGroup::of(name).is_some_and(|g| trainable.contains(&g)))
        .collect()
}

/// Stateful optimisation loop over a fixed dataset.
pub struct Trainer<'a, F: Float> {
    plan: StagePlan,
    data: &'a [TrainExample<F>],
    optimizer: AdamW<F>,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    step: usize,
}

impl<'a, F: Float> Trainer<'a, F> {
    pub fn new(plan: StagePlan, data: &'a [TrainExample<F>]) -> Result<Self, TrainError> {
        plan.validate()?;
        let kind = plan.stage.sample_kind();
        if data.is_empty() {
            return Err(TrainError::StageData("empty dataset".into()));
        }
        if let Some((i, ex)) = data.iter().enumerate().find(|(_, ex)| ex.sample.kind != kind) {
            return Err(TrainError::StageData(format!(
                "{} stage needs {kind} samples, sample {i} is {}",
                plan.stage, ex.sample.kind
            )));
        }
        let optimizer = AdamW::new(F::lit(plan.learning_rate)).with_weight_decay(F::lit(plan.weight_decay));
        let rng = ChaCha8Rng::seed_from_u64(plan.seed);
        Ok(Trainer { plan, data, optimizer, rng, order: Vec::new(), cursor: 0, step: 0 })
    }

    pub fn plan(&self) -> &StagePlan {
        &self.plan
    }

    fn next_batch(&mut self) -> Vec<&'a TrainExample<F>> {
        let n = self.plan.batch_size.min(self.data.len());
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.cursor >= self.order.len() {
                self.order = (0..self.data.len()).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(&self.data[self.order[self.cursor]]);
            self.cursor += 1;
        }
        out
    }

    /// Loss and gradients of the next batch, without updating.
    fn compute(&mut self, model: &SpeechLm<F>) -> Result<(F, HashMap<String, Mat<F>>), TrainError> {
        let batch = self.next_batch();
        let (loss, grads) = batch_loss_and_grads(model, &batch, &self.plan.trainable)?;
        if !loss.is_finite() {
            return Err(TrainError::Divergence { step: self.step + 1 });
        }
        Ok((loss, grads))
    }

    fn apply(&mut self, model: &mut SpeechLm<F>, grads: HashMap<String, Mat<F>>) {
        let grads = select_updates(grads, &self.plan.trainable);
        let mut updates: Vec<(String, &mut Mat<F>, &Mat<F>)> = model
            .params_mut()
            .into_iter()
            .filter_map(|(name, p)| grads.get(&name).map(|g| (name, p, g)))
            .collect();
        self.optimizer.step(updates.iter_mut().map(|(n, p, g)| (n.as_str(), &mut **p, *g)));
        self.step += 1;
    }

    /// One optimiser step; returns the pre-update batch loss.
    pub fn step(&mut self, model: &mut SpeechLm<F>) -> Result<F, TrainError> {
        let (loss, grads) = self.compute(model)?;
        self.apply(model, grads);
        Ok(loss)
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }
}

/// Executes exactly `plan.steps` optimiser steps.
pub fn run_stage<F: Float>(
    plan: &StagePlan,
    data: &[TrainExample<F>],
    model: &mut SpeechLm<F>,
) -> Result<TrainReport, TrainError> {
    let started = Instant::now();
    let mut trainer = Trainer::new(plan.clone(), data)?;
    let before = model.snapshot();
    let mut losses = Vec::with_capacity(plan.steps);
    for step in 0..plan.steps {
        let loss = trainer.step(model)?;
        log::debug!("{} step {} loss {:.5}", plan.stage, step + 1, loss.as_f64());
        losses.push(loss.as_f64());
    }
    Ok(TrainReport {
        stage: plan.stage,
        losses,
        max_abs_delta: max_delta_per_group(&before, &model.snapshot()),
        wall_clock_secs: started.elapsed().as_secs_f64(),
        checkpoint: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub achieved: bool,
    pub steps_used: usize,
    pub final_loss: f64,
    pub losses: Vec<f64>,
}

/// Full-batch training until the dataset loss reaches `target_loss` or
/// `max_steps` updates have been applied. The model is left in the state
/// whose loss is reported.
pub fn overfit_probe<F: Float>(
    model: &mut SpeechLm<F>,
    data: &[TrainExample<F>],
    plan: &StagePlan,
    target_loss: f64,
    max_steps: usize,
) -> Result<ProbeOutcome, TrainError> {
    if data.len() > 64 {
        return Err(TrainError::StageData(format!(
            "overfit probe takes at most 64 samples, got {}",
            data.len()
        )));
    }
    let plan = plan.clone().with_batch_size(data.len());
    let mut trainer = Trainer::new(plan, data)?;
    let mut losses = Vec::new();
    loop {
        let (loss, grads) = trainer.compute(model)?;
        let loss = loss.as_f64();
        losses.push(loss);
        if loss <= target_loss || trainer.steps_taken() >= max_steps {
            return Ok(ProbeOutcome {
                achieved: loss <= target_loss,
                steps_used: trainer.steps_taken(),
                final_loss: loss,
                losses,
            });
        }
        trainer.apply(model, grads);
    }
}

/// A templated sample whose audio slots are stood in for by the token ids of
/// what the audio says.
#[derive(Clone, Debug)]
pub struct TextExample {
    pub sample: TemplatedSample,
    pub transcripts: Vec<Vec<TokenId>>,
}

/// Text-only language-model training of the LLM group: every audio slot is
/// filled with its transcript's token embeddings. This gives a toy LLM the
/// prior linguistic competence a pretrained LLM brings to the frozen-LLM
/// stage. Full batch; returns the loss before each update.
pub fn warm_start_llm<F: Float>(
    model: &mut SpeechLm<F>,
    data: &[TextExample],
    steps: usize,
    learning_rate: f64,
) -> Result<Vec<f64>, TrainError> {
    if data.is_empty() {
        return Err(TrainError::StageData("empty dataset".into()));
    }
    let trainable: BTreeSet<ParamGroup> = [ParamGroup::Llm].into();
    let mut opt = AdamW::new(F::lit(learning_rate));
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut g = Graph::new();
        let bind = model.bind(&mut g, &trainable);
        let mut parts = Vec::with_capacity(data.len());
        let mut count = 0usize;
        for ex in data {
            let logits = model.logits_text_graph(&mut g, &bind, &ex.sample, &ex.transcripts)?;
            let (targets, weights) = next_token_targets::<F>(&ex.sample);
            count += weights.iter().filter(|&&w| w > F::zero()).count();
            parts.push(g.cross_entropy(logits, &targets, &weights));
        }
        let total = g.sum_scalars(&parts);
        let mean = g.scale(total, F::one() / F::lit(count.max(1) as f64));
        let loss = g.scalar(mean).as_f64();
        if !loss.is_finite() {
            return Err(TrainError::Divergence { step: step + 1 });
        }
        losses.push(loss);
        let mut grads = g.backward(mean);
        let grads: HashMap<String, Mat<F>> =
            bind.iter().filter_map(|(name, var)| grads.take(var).map(|gr| (name.to_string(), gr))).collect();
        let mut updates: Vec<(String, &mut Mat<F>, &Mat<F>)> = model
            .params_mut()
            .into_iter()
            .filter_map(|(name, p)| grads.get(&name).map(|g| (name, p, g)))
            .collect();
        opt.step(updates.iter_mut().map(|(n, p, g)| (n.as_str(), &mut **p, *g)));
    }
    Ok(losses)
}
