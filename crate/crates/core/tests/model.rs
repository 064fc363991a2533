mod common;

use std::collections::BTreeSet;

use aulm_core::adaptor::AdaptedAudioBlock;
use aulm_core::error::ModelError;
use aulm_core::model::{loss, splice, SpeechLm};
use aulm_core::params::ParamGroup;
use aulm_core::template::PromptSample;
use aulm_core::trainer::{batch_loss_and_grads, evaluate, TrainExample};
use aulm_core::{Mat, SpeechLm64};
use aulm_tensor::Graph;
use common::*;
use proptest::prelude::*;

fn model(hidden: Option<usize>) -> SpeechLm64 {
    SpeechLm::new(mini_config(hidden)).unwrap()
}

#[test]
fn forward_shape_and_determinism() {
    let m = model(None);
    let s = mini_sample(&[4, 5], &[&[6, 7, 8]]);
    let w = chirp(0.3, 8000, 200.0);
    let a = m.forward(&s, std::slice::from_ref(&w)).unwrap();
    let b = m.forward(&s, &[w]).unwrap();
    assert_eq!(a.dim(), (s.tokens.len(), VOCAB));
    assert!(a.iter().all(|v| v.is_finite()));
    assert_eq!(a, b);
}

#[test]
fn forward_rejects_slot_count_mismatch() {
    let m = model(None);
    let s = mini_sample(&[4], &[&[6], &[7]]);
    let w = chirp(0.2, 8000, 200.0);
    assert!(matches!(m.forward(&s, &[w]), Err(ModelError::Splice(_))));
}

#[test]
fn perturbing_one_wave_only_moves_later_logits() {
    let m = model(None);
    let s = mini_sample(&[4, 5], &[&[6, 7], &[8, 9], &[10]]);
    let waves = vec![chirp(0.2, 8000, 150.0), chirp(0.3, 8000, 250.0), chirp(0.25, 8000, 350.0)];
    let base = m.forward(&s, &waves).unwrap();
    for k in 0..waves.len() {
        let mut pert = waves.clone();
        pert[k] = chirp(0.35, 8000, 900.0);
        let out = m.forward(&s, &pert).unwrap();
        let start = s.audio_slots[k].start_index;
        for i in 0..s.tokens.len() {
            let same = base.row(i) == out.row(i);
            if i <= start {
                assert!(same, "slot {k}: row {i} before the slot changed");
            }
            if i > start {
                // Patch rows at and after the first patch see the new audio.
                assert!(!same, "slot {k}: row {i} after the slot did not change");
            }
        }
    }
}

#[test]
fn graph_embedding_equals_plain_splice() {
    let m = model(Some(5));
    let s = mini_sample(&[4, 5, 6], &[&[7], &[8, 9]]);
    let waves = vec![chirp(0.2, 8000, 150.0), chirp(0.3, 8000, 450.0)];
    let frames = m.encode_all(&waves).unwrap();
    let blocks = m.adapt_all(&frames).unwrap();
    let plain = splice(&s, &blocks, m.lm().embedding_table()).unwrap();
    let mut g = Graph::new();
    let bind = m.bind(&mut g, &BTreeSet::new());
    let x = m.embed(&mut g, &bind, &s, &frames).unwrap();
    assert_eq!(g.value(x), &plain);
}

#[test]
fn splice_places_blocks_exactly() {
    let s = mini_sample(&[4, 5], &[&[6], &[7, 8]]);
    let table = Mat::from_shape_fn((VOCAB, 3), |(i, j)| (i * 10 + j) as f64 + 0.5);
    let blocks = vec![
        AdaptedAudioBlock::new(Mat::from_elem((PATCHES, 3), 1.0)),
        AdaptedAudioBlock::new(Mat::from_elem((PATCHES, 3), 2.0)),
    ];
    let out = splice(&s, &blocks, &table).unwrap();
    assert_eq!(out.nrows(), s.tokens.len());
    for i in 0..s.tokens.len() {
        let slot = s.audio_slots.iter().position(|sl| sl.patch_range.contains(&i));
        match slot {
            Some(k) => assert!(out.row(i).iter().all(|&v| v == (k + 1) as f64), "index {i}"),
            None => assert_eq!(out.row(i), table.row(s.tokens[i] as usize), "index {i}"),
        }
    }

    let zeros = vec![AdaptedAudioBlock::new(Mat::zeros((PATCHES, 3))); 2];
    let z = splice(&s, &zeros, &table).unwrap();
    for (i, &t) in s.tokens.iter().enumerate() {
        if s.audio_slots.iter().any(|sl| sl.patch_range.contains(&i)) {
            assert!(z.row(i).iter().all(|&v| v == 0.0));
        } else {
            assert_eq!(z.row(i), table.row(t as usize));
        }
    }

    assert!(matches!(splice(&s, &blocks[..1], &table), Err(ModelError::Splice(_))));
    let short = vec![
        AdaptedAudioBlock::new(Mat::zeros((PATCHES - 1, 3))),
        AdaptedAudioBlock::new(Mat::zeros((PATCHES, 3))),
    ];
    assert!(matches!(splice(&s, &short, &table), Err(ModelError::Splice(_))));
}

#[test]
fn loss_reference_values() {
    let s = mini_sample(&[4], &[&[5, 6, 7]]);
    let n = s.tokens.len();
    let uniform = Mat::<f64>::zeros((n, VOCAB));
    let l = loss(&uniform, &s).unwrap();
    assert!((l - (VOCAB as f64).ln()).abs() < 1e-12);

    let mut perfect = Mat::<f64>::zeros((n, VOCAB));
    for i in 0..n - 1 {
        perfect[[i, s.tokens[i + 1] as usize]] = 60.0;
    }
    assert!(loss(&perfect, &s).unwrap() < 1e-20);

    let mut none = s.clone();
    none.loss_mask.iter_mut().for_each(|m| *m = 0);
    assert!(matches!(loss(&uniform, &none), Err(ModelError::InvalidSample(_))));
}

#[test]
fn masked_logit_corruption_is_inert() {
    let m = model(None);
    let s = mini_sample(&[4, 5], &[&[6, 7, 8]]);
    let logits = m.forward(&s, &[chirp(0.2, 8000, 300.0)]).unwrap();
    let before = loss(&logits, &s).unwrap();
    let mut bad = logits.clone();
    for i in 0..s.tokens.len() {
        let counts = i + 1 < s.tokens.len() && s.loss_mask[i + 1] == 1;
        if !counts {
            bad.row_mut(i).iter_mut().enumerate().for_each(|(j, v)| *v = 1e6 * (j as f64 - 7.0));
        }
    }
    assert_eq!(loss(&bad, &s).unwrap().to_bits(), before.to_bits());
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-8 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn nudge(m: &mut SpeechLm64, name: &str, at: (usize, usize), delta: f64) {
    for (n, p) in m.params_mut() {
        if n == name {
            p[at] += delta;
        }
    }
}

fn check_adaptor_gradients(hidden: Option<usize>) {
    let mut m = model(hidden);
    let s = mini_sample(&[4, 5], &[&[6, 7], &[8]]);
    let waves = vec![chirp(0.2, 8000, 150.0), chirp(0.15, 8000, 500.0)];
    let ex = TrainExample::encode(&m, s, &waves).unwrap();
    let trainable: BTreeSet<_> = [ParamGroup::Adaptor].into();
    let (_, grads) = batch_loss_and_grads(&m, &[&ex], &trainable).unwrap();
    let names: Vec<String> = m.group_params(ParamGroup::Adaptor).into_iter().map(|(n, _)| n).collect();
    assert_eq!(grads.len(), names.len());
    let h = 1e-5;
    let data = [ex];
    let mut worst: f64 = 0.0;
    for name in &names {
        let analytic = grads[name].clone();
        for idx in 0..analytic.len() {
            let (r, c) = (idx / analytic.ncols(), idx % analytic.ncols());
            nudge(&mut m, name, (r, c), h);
            let up = evaluate(&m, &data).unwrap();
            nudge(&mut m, name, (r, c), -2.0 * h);
            let down = evaluate(&m, &data).unwrap();
            nudge(&mut m, name, (r, c), h);
            let numeric = (up - down) / (2.0 * h);
            let e = rel_err(analytic[[r, c]], numeric);
            assert!(e < 1e-4, "{name}[{r},{c}]: analytic {} numeric {numeric} rel {e}", analytic[[r, c]]);
            worst = worst.max(e);
        }
    }
    assert!(worst < 1e-4);
}

#[test]
fn adaptor_gradients_match_finite_differences() {
    check_adaptor_gradients(None);
}

#[test]
fn adaptor_gradients_match_finite_differences_with_hidden_layer() {
    check_adaptor_gradients(Some(3));
}

#[test]
fn generate_edge_cases() {
    let m = model(None);
    let s = mini_sample(&[4, 5], &[&[6]]);
    let cut = s.targets[0].start;
    let prompt = PromptSample { tokens: s.tokens[..cut].to_vec(), audio_slots: s.audio_slots.clone() };
    let w = vec![chirp(0.2, 8000, 300.0)];
    assert!(m.generate(&prompt, &w, 0, 2).unwrap().is_empty());

    let logits = m.forward(&prompt, &w).unwrap();
    let last = logits.row(logits.nrows() - 1);
    let argmax = (0..VOCAB).max_by(|&a, &b| last[a].total_cmp(&last[b])).unwrap() as u32;
    assert!(m.generate(&prompt, &w, 5, argmax).unwrap().is_empty());
    let out = m.generate(&prompt, &w, 5, 999).unwrap();
    assert_eq!(out.len(), 5);
    assert_eq!(out[0], argmax);
}

#[test]
fn context_overflow_is_reported() {
    let m = model(None);
    let long: Vec<u32> = (0..70).map(|i| 4 + (i % 20)).collect();
    let s = mini_sample(&long, &[&[6]]);
    assert!(matches!(m.forward(&s, &[chirp(0.2, 8000, 300.0)]), Err(ModelError::Context { .. })));
}

#[test]
fn embedding_rows_match_vocabulary() {
    let m = model(None);
    assert_eq!(m.lm().embedding_table().nrows(), VOCAB);
    let s = mini_sample(&[40], &[&[6]]);
    assert!(matches!(m.forward(&s, &[chirp(0.2, 8000, 300.0)]), Err(ModelError::InvalidSample(_))));
}

#[test]
fn seeds_are_reproducible() {
    let a = model(None).snapshot();
    let b = model(None).snapshot();
    assert_eq!(a, b);
    let mut cfg = mini_config(None);
    cfg.seed += 1;
    let c = SpeechLm64::new(cfg).unwrap().snapshot();
    assert_ne!(a, c);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn adapted_block_length_is_fixed(samples in 1usize..16000) {
        let m = model(None);
        let w = aulm_core::audio::AudioWave::new(
            (0..samples).map(|i| ((i as f32) * 0.37).sin() * 0.3).collect(),
            8000,
        ).unwrap();
        let frames = m.encode(&w).unwrap();
        prop_assert_eq!(frames.num_frames(), samples.div_ceil(32));
        let block = m.adaptor().adapt(&frames).unwrap();
        prop_assert_eq!(block.values().dim(), (PATCHES, 8));
    }
}
