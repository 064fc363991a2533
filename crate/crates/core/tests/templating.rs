use aulm_core::template::{
    validate_sample, Language, Placement, Round, SampleKind, Templater, ViolationKind,
};
use aulm_core::tokens::{
    default_template_config, extend_vocabulary, SpecialTokenTable, TemplateConfig, TokenId, Tokenizer,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn char_tok(cfg: &TemplateConfig) -> (Tokenizer, SpecialTokenTable) {
    let corpus: Vec<&str> =
        cfg.instruction_bank_zh.iter().map(String::as_str).chain([cfg.system_prompt.as_str()]).collect();
    extend_vocabulary(&Tokenizer::char_level(corpus)).unwrap()
}

/// Piece of a hand-written layout: literal text (one id per char), a special
/// id, or a run of patches.
enum P<'a> {
    T(&'a str),
    Id(TokenId),
    Patches(usize),
}

fn layout(tok: &Tokenizer, t: &SpecialTokenTable, parts: &[(P, u8)]) -> (Vec<TokenId>, Vec<u8>) {
    let mut ids = Vec::new();
    let mut mask = Vec::new();
    for (p, m) in parts {
        let before = ids.len();
        match p {
            P::T(s) => ids.extend(s.chars().map(|c| tok.token_to_id(&c.to_string()).unwrap())),
            P::Id(id) => ids.push(*id),
            P::Patches(n) => ids.extend(std::iter::repeat_n(t.audio_patch, *n)),
        }
        mask.extend(std::iter::repeat_n(*m, ids.len() - before));
    }
    (ids, mask)
}

fn small_config() -> TemplateConfig {
    TemplateConfig {
        system_prompt: "Be brief.".into(),
        instruction_bank_en: vec!["Transcribe.".into()],
        ..default_template_config()
    }
}

#[test]
fn pretrain_golden_instruction_first() {
    let cfg = small_config();
    let (tok, t) = char_tok(&cfg);
    let tp = Templater::new(&tok, &cfg).unwrap();
    let s = tp.build_pretrain_sample_with("a0", "ab", "Transcribe.", Placement::InstructionFirst).unwrap();
    let (ids, mask) = layout(
        &tok,
        &t,
        &[
            (P::Id(t.bos), 0),
            (P::T("[INST] <<SYS>>\nBe brief.\n<</SYS>>\n\n"), 0),
            (P::T("Transcribe.\n"), 0),
            (P::Id(t.audio_start), 0),
            (P::Patches(64), 0),
            (P::Id(t.audio_end), 0),
            (P::T(" [/INST] "), 0),
            (P::T("ab"), 1),
            (P::Id(t.eos), 1),
        ],
    );
    assert_eq!(s.tokens, ids);
    assert_eq!(s.loss_mask, mask);
    assert_eq!(s.loss_mask.iter().filter(|&&m| m == 1).count(), 3);
    let start = 1 + 35 + 12;
    assert_eq!(s.audio_slots.len(), 1);
    assert_eq!(s.audio_slots[0].start_index, start);
    assert_eq!(s.audio_slots[0].patch_range, start + 1..start + 65);
    assert_eq!(s.kind, SampleKind::Pretrain);
}

#[test]
fn pretrain_golden_audio_first() {
    let cfg = small_config();
    let (tok, t) = char_tok(&cfg);
    let tp = Templater::new(&tok, &cfg).unwrap();
    let s = tp.build_pretrain_sample_with("a0", "ab", "Transcribe.", Placement::AudioFirst).unwrap();
    let (ids, mask) = layout(
        &tok,
        &t,
        &[
            (P::Id(t.bos), 0),
            (P::T("[INST] <<SYS>>\nBe brief.\n<</SYS>>\n\n"), 0),
            (P::Id(t.audio_start), 0),
            (P::Patches(64), 0),
            (P::Id(t.audio_end), 0),
            (P::T("\nTranscribe."), 0),
            (P::T(" [/INST] "), 0),
            (P::T("ab"), 1),
            (P::Id(t.eos), 1),
        ],
    );
    assert_eq!(s.tokens, ids);
    assert_eq!(s.loss_mask, mask);
}

#[test]
fn instruct_golden_two_rounds() {
    let cfg = small_config();
    let (tok, t) = char_tok(&cfg);
    let tp = Templater::new(&tok, &cfg).unwrap();
    let s = tp.build_instruct_sample(&[Round::new("u0", "ok"), Round::new("u1", "no")]).unwrap();
    let (ids, mask) = layout(
        &tok,
        &t,
        &[
            (P::Id(t.bos), 0),
            (P::T("[INST] <<SYS>>\nBe brief.\n<</SYS>>\n\n"), 0),
            (P::Id(t.audio_start), 0),
            (P::Patches(64), 0),
            (P::Id(t.audio_end), 0),
            (P::T(" [/INST] "), 0),
            (P::T("ok"), 1),
            (P::Id(t.eos), 1),
            (P::T("[INST] "), 0),
            (P::Id(t.audio_start), 0),
            (P::Patches(64), 0),
            (P::Id(t.audio_end), 0),
            (P::T(" [/INST] "), 0),
            (P::T("no"), 1),
            (P::Id(t.eos), 1),
        ],
    );
    assert_eq!(s.tokens, ids);
    assert_eq!(s.loss_mask, mask);
    let loss: Vec<String> =
        s.loss_positions().map(|i| tok.id_to_token(s.tokens[i]).unwrap().to_string()).collect();
    assert_eq!(loss, ["o", "k", "</s>", "n", "o", "</s>"]);
    assert_eq!(s.audio_slots.len(), 2);
    assert_eq!(s.audio_slots[0].audio_ref, "u0");
    assert_eq!(s.audio_slots[1].audio_ref, "u1");
    assert_eq!(s.kind, SampleKind::Instruct);
}

#[test]
fn single_round_matches_pretrain_minus_instruction() {
    let cfg = small_config();
    let (tok, t) = char_tok(&cfg);
    let tp = Templater::new(&tok, &cfg).unwrap();
    let inst = tp.build_instruct_sample(&[Round::new("a", "hi")]).unwrap();
    let pre = tp.build_pretrain_sample_with("a", "hi", "Transcribe.", Placement::AudioFirst).unwrap();
    let drop: Vec<TokenId> = tok.encode("\nTranscribe.");
    let end = pre.audio_slots[0].end_index() + 1;
    let mut stripped = pre.tokens.clone();
    stripped.splice(end..end + drop.len(), []);
    assert_eq!(inst.tokens, stripped);
    assert_eq!(inst.tokens.iter().filter(|&&x| x == t.eos).count(), 1);
}

#[test]
fn default_config_golden_decodes_to_expected_text() {
    let cfg = default_template_config();
    let (tok, _) = char_tok(&cfg);
    let tp = Templater::new(&tok, &cfg).unwrap();
    let instr = cfg.instruction_bank_en[2].clone();
    let s = tp.build_pretrain_sample_with("a", "hello world", &instr, Placement::InstructionFirst).unwrap();
    let expected = format!(
        "<s>[INST] <<SYS>>\n{}\n<</SYS>>\n\n{instr}\n<au_start>{}<au_end> [/INST] hello world</s>",
        cfg.system_prompt,
        "<au_patch>".repeat(64)
    );
    assert_eq!(tok.decode(&s.tokens), expected);
    let collapsed = expected.chars().count() - 2 - 3 - 9 - 7 - 9 * 64;
    assert_eq!(s.tokens.len(), collapsed);
}

#[test]
fn chinese_bank_is_used_for_zh() {
    let cfg = default_template_config();
    let (tok, _) = char_tok(&cfg);
    let tp = Templater::new(&tok, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = tp.build_pretrain_sample("a", "你好", Language::Zh, &mut rng).unwrap();
    let text = tok.decode(&s.tokens);
    assert!(cfg.instruction_bank_zh.iter().any(|i| text.contains(i.as_str())));
    assert!(!cfg.instruction_bank_en.iter().any(|i| text.contains(i.as_str())));
    assert!("fr".parse::<Language>().is_err());
}

#[test]
fn placement_only_permutes_user_content() {
    let cfg = default_template_config();
    let (tok, _) = char_tok(&cfg);
    let tp = Templater::new(&tok, &cfg).unwrap();
    let mut seen = [false; 2];
    for seed in 0..64 {
        let s = tp
            .build_pretrain_sample("a", "label", Language::En, &mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap();
        let after = s.tokens[s.audio_slots[0].end_index() + 1];
        let instr_first = after != tok.token_to_id("\n").unwrap();
        seen[instr_first as usize] = true;
        let instr =
            cfg.instruction_bank_en.iter().find(|i| tok.decode(&s.tokens).contains(i.as_str())).unwrap();
        let placement = if instr_first { Placement::InstructionFirst } else { Placement::AudioFirst };
        let other = match placement {
            Placement::InstructionFirst => Placement::AudioFirst,
            Placement::AudioFirst => Placement::InstructionFirst,
        };
        let same = tp.build_pretrain_sample_with("a", "label", instr, placement).unwrap();
        assert_eq!(s, same);
        let flipped = tp.build_pretrain_sample_with("a", "label", instr, other).unwrap();
        let mut a = s.tokens.clone();
        let mut b = flipped.tokens.clone();
        assert_ne!(a, b);
        let prefix = s.audio_slots[0].start_index.min(flipped.audio_slots[0].start_index);
        let tail = s.targets[0].start - 9;
        assert_eq!(a[..prefix], b[..prefix]);
        assert_eq!(a[tail..], b[tail..]);
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }
    assert_eq!(seen, [true, true], "both placements occur");
}

#[test]
fn validator_flags_planted_defects() {
    let cfg = small_config();
    let (tok, t) = char_tok(&cfg);
    let tp = Templater::new(&tok, &cfg).unwrap();
    let good = tp.build_pretrain_sample_with("a", "ab", "Transcribe.", Placement::AudioFirst).unwrap();
    assert!(tp.validate_sample(&good).is_empty());

    let mut s = good.clone();
    let p = s.audio_slots[0].patch_range.start + 5;
    s.loss_mask[p] = 1;
    let v = tp.validate_sample(&s);
    assert_eq!(v.len(), 1, "{v:?}");
    assert_eq!(v[0].kind, ViolationKind::LossOnAudio);
    assert_eq!(v[0].index, Some(p));
    assert!(v[0].to_string().contains("loss-on-audio"));

    let mut s = good.clone();
    let slot = s.audio_slots[0].clone();
    s.tokens.remove(slot.patch_range.start);
    s.loss_mask.remove(slot.patch_range.start);
    s.audio_slots[0].patch_range = slot.patch_range.start..slot.patch_range.end - 1;
    for r in &mut s.targets {
        *r = r.start - 1..r.end - 1;
    }
    let v = tp.validate_sample(&s);
    assert_eq!(v.len(), 1, "{v:?}");
    assert_eq!(v[0].kind, ViolationKind::PatchCount);

    let mut s = good.clone();
    s.loss_mask[3] = 1;
    assert_eq!(tp.validate_sample(&s)[0].kind, ViolationKind::LossOnPrompt);

    let mut s = good.clone();
    let last = s.tokens.len() - 1;
    s.loss_mask[last] = 0;
    assert_eq!(tp.validate_sample(&s)[0].kind, ViolationKind::MissingLoss);

    let mut s = good.clone();
    s.tokens[0] = t.eos;
    assert_eq!(tp.validate_sample(&s)[0].kind, ViolationKind::MissingBos);

    let mut s = good;
    s.loss_mask.pop();
    assert_eq!(validate_sample(&s, &t, &cfg)[0].kind, ViolationKind::LengthMismatch);
}

#[test]
fn builder_errors() {
    let cfg = small_config();
    let (tok, _) = char_tok(&cfg);
    let tp = Templater::new(&tok, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(tp.build_pretrain_sample("a", "  ", Language::En, &mut rng).is_err());
    assert!(tp.build_instruct_sample(&[]).is_err());
    assert!(tp.build_instruct_sample(&[Round::new("a", "\n")]).is_err());
    let short = TemplateConfig { max_seq_len: 50, ..small_config() };
    let tp = Templater::new(&tok, &short).unwrap();
    assert!(matches!(
        tp.build_instruct_sample(&[Round::new("a", "hi")]),
        Err(aulm_core::error::TemplateError::TooLong { .. })
    ));
}

#[test]
fn instruct_prompt_ends_after_e_inst() {
    let cfg = small_config();
    let (tok, t) = char_tok(&cfg);
    let tp = Templater::new(&tok, &cfg).unwrap();
    let full = tp.build_instruct_sample(&[Round::new("u0", "ok"), Round::new("u1", "no")]).unwrap();
    let prompt = tp.build_instruct_prompt(&[Round::new("u0", "ok")], "u1").unwrap();
    let cut = full.targets[1].start;
    assert_eq!(prompt.tokens, full.tokens[..cut]);
    assert_eq!(prompt.audio_slots, full.audio_slots);
    assert!(prompt.tokens.ends_with(&tok.encode(" [/INST] ")));
    assert_eq!(prompt.tokens.iter().filter(|&&x| x == t.bos).count(), 1);
}

fn label_strategy() -> impl Strategy<Value = String> {
    "[a-z][a-z ]{0,15}".prop_filter("non-blank", |s| !s.trim().is_empty())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn constructor_outputs_always_validate(
        label in label_strategy(),
        responses in prop::collection::vec(label_strategy(), 1..4),
        seed in any::<u64>(),
        zh in any::<bool>(),
    ) {
        let cfg = default_template_config();
        let (tok, t) = char_tok(&cfg);
        let tp = Templater::new(&tok, &cfg).unwrap();
        let lang = if zh { Language::Zh } else { Language::En };
        let s = tp.build_pretrain_sample("a", &label, lang, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(tp.validate_sample(&s).is_empty());
        prop_assert_eq!(s.loss_positions().count(), label.chars().count() + 1);

        let rounds: Vec<Round> = responses.iter().enumerate().map(|(i, r)| Round::new(format!("u{i}"), r.clone())).collect();
        let s = tp.build_instruct_sample(&rounds).unwrap();
        prop_assert!(tp.validate_sample(&s).is_empty());
        prop_assert_eq!(s.audio_slots.len(), rounds.len());
        prop_assert_eq!(s.tokens.iter().filter(|&&x| x == t.eos).count(), rounds.len());
        prop_assert_eq!(
            s.tokens.iter().filter(|&&x| x == t.audio_patch).count(),
            rounds.len() * cfg.audio_token_len
        );
        let expected: usize = responses.iter().map(|r| r.chars().count() + 1).sum();
        prop_assert_eq!(s.loss_positions().count(), expected);
        for w in s.audio_slots.windows(2) {
            prop_assert!(w[0].end_index() < w[1].start_index);
        }
    }
}
