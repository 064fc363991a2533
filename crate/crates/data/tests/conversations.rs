use std::path::Path;

use aulm_core::template::Language;
use aulm_data::conversation::{load_conversations, sanitize_id, Conversation, Role, Source, Turn};
use aulm_data::DataError;

fn fixture() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/mini_corpus"))
}

#[test]
fn mini_corpus_loads_all_ten() {
    let r = load_conversations(fixture()).unwrap();
    assert!(r.malformed.is_empty(), "{:?}", r.malformed);
    let ids: Vec<_> = r.conversations.iter().map(|c| c.id.as_str()).collect();
    assert_eq!(
        ids,
        [
            "g4-1",
            "g4-2",
            "g4-3",
            "sg-1",
            "sg-2",
            "sg-3",
            "sg-4",
            "wizardlm_mini-0",
            "wizardlm_mini-1",
            "wizardlm_mini-2"
        ]
    );
    let by_id = |id: &str| r.conversations.iter().find(|c| c.id == id).unwrap();
    let sg1 = by_id("sg-1");
    assert_eq!(sg1.source, Source::ShareGpt);
    assert_eq!(sg1.num_rounds(), 3, "system turn is skipped");
    assert_eq!(by_id("sg-4").language, Language::Zh);
    assert_eq!(by_id("g4-3").language, Language::Zh);
    assert_eq!(by_id("g4-1").source, Source::Gpt4Llm);
    assert_eq!(by_id("wizardlm_mini-2").source, Source::WizardLm);
    assert_eq!(by_id("wizardlm_mini-2").language, Language::En);
}

#[test]
fn invalid_records_are_reported_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("sharegpt_bad.jsonl");
    std::fs::write(
        &p,
        [
            r#"{"id": "a b/c", "conversations": [{"from": "human", "value": "hi"}, {"from": "gpt", "value": "hello"}, {"from": "human", "value": "dangling"}]}"#,
            r#"{"id": "a b/c", "conversations": [{"from": "gpt", "value": "I speak first"}, {"from": "human", "value": "odd"}]}"#,
            r#"{"id": "x", "conversations": [{"from": "robot", "value": "?"}]}"#,
            r#"{"id": "y", "conversations": [{"from": "human", "value": "only a question"}]}"#,
            r#"{"id": "z", "weird": true}"#,
            r#"{"id": "w", "source": "wizardlm", "turns": [{"role": "user", "text": "q"}, {"role": "assistant", "text": "a"}]}"#,
        ]
        .join("\n"),
    )
    .unwrap();
    let r = load_conversations(&p).unwrap();
    let ids: Vec<_> = r.conversations.iter().map(|c| c.id.as_str()).collect();
    assert_eq!(ids, ["a_b_c", "w"]);
    assert_eq!(r.conversations[0].num_rounds(), 1, "trailing question dropped");
    assert_eq!(r.conversations[1].source, Source::WizardLm);
    let bad: Vec<_> = r.malformed.iter().map(|m| m.id.as_str()).collect();
    assert_eq!(bad, ["a_b_c-2", "x", "y", "z"]);

    std::fs::write(&p, "{\"id\": 1}\nnot json\n").unwrap();
    match load_conversations(&p) {
        Err(DataError::Malformed { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
    assert!(matches!(load_conversations(&dir.path().join("missing")), Err(DataError::Io { .. })));
}

#[test]
fn conversation_invariants() {
    let t = |role, text: &str| Turn { role, text: text.into() };
    assert!(Conversation::new("a", Source::Other, vec![]).is_err());
    assert!(Conversation::new("a", Source::Other, vec![t(Role::Human, "q")]).is_err());
    assert!(
        Conversation::new("a", Source::Other, vec![t(Role::Assistant, "a"), t(Role::Human, "q")]).is_err()
    );
    assert!(Conversation::new("a", Source::Other, vec![t(Role::Human, "q"), t(Role::Human, "q2")]).is_err());
    let ok =
        Conversation::new("a", Source::Other, vec![t(Role::Human, "q"), t(Role::Assistant, "a")]).unwrap();
    assert_eq!(ok.rounds().collect::<Vec<_>>(), [("q", "a")]);
}

#[test]
fn ids_and_sources() {
    assert_eq!(sanitize_id("conv 12/α"), "conv_12");
    assert_eq!(sanitize_id("///"), "conv");
    assert_eq!(Source::from_file_name("ShareGPT_V3_unfiltered"), Source::ShareGpt);
    assert_eq!(Source::from_file_name("WizardLM_evol_instruct_70k"), Source::WizardLm);
    assert_eq!(Source::from_file_name("alpaca_gpt4_data_zh"), Source::Gpt4Llm);
    assert_eq!(Source::from_file_name("misc"), Source::Other);
    assert_eq!("GPT4-LLM".parse::<Source>().unwrap(), Source::Gpt4Llm);
}
