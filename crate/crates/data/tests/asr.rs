use std::path::Path;

use aulm_core::template::Language;
use aulm_data::asr::{ingest_asr, join_han, write_asr_manifest, CorpusFormat};
use aulm_data::DataError;

fn wav(path: &Path, n: usize) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 16000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    for i in 0..n {
        w.write_sample(((i as f32 * 0.05).sin() * 8000.0) as i16).unwrap();
    }
    w.finalize().unwrap();
}

fn write(path: &Path, text: &str) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, text).unwrap();
}

#[test]
fn librispeech_layout_is_english() {
    let d = tempfile::tempdir().unwrap();
    let ch = d.path().join("19/198");
    write(
        &ch.join("19-198.trans.txt"),
        "19-198-0000 NORTHANGER ABBEY\n19-198-0001 THIS LITTLE WORK\n19-198-0002 MISSING AUDIO\n",
    );
    wav(&ch.join("19-198-0000.wav"), 1600);
    wav(&ch.join("19-198-0001.wav"), 800);
    let r = ingest_asr(d.path(), CorpusFormat::LibriSpeech).unwrap();
    assert_eq!(r.records.len(), 2);
    assert!(r.records.iter().all(|x| x.language == Language::En && x.source_corpus == "librispeech"));
    assert_eq!(r.records[1].transcript, "THIS LITTLE WORK");
    assert_eq!(r.skipped.len(), 1);
    assert_eq!(r.skipped[0].utterance, "19-198-0002");

    write(&ch.join("19-198.trans.txt"), "19-198-0000 OK\nBROKEN\n");
    match ingest_asr(d.path(), CorpusFormat::LibriSpeech) {
        Err(DataError::Malformed { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn aishell_layout_is_chinese() {
    let d = tempfile::tempdir().unwrap();
    write(
        &d.path().join("transcript/aishell_transcript_v0.8.txt"),
        "BAC009S0002W0122 而 对 楼市 成交 抑制 作用 最 大 的 限 购\nBAC009S0002W0123 也 成为 地方 政府 的 眼中 钉\n",
    );
    wav(&d.path().join("wav/train/S0002/BAC009S0002W0122.wav"), 1000);
    std::fs::create_dir_all(d.path().join("wav/train/S0002")).unwrap();
    std::fs::write(d.path().join("wav/train/S0002/BAC009S0002W0123.wav"), b"not audio").unwrap();
    let r = ingest_asr(d.path(), CorpusFormat::Aishell).unwrap();
    assert_eq!(r.records.len(), 1);
    assert_eq!(r.records[0].transcript, "而对楼市成交抑制作用最大的限购");
    assert_eq!(r.records[0].language, Language::Zh);
    assert!(r.skipped[0].reason.starts_with("unreadable audio"));
}

#[test]
fn magicdata_and_primewords_layouts() {
    let d = tempfile::tempdir().unwrap();
    write(
        &d.path().join("train/TRANS.txt"),
        "UtteranceID\tSpeakerID\tTranscription\n16_4013_20170819121429.wav\t16_4013\t今天 天气 很好\n",
    );
    wav(&d.path().join("train/16_4013/16_4013_20170819121429.wav"), 900);
    let r = ingest_asr(d.path(), CorpusFormat::MagicData).unwrap();
    assert_eq!(r.records.len(), 1);
    assert_eq!(r.records[0].transcript, "今天天气很好");

    let p = tempfile::tempdir().unwrap();
    write(
        &p.path().join("set1_transcript.json"),
        r#"[{"file": "0a1b.wav", "text": "你好 世界", "user_id": "1"}, {"file": "ffff.wav", "text": "没有 音频"}]"#,
    );
    wav(&p.path().join("audio_files/0/0a/0a1b.wav"), 700);
    let r = ingest_asr(p.path(), CorpusFormat::Primewords).unwrap();
    assert_eq!(r.records.len(), 1);
    assert_eq!(r.records[0].transcript, "你好世界");
    assert_eq!(r.skipped.len(), 1);
}

#[test]
fn jsonl_manifest_round_trip() {
    let d = tempfile::tempdir().unwrap();
    wav(&d.path().join("a/x.wav"), 500);
    write(
        &d.path().join("asr.jsonl"),
        "{\"audio_path\": \"a/x.wav\", \"transcript\": \"hello\", \"language\": \"en\", \"source_corpus\": \"toy\"}\n\
         {\"audio_path\": \"a/y.wav\", \"transcript\": \"gone\", \"language\": \"en\"}\n\
         {\"audio_path\": \"a/x.wav\", \"transcript\": \"  \", \"language\": \"zh\"}\n",
    );
    let r = ingest_asr(&d.path().join("asr.jsonl"), CorpusFormat::Jsonl).unwrap();
    assert_eq!(r.records.len(), 1);
    assert_eq!(r.records[0].source_corpus, "toy");
    assert_eq!(r.skipped.len(), 2);

    let out = d.path().join("copy.jsonl");
    write_asr_manifest(&r.records, &out).unwrap();
    assert!(std::fs::read_to_string(&out).unwrap().contains("\"audio_path\":\"a/x.wav\""));
    let again = ingest_asr(&out, CorpusFormat::Jsonl).unwrap();
    assert_eq!(again.records, r.records);

    write(
        &d.path().join("bad.jsonl"),
        "{\"audio_path\": \"a/x.wav\", \"transcript\": \"x\", \"language\": \"fr\"}\n",
    );
    assert!(matches!(
        ingest_asr(&d.path().join("bad.jsonl"), CorpusFormat::Jsonl),
        Err(DataError::Malformed { line: 1, .. })
    ));
}

#[test]
fn missing_corpus_and_unknown_format() {
    assert!(matches!(
        ingest_asr(Path::new("/no/such/corpus"), CorpusFormat::Aishell),
        Err(DataError::Io { .. })
    ));
    assert!("timit".parse::<CorpusFormat>().is_err());
    assert_eq!("LibriSpeech".parse::<CorpusFormat>().unwrap(), CorpusFormat::LibriSpeech);
    assert_eq!(join_han("hello 世界 ok"), "hello世界ok");
    assert_eq!(join_han("two  words"), "two words");
}
