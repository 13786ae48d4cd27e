mod common;

use common::*;
use ehrtok_core::events::{Dataset, Domain, PatientTimeline};
use ehrtok_core::tokenizer::{tokenize_timeline, EventEncoding, TimeEncoding, TokenizerConfig};
use ehrtok_core::vocab::{build_vocab, load_vocab, save_vocab, Vocabulary};
use ehrtok_core::Error;

#[test]
fn save_load_round_trip() {
    let ds = cohort(11, 30);
    let dir = tempfile::tempdir().unwrap();
    for cfg in TokenizerConfig::factorial() {
        let vocab = build_vocab(&ds, &cfg).unwrap();
        let path = dir.path().join("vocab.json");
        save_vocab(&vocab, &path).unwrap();
        let loaded = load_vocab(&path, Some(cfg.event_encoding)).unwrap();
        assert_eq!(loaded.tokens(), vocab.tokens());
        assert_eq!(loaded.specials(), vocab.specials());
        assert_eq!(loaded.bins(), vocab.bins());
        for tl in ds.timelines() {
            assert_eq!(
                tokenize_timeline(tl, &cfg, &vocab).unwrap(),
                tokenize_timeline(tl, &cfg, &loaded).unwrap()
            );
        }
    }
}

#[test]
fn wrong_mode_is_rejected() {
    let ds = cohort(2, 10);
    let cfg = TokenizerConfig::new(EventEncoding::Joint, TimeEncoding::TimePositions, true);
    let vocab = build_vocab(&ds, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.json");
    save_vocab(&vocab, &path).unwrap();
    assert!(matches!(load_vocab(&path, Some(EventEncoding::Factorized)), Err(Error::ModeMismatch { .. })));

    let fact = TokenizerConfig { event_encoding: EventEncoding::Factorized, ..cfg.clone() };
    let tl = ds.timelines().next().unwrap();
    assert!(matches!(tokenize_timeline(tl, &fact, &vocab), Err(Error::ModeMismatch { .. })));

    let tokens = TokenizerConfig { time_encoding: TimeEncoding::TimeTokens, ..cfg };
    assert!(matches!(tokenize_timeline(tl, &tokens, &vocab), Err(Error::Vocab(_))));
}

#[test]
fn duplicate_tokens_are_rejected() {
    let ds = cohort(3, 5);
    let cfg = TokenizerConfig::new(EventEncoding::Factorized, TimeEncoding::TimePositions, false);
    let vocab = build_vocab(&ds, &cfg).unwrap();
    let mut json: serde_json::Value = serde_json::from_str(&vocab.to_json().unwrap()).unwrap();
    let first = json["tokens"][0].clone();
    json["tokens"].as_array_mut().unwrap().push(first);
    assert!(matches!(Vocabulary::from_json(&json.to_string()), Err(Error::Vocab(_))));
}

#[test]
fn ids_are_dense_and_injective() {
    let ds = cohort(4, 20);
    for cfg in TokenizerConfig::factorial() {
        let v = build_vocab(&ds, &cfg).unwrap();
        let mut seen = std::collections::HashSet::new();
        for id in 0..v.len() as u32 {
            let tok = v.token(id).unwrap();
            assert_eq!(v.id(tok), Some(id));
            assert!(seen.insert(tok.to_string()));
        }
        assert!(v.token(v.len() as u32).is_none());
    }
}

#[test]
fn factorized_vocab_not_larger_than_joint() {
    for seed in 0..5 {
        let ds = cohort(seed, 30);
        for time in [TimeEncoding::TimePositions, TimeEncoding::TimeTokens] {
            for workflow in [false, true] {
                let j = TokenizerConfig::new(EventEncoding::Joint, time, workflow);
                let f = TokenizerConfig { event_encoding: EventEncoding::Factorized, ..j.clone() };
                assert!(build_vocab(&ds, &f).unwrap().len() <= build_vocab(&ds, &j).unwrap().len());
            }
        }
    }
}

#[test]
fn code_only_vocab_sizes_match() {
    let evs = vec![
        event("p", t(0), "A", Domain::Diagnosis, None),
        event("p", t(60), "B", Domain::Observation, None),
        event("p", t(120), "C", Domain::VisitDetail, None),
    ];
    let ds = Dataset::from_timelines([PatientTimeline::new(patient("p"), evs)]).unwrap();
    for time in [TimeEncoding::TimePositions, TimeEncoding::TimeTokens] {
        let j = TokenizerConfig::new(EventEncoding::Joint, time, false);
        let f = TokenizerConfig { event_encoding: EventEncoding::Factorized, ..j.clone() };
        assert_eq!(build_vocab(&ds, &j).unwrap().len(), build_vocab(&ds, &f).unwrap().len());
    }
}

#[test]
fn empty_dataset_rejected() {
    let cfg = TokenizerConfig::new(EventEncoding::Joint, TimeEncoding::TimePositions, false);
    assert!(build_vocab(&Dataset::new(), &cfg).is_err());
}
