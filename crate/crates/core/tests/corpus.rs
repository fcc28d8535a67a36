use unidu_core::corpus::{
    compute_corpus_stats, generate_synthetic_corpus, load_corpus, split_by_id_hash, Annotations, OntologySize,
};
use unidu_core::strategies::{compute_task_features, features_from_json, features_to_json, FEATURE_DIM};
use unidu_core::unify::{serialize_corpus, SerializeMode};
use unidu_core::{Corpus, Error, FormatVariant, Split, Task};

#[test]
fn corpora_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    for task in Task::ALL {
        let c = generate_synthetic_corpus(3, task, 4, OntologySize::default()).unwrap();
        let path = dir.path().join(format!("{task}.json"));
        c.write(&path).unwrap();
        assert_eq!(load_corpus(&path, Some(task)).unwrap(), c);
        let other = Task::ALL.into_iter().find(|t| *t != task).unwrap();
        assert!(matches!(load_corpus(&path, Some(other)), Err(Error::TaskMismatch { .. })));
    }
}

#[test]
fn synthetic_generation_is_seeded() {
    let a = generate_synthetic_corpus(9, Task::DST, 5, OntologySize::default()).unwrap();
    let b = generate_synthetic_corpus(9, Task::DST, 5, OntologySize::default()).unwrap();
    let c = generate_synthetic_corpus(10, Task::DST, 5, OntologySize::default()).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_ne!(a.to_json(), c.to_json());
    assert!(generate_synthetic_corpus(9, Task::DST, 0, OntologySize::default()).is_err());
}

fn mutate(c: &Corpus, f: impl Fn(&mut serde_json::Value)) -> String {
    let mut v: serde_json::Value = serde_json::from_str(&c.to_json()).unwrap();
    f(&mut v);
    v.to_string()
}

#[test]
fn broken_corpora_are_rejected() {
    let sf = generate_synthetic_corpus(2, Task::SF, 3, OntologySize::default()).unwrap();
    let bad_turn = mutate(&sf, |v| {
        v["dialogues"][0]["annotations"]["slots"][0]["turn"] = 99.into();
    });
    assert!(Corpus::from_json(&bad_turn, None).is_err());
    let bad_slot = mutate(&sf, |v| {
        v["dialogues"][0]["annotations"]["slots"][0]["slot"] = "nonexistent".into();
    });
    assert!(matches!(
        Corpus::from_json(&bad_slot, None),
        Err(Error::OntologyReference { .. })
    ));
    let dup = mutate(&sf, |v| {
        let first = v["dialogues"][0].clone();
        v["dialogues"].as_array_mut().unwrap().push(first);
    });
    assert!(Corpus::from_json(&dup, None).is_err());
    let empty_text = mutate(&sf, |v| {
        v["dialogues"][0]["turns"][0]["text"] = "  ".into();
    });
    assert!(Corpus::from_json(&empty_text, None).is_err());
    assert!(Corpus::from_json("{", None).is_err());
}

#[test]
fn id_hash_split_partitions_every_dialogue() {
    let c = generate_synthetic_corpus(4, Task::DS, 200, OntologySize::default()).unwrap();
    let (tr, dv, te) = split_by_id_hash(&c);
    assert_eq!(tr.dialogues.len() + dv.dialogues.len() + te.dialogues.len(), 200);
    assert_eq!((tr.split, dv.split, te.split), (Split::TRAIN, Split::DEV, Split::TEST));
    assert!(tr.dialogues.len() > 120 && dv.dialogues.len() > 5 && te.dialogues.len() > 5);
    assert_eq!(split_by_id_hash(&c).1, dv);
}

#[test]
fn dialogue_summary_stats_match_a_direct_count() {
    let c = generate_synthetic_corpus(6, Task::DS, 12, OntologySize::default()).unwrap();
    let records = serialize_corpus(&c, FormatVariant::QA, SerializeMode::Eval).unwrap();
    let s = compute_corpus_stats(&c, &records).unwrap();
    let n = c.dialogues.len() as f64;
    // Every turn renders as "SPEAKER : text".
    let tokens: usize = c
        .dialogues
        .iter()
        .flat_map(|d| &d.turns)
        .map(|t| 2 + t.text.split_whitespace().count())
        .sum();
    let turns: usize = c.dialogues.iter().map(|d| d.turns.len()).sum();
    let out: usize = c
        .dialogues
        .iter()
        .map(|d| match &d.annotations {
            Annotations::DS { summary } => summary.split_whitespace().count(),
            _ => unreachable!(),
        })
        .sum();
    assert_eq!(s.sample_count, c.dialogues.len());
    assert!((s.avg_input_tokens - tokens as f64 / n).abs() < 1e-12);
    assert!((s.avg_input_turns - turns as f64 / n).abs() < 1e-12);
    assert!((s.avg_output_tokens - out as f64 / n).abs() < 1e-12);
    assert!(s.unigram_ppl_input > 1.0 && s.unigram_ppl_output > 1.0);
}

#[test]
fn add_one_unigram_perplexity() {
    let c = generate_synthetic_corpus(1, Task::DS, 1, OntologySize::default()).unwrap();
    let mut records = serialize_corpus(&c, FormatVariant::QA, SerializeMode::Eval).unwrap();
    records[0].target_text = "[DS] a a b".into();
    let s = compute_corpus_stats(&c, &records).unwrap();
    // counts a:2 b:1, N = 3, V = 2: exp(-(2 ln(3/5) + ln(2/5)) / 3)
    let want = (-(2.0 * (3.0f64 / 5.0).ln() + (2.0f64 / 5.0).ln()) / 3.0).exp();
    assert!((s.unigram_ppl_output - want).abs() < 1e-12);
}

#[test]
fn task_features_are_z_scored() {
    let stats: Vec<_> = Task::ALL
        .iter()
        .map(|&t| {
            let c = generate_synthetic_corpus(2, t, 6, OntologySize::default()).unwrap();
            let rs = serialize_corpus(&c, FormatVariant::QA, SerializeMode::Train { seed: 2 }).unwrap();
            compute_corpus_stats(&c, &rs).unwrap()
        })
        .collect();
    let feats = compute_task_features(&stats).unwrap();
    for k in 0..FEATURE_DIM {
        let col: Vec<f64> = feats.iter().map(|f| f.normalized[k]).collect();
        let mean = col.iter().sum::<f64>() / 5.0;
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-9, "dimension {k} mean {mean}");
        assert!(var.abs() < 1e-9 || (var - 1.0).abs() < 1e-9, "dimension {k} variance {var}");
    }
    assert_eq!(feats[0].raw[FEATURE_DIM - 1], stats[0].sample_count as f64);
    let back = features_from_json(&features_to_json(&Task::ALL, &feats)).unwrap();
    assert_eq!(back.len(), 5);
    for (t, f) in back {
        let i = Task::ALL.iter().position(|x| *x == t).unwrap();
        assert_eq!(f, feats[i]);
    }
    assert!(compute_task_features(&stats[..1]).is_err());
}
