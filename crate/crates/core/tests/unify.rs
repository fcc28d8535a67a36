use proptest::prelude::*;
use unidu_core::corpus::{generate_synthetic_corpus, OntologySize};
use unidu_core::unify::{
    balance_negatives, parse_output, read_records, serialize_corpus, write_records, Polarity, SerializeMode,
};
use unidu_core::{FormatVariant, Task};

fn count(records: &[unidu_core::UnifiedRecord], p: Polarity) -> usize {
    records.iter().filter(|r| r.polarity == p).count()
}

#[test]
fn prefix_variant_moves_query_into_target() {
    for task in Task::ALL {
        let c = generate_synthetic_corpus(5, task, 3, OntologySize::default()).unwrap();
        let qa = serialize_corpus(&c, FormatVariant::QA, SerializeMode::Eval).unwrap();
        let px = serialize_corpus(&c, FormatVariant::PREFIX, SerializeMode::Eval).unwrap();
        assert_eq!(qa.len(), px.len(), "{task}");
        for (a, b) in qa.iter().zip(&px) {
            let tag = task.tag();
            assert_eq!(a.input_text, format!("{tag} {} [C] {}", a.content(), a.query));
            assert_eq!(b.input_text, format!("{tag} {}", a.content()));
            assert_eq!(b.target_text, format!("{tag} {} {}", a.query, a.answer()));
            assert_eq!(b.decoder_prefix(), format!("{tag} {}", a.query));
            assert_eq!(a.answer(), b.answer());
            assert_eq!(a.content(), b.content());
        }
    }
}

#[test]
fn every_target_parses_back() {
    for task in Task::ALL {
        let c = generate_synthetic_corpus(8, task, 4, OntologySize::default()).unwrap();
        for r in serialize_corpus(&c, FormatVariant::QA, SerializeMode::Eval).unwrap() {
            let (t, answer) = parse_output(&r.target_text).unwrap();
            assert_eq!(t, task);
            assert_eq!(answer, r.answer());
        }
    }
}

#[test]
fn parse_output_rejects_unknown_tags() {
    assert!(parse_output("[XX] hello").is_err());
    assert!(parse_output("").is_err());
    assert_eq!(parse_output("[ID]").unwrap(), (Task::ID, String::new()));
}

#[test]
fn eval_negatives_for_id_are_fixed() {
    let c = generate_synthetic_corpus(2, Task::ID, 6, OntologySize::default()).unwrap();
    let a = serialize_corpus(&c, FormatVariant::QA, SerializeMode::Eval).unwrap();
    let b = serialize_corpus(&c, FormatVariant::QA, SerializeMode::Eval).unwrap();
    assert_eq!(a, b);
    assert_eq!(count(&a, Polarity::NEGATIVE), 2 * count(&a, Polarity::POSITIVE));
}

#[test]
fn balancing_leaves_generation_tasks_alone() {
    let c = generate_synthetic_corpus(2, Task::DS, 4, OntologySize::default()).unwrap();
    let rs = serialize_corpus(&c, FormatVariant::QA, SerializeMode::Eval).unwrap();
    assert_eq!(balance_negatives(rs.clone(), Task::DS, 9), rs);
    assert!(rs.iter().all(|r| r.polarity == Polarity::NA));
}

#[test]
fn records_round_trip_through_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.jsonl");
    let c = generate_synthetic_corpus(4, Task::SF, 3, OntologySize::default()).unwrap();
    let rs = serialize_corpus(&c, FormatVariant::PREFIX, SerializeMode::Train { seed: 4 }).unwrap();
    write_records(&rs, &path).unwrap();
    assert_eq!(read_records(&path).unwrap(), rs);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn training_sets_keep_positives_and_cap_negatives(
        seed in 0u64..10_000,
        n in 1usize..6,
        domains in 3usize..5,
        slots in 1usize..4,
        task in prop::sample::select(vec![Task::SF, Task::DST, Task::ID]),
    ) {
        let size = OntologySize { domains, slots_per_domain: slots, intents_per_domain: 2 };
        let c = generate_synthetic_corpus(seed, task, n, size).unwrap();
        let full = serialize_corpus(&c, FormatVariant::QA, SerializeMode::Eval).unwrap();
        let train = serialize_corpus(&c, FormatVariant::QA, SerializeMode::Train { seed }).unwrap();
        let again = serialize_corpus(&c, FormatVariant::QA, SerializeMode::Train { seed }).unwrap();
        prop_assert_eq!(&train, &again);
        let pos = count(&train, Polarity::POSITIVE);
        let neg = count(&train, Polarity::NEGATIVE);
        prop_assert_eq!(pos, count(&full, Polarity::POSITIVE));
        if task == Task::ID {
            prop_assert_eq!(neg, 2 * pos);
        } else {
            prop_assert!(neg <= 2 * pos);
            prop_assert_eq!(neg, count(&full, Polarity::NEGATIVE).min(2 * pos));
        }
        // SF/DST keep a subsequence of the full query set.
        if task != Task::ID {
            let mut it = full.iter();
            for r in &train {
                prop_assert!(it.any(|f| f == r));
            }
        }
    }
}
