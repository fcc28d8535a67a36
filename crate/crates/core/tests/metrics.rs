use std::collections::BTreeSet;

use proptest::prelude::*;
use unidu_core::corpus::StateTriple;
use unidu_core::metrics::{
    corpus_bleu, exact_match, intent_accuracy, joint_goal_accuracy, mean_score, overall_score, rouge_l, rouge_n,
    span_f1, MetricsReport, SlotPrediction, TaskMetrics,
};
use unidu_core::Task;

const NM: &str = "not mentioned";

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["a", "b", "c", "d", "taxi", "north"]).prop_map(String::from)
}

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(word(), 0..8).prop_map(|w| w.join(" "))
}

#[test]
fn bleu_of_identical_long_corpus_is_one() {
    let refs = ["the cat sat on the mat", "a dog ran to the north gate"];
    assert!((corpus_bleu(&refs, &refs).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn bleu_hand_computed_with_brevity_penalty() {
    // p1 = 3/3, p2 = 2/2, p3 = 1/1, p4 smoothed to 1/1; c = 3, r = 4.
    let b = corpus_bleu(&["a b c"], &["a b c d"]).unwrap();
    assert!((b - (1.0f64 - 4.0 / 3.0).exp()).abs() < 1e-12);
    // No unigram overlap scores zero.
    assert_eq!(corpus_bleu(&["x y"], &["a b"]).unwrap(), 0.0);
}

#[test]
fn bleu_rejects_mismatched_lengths() {
    assert!(corpus_bleu(&["a"], &["a", "b"]).is_err());
}

#[test]
fn rouge_edge_cases() {
    assert_eq!(rouge_n("", "a b", 1), 0.0);
    assert_eq!(rouge_l("a b", ""), 0.0);
    assert_eq!(rouge_n("a b", "a b", 2), 1.0);
    // LCS of "a b c" and "c a b" is 2.
    assert!((rouge_l("a b c", "c a b") - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn exact_match_is_whitespace_insensitive_and_case_sensitive() {
    assert!(exact_match("  north   side ", "north side"));
    assert!(!exact_match("North side", "north side"));
}

#[test]
fn span_f1_counts() {
    let preds = vec![
        SlotPrediction::new("10:45", "10:45"), // tp
        SlotPrediction::new("avalon", NM),     // fn
        SlotPrediction::new(NM, "cheap"),      // fp
        SlotPrediction::new("north", "south"), // fp + fn
        SlotPrediction::new(NM, NM),           // ignored
    ];
    let f = span_f1(&preds).unwrap();
    assert!((f - 2.0 / (2.0 + 2.0 + 2.0)).abs() < 1e-12);
    assert_eq!(span_f1(&[SlotPrediction::new(NM, NM)]).unwrap(), 0.0);
    assert!(span_f1(&[]).is_err());
}

#[test]
fn accuracy_and_jga() {
    let acc = intent_accuracy(&[("book taxi", "book taxi"), ("book taxi", "find hotel")]).unwrap();
    assert_eq!(acc, 0.5);
    let s = |v: &[(&str, &str, &str)]| -> BTreeSet<StateTriple> {
        v.iter().map(|(d, s, x)| StateTriple::new(*d, *s, *x)).collect()
    };
    let turns = vec![
        (s(&[("taxi", "destination", "avalon")]), s(&[("taxi", "destination", "avalon")])),
        (s(&[("taxi", "destination", "avalon")]), s(&[])),
        (s(&[]), s(&[])),
    ];
    assert!((joint_goal_accuracy(&turns).unwrap() - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn mean_score_units() {
    assert_eq!(overall_score([0.5, 0.5, 0.5, 0.5, 0.5]).unwrap(), 0.5);
    assert!(mean_score(&[50.0, 0.5]).is_err());
    assert!(mean_score(&[101.0]).is_err());
    assert!(mean_score(&[-0.1]).is_err());
    assert!(mean_score(&[]).is_err());
    assert_eq!(mean_score(&[0.0, 100.0]).unwrap(), 50.0);
}

#[test]
fn report_overall_and_lookup() {
    let mut r = MetricsReport::new();
    r.insert(
        Task::DS,
        TaskMetrics {
            rouge_l: Some(0.4),
            ..TaskMetrics::default()
        },
    )
    .unwrap();
    r.insert(
        Task::SF,
        TaskMetrics {
            f1: Some(0.8),
            ..TaskMetrics::default()
        },
    )
    .unwrap();
    assert!((r.overall.unwrap() - 0.6).abs() < 1e-12);
    assert_eq!(r.metric("DS.rougeL").unwrap(), Some(0.4));
    assert_eq!(r.metric("sf").unwrap(), Some(0.8));
    assert!(r.metric("bogus").is_err());
    let back = MetricsReport::from_json(&r.to_json()).unwrap();
    assert_eq!(back, r);
}

proptest! {
    #[test]
    fn rouge_is_symmetric_and_bounded(h in sentence(), r in sentence()) {
        for v in [rouge_n(&h, &r, 1), rouge_n(&h, &r, 2), rouge_l(&h, &r)] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!((rouge_n(&h, &r, 1) - rouge_n(&r, &h, 1)).abs() < 1e-12);
        prop_assert!((rouge_l(&h, &r) - rouge_l(&r, &h)).abs() < 1e-12);
    }

    #[test]
    fn bleu_is_invariant_to_pair_order(pairs in prop::collection::vec((sentence(), sentence()), 1..12), rot in 0usize..12) {
        let hs: Vec<&String> = pairs.iter().map(|p| &p.0).collect();
        let rs: Vec<&String> = pairs.iter().map(|p| &p.1).collect();
        let base = corpus_bleu(&hs.iter().map(|s| s.as_str()).collect::<Vec<_>>(), &rs.iter().map(|s| s.as_str()).collect::<Vec<_>>()).unwrap();
        let k = rot % pairs.len();
        let mut rotated = pairs.clone();
        rotated.rotate_left(k);
        let hs2: Vec<&str> = rotated.iter().map(|p| p.0.as_str()).collect();
        let rs2: Vec<&str> = rotated.iter().map(|p| p.1.as_str()).collect();
        prop_assert!((corpus_bleu(&hs2, &rs2).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn span_f1_ignores_double_negatives(
        golds in prop::collection::vec(prop::sample::select(vec!["x", "y", NM]), 1..10),
        preds in prop::collection::vec(prop::sample::select(vec!["x", "y", NM]), 10),
        extra in 0usize..5,
    ) {
        let base: Vec<SlotPrediction> = golds.iter().zip(&preds).map(|(g, p)| SlotPrediction::new(*g, *p)).collect();
        let mut padded = base.clone();
        padded.extend((0..extra).map(|_| SlotPrediction::new(NM, NM)));
        prop_assert_eq!(span_f1(&base).unwrap(), span_f1(&padded).unwrap());
    }
}
