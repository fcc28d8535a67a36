//! Evaluation metrics over whitespace tokens.

mod report;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub use report::{main_metric_name, MetricsReport, TaskMetrics};

use crate::corpus::StateTriple;
use crate::unify::{Origin, NOT_MENTIONED};
use crate::{Error, Result};

fn tokens(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn ngram_counts<'a>(toks: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut counts = HashMap::new();
    if n == 0 || toks.len() < n {
        return counts;
    }
    for w in toks.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

fn clipped_overlap(hyp: &HashMap<&[&str], usize>, reference: &HashMap<&[&str], usize>) -> usize {
    hyp.iter()
        .map(|(g, c)| (*c).min(reference.get(g).copied().unwrap_or(0)))
        .sum()
}

fn f1(overlap: f64, hyp_total: f64, ref_total: f64) -> f64 {
    if hyp_total == 0.0 || ref_total == 0.0 || overlap == 0.0 {
        return 0.0;
    }
    let p = overlap / hyp_total;
    let r = overlap / ref_total;
    2.0 * p * r / (p + r)
}

/// ROUGE-N F1 with clipped n-gram counts. `n = 0` yields 0.
pub fn rouge_n(hyp: &str, reference: &str, n: usize) -> f64 {
    let h = tokens(hyp);
    let r = tokens(reference);
    if n == 0 || h.len() < n || r.len() < n {
        return 0.0;
    }
    let hc = ngram_counts(&h, n);
    let rc = ngram_counts(&r, n);
    let overlap = clipped_overlap(&hc, &rc);
    f1(
        overlap as f64,
        (h.len() + 1 - n) as f64,
        (r.len() + 1 - n) as f64,
    )
}

fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 over the longest common subsequence.
pub fn rouge_l(hyp: &str, reference: &str) -> f64 {
    let h = tokens(hyp);
    let r = tokens(reference);
    f1(lcs_len(&h, &r) as f64, h.len() as f64, r.len() as f64)
}

/// Corpus-level BLEU-4 with clipped precisions, add-one smoothing of zero
/// precisions for n >= 2, and the brevity penalty.
pub fn corpus_bleu<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::invalid(format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if hyps.is_empty() {
        return Err(Error::Empty("BLEU corpus"));
    }
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (h, r) in hyps.iter().zip(refs) {
        let h = tokens(h.as_ref());
        let r = tokens(r.as_ref());
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            let hc = ngram_counts(&h, n);
            let rc = ngram_counts(&r, n);
            matched[n - 1] += clipped_overlap(&hc, &rc);
            total[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if matched[0] == 0 || hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        let (m, t) = if n > 0 && matched[n] == 0 {
            (matched[n] + 1, total[n] + 1)
        } else {
            (matched[n], total[n])
        };
        log_sum += (m as f64 / t as f64).ln();
    }
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(bp * (log_sum / 4.0).exp())
}

/// Trims and collapses whitespace runs; case is preserved.
pub fn normalize(s: &str) -> String {
    tokens(s).join(" ")
}

pub fn exact_match(hyp: &str, reference: &str) -> bool {
    tokens(hyp) == tokens(reference)
}

/// Fraction of `(gold, predicted)` pairs that match exactly.
pub fn intent_accuracy<G: AsRef<str>, P: AsRef<str>>(pairs: &[(G, P)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("intent predictions"));
    }
    let hits = pairs
        .iter()
        .filter(|(g, p)| exact_match(p.as_ref(), g.as_ref()))
        .count();
    Ok(hits as f64 / pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotPrediction {
    pub origin: Origin,
    pub gold: String,
    pub predicted: String,
}

impl SlotPrediction {
    pub fn new(gold: impl Into<String>, predicted: impl Into<String>) -> Self {
        SlotPrediction {
            origin: Origin::default(),
            gold: gold.into(),
            predicted: predicted.into(),
        }
    }
}

fn is_negative(s: &str) -> bool {
    exact_match(s, NOT_MENTIONED)
}

/// Span F1 where pairs with gold and prediction both "not mentioned" are
/// left out entirely.
pub fn span_f1(preds: &[SlotPrediction]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Empty("slot predictions"));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for p in preds {
        let gold_neg = is_negative(&p.gold);
        let pred_neg = is_negative(&p.predicted);
        let hit = exact_match(&p.predicted, &p.gold);
        if !gold_neg && hit {
            tp += 1;
        }
        if !pred_neg && !hit {
            fp += 1;
        }
        if !gold_neg && !hit {
            fn_ += 1;
        }
    }
    let denom = 2 * tp + fp + fn_;
    Ok(if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    })
}

/// Fraction of turns whose predicted state equals the gold state.
pub fn joint_goal_accuracy(turns: &[(BTreeSet<StateTriple>, BTreeSet<StateTriple>)]) -> Result<f64> {
    if turns.is_empty() {
        return Err(Error::Empty("dialogue states"));
    }
    let hits = turns.iter().filter(|(g, p)| g == p).count();
    Ok(hits as f64 / turns.len() as f64)
}

/// Mean of the five main metrics (ROUGE-L, BLEU, accuracy, F1, JGA), all as
/// fractions or all as percentages.
pub fn overall_score(main: [f64; 5]) -> Result<f64> {
    mean_score(&main)
}

/// Mean of any non-empty set of main metrics sharing one unit.
pub fn mean_score(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("main metrics"));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 100.0) {
        return Err(Error::invalid(format!("metric value {v} is outside [0, 100]")));
    }
    let percent = values.iter().any(|v| *v > 1.0);
    let fraction = values.iter().any(|v| *v > 0.0 && *v < 1.0);
    if percent && fraction {
        return Err(Error::invalid(
            "metric values mix fractions and percentages",
        ));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}
