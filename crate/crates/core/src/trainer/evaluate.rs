use std::collections::{BTreeMap, BTreeSet};

use crate::corpus::{Corpus, StateTriple};
use crate::metrics::{
    corpus_bleu, exact_match, intent_accuracy, joint_goal_accuracy, normalize, rouge_l, rouge_n,
    span_f1, MetricsReport, SlotPrediction, TaskMetrics,
};
use crate::model::{Checkpoint, Parameters, Scalar, Vocab};
use crate::unify::{
    parse_output, serialize_corpus, FormatVariant, SerializeMode, UnifiedRecord, NOT_MENTIONED,
};
use crate::{with_weights, Error, Result, Task};

/// Greedy predictions for a set of records.
pub struct Predictions {
    pub answers: Vec<String>,
    /// Tag the model emitted, when it emitted a recognised one.
    pub tags: Vec<Option<Task>>,
}

pub(crate) fn predict_with<T: Scalar>(
    params: &Parameters<T>,
    vocab: &Vocab,
    records: &[UnifiedRecord],
    max_new: usize,
) -> Result<Predictions> {
    let mut answers = Vec::with_capacity(records.len());
    let mut tags = Vec::with_capacity(records.len());
    for r in records {
        let input = vocab.tokenize(&r.input_text);
        match r.variant {
            FormatVariant::QA => {
                let out = params.greedy_decode(&input, max_new)?;
                match parse_output(&vocab.detokenize(&out)) {
                    Ok((task, answer)) => {
                        answers.push(answer);
                        tags.push(Some(task));
                    }
                    Err(_) => {
                        answers.push(String::new());
                        tags.push(None);
                    }
                }
            }
            FormatVariant::PREFIX => {
                let prefix = vocab.tokenize(&r.decoder_prefix());
                let out = params.greedy_decode_with_prefix(&input, &prefix, max_new)?;
                answers.push(vocab.detokenize(&out));
                tags.push(Some(r.task));
            }
        }
    }
    Ok(Predictions { answers, tags })
}

/// Greedy answers of `checkpoint` for `records`.
pub fn predict(checkpoint: &Checkpoint, records: &[UnifiedRecord], max_new: usize) -> Result<Predictions> {
    with_weights!(&checkpoint.weights, p => predict_with(p, &checkpoint.vocab, records, max_new))
}

/// Fraction of records whose predicted answer matches the gold answer.
pub fn exact_match_rate(checkpoint: &Checkpoint, records: &[UnifiedRecord], max_new: usize) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty("records"));
    }
    let preds = predict(checkpoint, records, max_new)?;
    let hits = records
        .iter()
        .zip(&preds.answers)
        .filter(|(r, a)| exact_match(a, r.answer()))
        .count();
    Ok(hits as f64 / records.len() as f64)
}

fn check_tags(task: Task, tags: &[Option<Task>]) -> Result<()> {
    let mut wrong: BTreeMap<Task, usize> = BTreeMap::new();
    for t in tags.iter().flatten().filter(|t| **t != task) {
        *wrong.entry(*t).or_default() += 1;
    }
    let total: usize = wrong.values().sum();
    if !tags.is_empty() && 2 * total >= tags.len() {
        let found = wrong
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(t, _)| *t)
            .expect("non-empty");
        return Err(Error::TaskMismatch {
            expected: task,
            found,
        });
    }
    Ok(())
}

fn gold_state(corpus: &Corpus, dialogue: &str, turn: usize) -> BTreeSet<StateTriple> {
    corpus
        .dialogues
        .iter()
        .find(|d| d.id == dialogue)
        .and_then(|d| d.state(turn))
        .map(|s| {
            s.iter()
                .filter(|t| !exact_match(t.value(), NOT_MENTIONED))
                .map(|t| StateTriple::new(t.domain(), t.slot(), normalize(t.value())))
                .collect()
        })
        .unwrap_or_default()
}

/// Task metrics from gold records and predicted answers.
pub fn score_task(
    corpus: &Corpus,
    records: &[UnifiedRecord],
    answers: &[String],
) -> Result<TaskMetrics> {
    if records.is_empty() {
        return Err(Error::Empty("evaluation records"));
    }
    let golds: Vec<&str> = records.iter().map(|r| r.answer()).collect();
    let n = records.len() as f64;
    let mut m = TaskMetrics {
        count: records.len(),
        ..Default::default()
    };
    match corpus.task {
        Task::DS => {
            m.rouge1 = Some(golds.iter().zip(answers).map(|(g, a)| rouge_n(a, g, 1)).sum::<f64>() / n);
            m.rouge_l = Some(golds.iter().zip(answers).map(|(g, a)| rouge_l(a, g)).sum::<f64>() / n);
        }
        Task::DC => {
            let hits = golds.iter().zip(answers).filter(|(g, a)| exact_match(a, g)).count();
            m.em = Some(hits as f64 / n);
            m.bleu = Some(corpus_bleu(answers, &golds)?);
        }
        Task::ID => {
            let pairs: Vec<(&str, &str)> = golds.iter().copied().zip(answers.iter().map(String::as_str)).collect();
            m.accuracy = Some(intent_accuracy(&pairs)?);
        }
        Task::SF => {
            let preds: Vec<SlotPrediction> = records
                .iter()
                .zip(answers)
                .map(|(r, a)| SlotPrediction {
                    origin: r.origin.clone(),
                    gold: r.answer().to_string(),
                    predicted: a.clone(),
                })
                .collect();
            m.f1 = Some(span_f1(&preds)?);
        }
        Task::DST => {
            let mut turns: BTreeMap<(String, usize), BTreeSet<StateTriple>> = BTreeMap::new();
            for (r, a) in records.iter().zip(answers) {
                let turn = r.origin.turn.ok_or_else(|| Error::invalid("DST record without turn"))?;
                let entry = turns.entry((r.origin.dialogue.clone(), turn)).or_default();
                if !exact_match(a, NOT_MENTIONED) {
                    let domain = r.origin.domain.clone().unwrap_or_default();
                    let slot = r.origin.slot.clone().unwrap_or_default();
                    entry.insert(StateTriple::new(domain, slot, normalize(a)));
                }
            }
            let pairs: Vec<_> = turns
                .into_iter()
                .map(|((d, t), pred)| (gold_state(corpus, &d, t), pred))
                .collect();
            m.count = pairs.len();
            m.jga = Some(joint_goal_accuracy(&pairs)?);
        }
    }
    Ok(m)
}

pub(crate) fn evaluate_with<T: Scalar>(
    params: &Parameters<T>,
    vocab: &Vocab,
    corpus: &Corpus,
    variant: FormatVariant,
    max_new: usize,
) -> Result<TaskMetrics> {
    let records = serialize_corpus(corpus, variant, SerializeMode::Eval)?;
    let preds = predict_with(params, vocab, &records, max_new)?;
    check_tags(corpus.task, &preds.tags)?;
    score_task(corpus, &records, &preds.answers)
}

/// Decodes every evaluation query of `corpus` greedily and scores the task.
pub fn evaluate(checkpoint: &Checkpoint, corpus: &Corpus, variant: FormatVariant) -> Result<MetricsReport> {
    evaluate_max_new(checkpoint, corpus, variant, crate::model::DEFAULT_MAX_NEW)
}

pub fn evaluate_max_new(
    checkpoint: &Checkpoint,
    corpus: &Corpus,
    variant: FormatVariant,
    max_new: usize,
) -> Result<MetricsReport> {
    let metrics = with_weights!(&checkpoint.weights, p => {
        evaluate_with(p, &checkpoint.vocab, corpus, variant, max_new)
    })?;
    let mut report = MetricsReport::new();
    report.insert(corpus.task, metrics)?;
    report.checkpoint = Some(checkpoint.fingerprint());
    Ok(report)
}
