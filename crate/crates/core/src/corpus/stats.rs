use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::Corpus;
use crate::unify::{UnifiedRecord, TURN_SEP};
use crate::{Error, Result};

/// Length, diversity and perplexity statistics of a serialized task split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sample_count: usize,
    pub avg_input_tokens: f64,
    pub avg_input_turns: f64,
    pub avg_output_tokens: f64,
    pub avg_input_sentences: f64,
    pub avg_output_sentences: f64,
    /// Average number of distinct 1-, 2- and 3-grams per input.
    pub distinct_ngram_avg_input: [f64; 3],
    pub distinct_ngram_avg_output: [f64; 3],
    pub unigram_ppl_input: f64,
    pub unigram_ppl_output: f64,
}

/// Number of maximal segments ending in `.`, `!` or `?`; trailing text without
/// a terminator forms one more segment. Any non-blank text has at least one.
pub fn count_sentences(text: &str) -> usize {
    let is_term = |c: char| matches!(c, '.' | '!' | '?');
    let chars: Vec<char> = text.chars().collect();
    let mut count = 0;
    let mut content = false;
    for (i, &c) in chars.iter().enumerate() {
        if !c.is_whitespace() {
            content = true;
        }
        let ends_run = is_term(c) && chars.get(i + 1).is_none_or(|&n| !is_term(n));
        if ends_run && content {
            count += 1;
            content = false;
        }
    }
    if content {
        count += 1;
    }
    count
}

fn turns_of(content: &str) -> Vec<Vec<&str>> {
    let mut turns = vec![Vec::new()];
    for tok in content.split_whitespace() {
        if tok == TURN_SEP {
            turns.push(Vec::new());
        } else {
            turns.last_mut().expect("non-empty").push(tok);
        }
    }
    turns
}

fn distinct_ngrams(tokens: &[&str], n: usize) -> usize {
    if tokens.len() < n {
        return 0;
    }
    tokens.windows(n).collect::<HashSet<_>>().len()
}

fn unigram_ppl<'a>(tokens: impl Iterator<Item = &'a str>) -> f64 {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut total = 0usize;
    for t in tokens {
        *counts.entry(t).or_default() += 1;
        total += 1;
    }
    if total == 0 {
        return 1.0;
    }
    let denom = (total + counts.len()) as f64;
    let log_sum: f64 = counts
        .values()
        .map(|&c| c as f64 * ((c + 1) as f64 / denom).ln())
        .sum();
    (-log_sum / total as f64).exp()
}

impl CorpusStats {
    /// Statistics over serialized records of a single task.
    pub fn from_records(records: &[UnifiedRecord]) -> Result<CorpusStats> {
        if records.is_empty() {
            return Err(Error::Empty("records"));
        }
        let n = records.len() as f64;
        let mut in_tok = 0usize;
        let mut in_turns = 0usize;
        let mut in_sent = 0usize;
        let mut out_tok = 0usize;
        let mut out_sent = 0usize;
        let mut in_distinct = [0usize; 3];
        let mut out_distinct = [0usize; 3];
        let mut all_in: Vec<&str> = Vec::new();
        let mut all_out: Vec<&str> = Vec::new();

        for r in records {
            let turns = turns_of(r.content());
            in_turns += turns.len();
            for t in &turns {
                in_sent += count_sentences(&t.join(" "));
            }
            let input: Vec<&str> = turns.into_iter().flatten().collect();
            let output: Vec<&str> = r.answer().split_whitespace().collect();
            in_tok += input.len();
            out_tok += output.len();
            out_sent += count_sentences(r.answer());
            for k in 0..3 {
                in_distinct[k] += distinct_ngrams(&input, k + 1);
                out_distinct[k] += distinct_ngrams(&output, k + 1);
            }
            all_in.extend(input);
            all_out.extend(output);
        }

        Ok(CorpusStats {
            sample_count: records.len(),
            avg_input_tokens: in_tok as f64 / n,
            avg_input_turns: in_turns as f64 / n,
            avg_output_tokens: out_tok as f64 / n,
            avg_input_sentences: in_sent as f64 / n,
            avg_output_sentences: out_sent as f64 / n,
            distinct_ngram_avg_input: in_distinct.map(|c| c as f64 / n),
            distinct_ngram_avg_output: out_distinct.map(|c| c as f64 / n),
            unigram_ppl_input: unigram_ppl(all_in.into_iter()),
            unigram_ppl_output: unigram_ppl(all_out.into_iter()),
        })
    }
}

/// Statistics of `records`, which must have been serialized from `corpus`.
pub fn compute_corpus_stats(corpus: &Corpus, records: &[UnifiedRecord]) -> Result<CorpusStats> {
    if let Some(r) = records.iter().find(|r| r.task != corpus.task) {
        return Err(Error::TaskMismatch {
            expected: corpus.task,
            found: r.task,
        });
    }
    CorpusStats::from_records(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unify::{FormatVariant, Origin, Polarity};
    use crate::Task;

    fn sf(content: &str, answer: &str) -> UnifiedRecord {
        UnifiedRecord {
            task: Task::SF,
            input_text: format!("[SF] {content} [C] what is x of y?"),
            target_text: format!("[SF] {answer}"),
            polarity: Polarity::POSITIVE,
            origin: Origin::default(),
            variant: FormatVariant::QA,
            query: "what is x of y?".into(),
        }
    }

    #[test]
    fn sentence_segments() {
        assert_eq!(count_sentences(""), 0);
        assert_eq!(count_sentences("hello there"), 1);
        assert_eq!(count_sentences("Hi!! ok."), 2);
        assert_eq!(count_sentences("a. b"), 2);
        assert_eq!(count_sentences("Sure! What is your departure site?"), 2);
    }

    #[test]
    fn single_record() {
        let s = CorpusStats::from_records(&[sf("a b c", "a")]).unwrap();
        assert_eq!(s.sample_count, 1);
        assert_eq!(s.avg_input_tokens, 3.0);
        assert_eq!(s.avg_input_turns, 1.0);
        assert_eq!(s.avg_output_tokens, 1.0);
    }

    #[test]
    fn output_mean() {
        let s = CorpusStats::from_records(&[sf("x", "a"), sf("x", "a b c")]).unwrap();
        assert_eq!(s.avg_output_tokens, 2.0);
    }

    #[test]
    fn turn_separators_are_not_tokens() {
        let s = CorpusStats::from_records(&[sf("USER : hi [T] SYSTEM : yes .", "a")]).unwrap();
        assert_eq!(s.avg_input_tokens, 7.0);
        assert_eq!(s.avg_input_turns, 2.0);
        assert_eq!(s.avg_input_sentences, 2.0);
    }

    #[test]
    fn empty_records_rejected() {
        assert!(matches!(CorpusStats::from_records(&[]), Err(Error::Empty(_))));
    }
}
