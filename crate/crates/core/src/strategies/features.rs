use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusStats;
use crate::{Error, Result, Task};

pub const FEATURE_DIM: usize = 14;

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "input_avg_token_len",
    "input_avg_sentence_num",
    "input_distinct_1gram_avg",
    "input_distinct_2gram_avg",
    "input_distinct_3gram_avg",
    "input_unigram_ppl",
    "input_avg_turn_num",
    "output_avg_token_len",
    "output_avg_sentence_num",
    "output_distinct_1gram_avg",
    "output_distinct_2gram_avg",
    "output_distinct_3gram_avg",
    "output_unigram_ppl",
    "training_scale",
];

/// Model-agnostic descriptor of a task: raw statistics and their z-scores
/// across the task set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFeature {
    pub raw: [f64; FEATURE_DIM],
    pub normalized: [f64; FEATURE_DIM],
}

pub fn raw_feature(s: &CorpusStats) -> [f64; FEATURE_DIM] {
    [
        s.avg_input_tokens,
        s.avg_input_sentences,
        s.distinct_ngram_avg_input[0],
        s.distinct_ngram_avg_input[1],
        s.distinct_ngram_avg_input[2],
        s.unigram_ppl_input,
        s.avg_input_turns,
        s.avg_output_tokens,
        s.avg_output_sentences,
        s.distinct_ngram_avg_output[0],
        s.distinct_ngram_avg_output[1],
        s.distinct_ngram_avg_output[2],
        s.unigram_ppl_output,
        s.sample_count as f64,
    ]
}

/// Z-scores each dimension with the sample standard deviation; dimensions
/// without variance map to 0.
pub fn z_normalize(raw: &[[f64; FEATURE_DIM]]) -> Result<Vec<[f64; FEATURE_DIM]>> {
    if raw.len() < 2 {
        return Err(Error::invalid("feature normalization needs at least two tasks"));
    }
    let n = raw.len() as f64;
    let mut out = vec![[0.0; FEATURE_DIM]; raw.len()];
    for k in 0..FEATURE_DIM {
        let mean = raw.iter().map(|r| r[k]).sum::<f64>() / n;
        let var = raw.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt();
        for (o, r) in out.iter_mut().zip(raw) {
            o[k] = if std > 0.0 { (r[k] - mean) / std } else { 0.0 };
        }
    }
    Ok(out)
}

pub fn compute_task_features(stats: &[CorpusStats]) -> Result<Vec<TaskFeature>> {
    let raw: Vec<_> = stats.iter().map(raw_feature).collect();
    for (i, r) in raw.iter().enumerate() {
        if let Some(k) = r.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("feature {} of task #{i}", FEATURE_NAMES[k])));
        }
    }
    let normalized = z_normalize(&raw)?;
    Ok(raw
        .into_iter()
        .zip(normalized)
        .map(|(raw, normalized)| TaskFeature { raw, normalized })
        .collect())
}

#[derive(Serialize, Deserialize)]
struct FeatureEntry {
    raw: Vec<f64>,
    normalized: Vec<f64>,
    dimension_names: Vec<String>,
}

/// Task-feature file: task name → raw, normalized and dimension names.
pub fn features_to_json(tasks: &[Task], features: &[TaskFeature]) -> String {
    let map: BTreeMap<&str, FeatureEntry> = tasks
        .iter()
        .zip(features)
        .map(|(t, f)| {
            (
                t.name(),
                FeatureEntry {
                    raw: f.raw.to_vec(),
                    normalized: f.normalized.to_vec(),
                    dimension_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
                },
            )
        })
        .collect();
    serde_json::to_string_pretty(&map).expect("feature serialization is infallible")
}

pub fn features_from_json(text: &str) -> Result<Vec<(Task, TaskFeature)>> {
    let map: BTreeMap<String, FeatureEntry> = serde_json::from_str(text)?;
    map.into_iter()
        .map(|(name, e)| {
            let task: Task = name.parse()?;
            let raw: [f64; FEATURE_DIM] = e
                .raw
                .try_into()
                .map_err(|_| Error::invalid(format!("{name}: raw feature must have 14 values")))?;
            let normalized: [f64; FEATURE_DIM] = e
                .normalized
                .try_into()
                .map_err(|_| Error::invalid(format!("{name}: normalized feature must have 14 values")))?;
            Ok((task, TaskFeature { raw, normalized }))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(samples: usize, tokens: f64) -> CorpusStats {
        CorpusStats {
            sample_count: samples,
            avg_input_tokens: tokens,
            avg_input_turns: 1.0,
            avg_output_tokens: 2.0,
            avg_input_sentences: 1.0,
            avg_output_sentences: 1.0,
            distinct_ngram_avg_input: [3.0, 2.0, 1.0],
            distinct_ngram_avg_output: [2.0, 1.0, 0.0],
            unigram_ppl_input: 5.0,
            unigram_ppl_output: 3.0,
        }
    }

    #[test]
    fn training_scale_two_point_zscore() {
        let f = compute_task_features(&[stats(14732, 104.95), stats(2205, 34.92)]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((f[0].normalized[13] - h).abs() < 1e-12);
        assert!((f[1].normalized[13] + h).abs() < 1e-12);
        // equal dimension → 0
        assert_eq!(f[0].normalized[6], 0.0);
        assert_eq!(f[1].normalized[6], 0.0);
        assert_eq!(f[0].raw[13], 14732.0);
    }

    #[test]
    fn needs_two_tasks() {
        assert!(compute_task_features(&[stats(1, 1.0)]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let f = compute_task_features(&[stats(10, 1.0), stats(20, 2.0)]).unwrap();
        let text = features_to_json(&[Task::SF, Task::ID], &f);
        let back = features_from_json(&text).unwrap();
        assert_eq!(back.len(), 2);
        let sf = back.iter().find(|(t, _)| *t == Task::SF).unwrap();
        assert_eq!(sf.1, f[0]);
    }
}
