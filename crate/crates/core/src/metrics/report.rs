use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mean_score;
use crate::{Error, Result, Task};

/// Metric values for one task, as fractions in `[0, 1]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rouge1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none", rename = "rougeL")]
    pub rouge_l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bleu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jga: Option<f64>,
}

impl TaskMetrics {
    /// The metric that enters the overall score for `task`.
    pub fn main(&self, task: Task) -> Option<f64> {
        match task {
            Task::DS => self.rouge_l,
            Task::DC => self.bleu,
            Task::ID => self.accuracy,
            Task::SF => self.f1,
            Task::DST => self.jga,
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "rouge1" => self.rouge1,
            "rougeL" => self.rouge_l,
            "em" => self.em,
            "bleu" => self.bleu,
            "accuracy" => self.accuracy,
            "f1" => self.f1,
            "jga" => self.jga,
            _ => None,
        }
    }
}

pub fn main_metric_name(task: Task) -> &'static str {
    match task {
        Task::DS => "rougeL",
        Task::DC => "bleu",
        Task::ID => "accuracy",
        Task::SF => "f1",
        Task::DST => "jga",
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tasks: BTreeMap<Task, TaskMetrics>,
    /// Mean of the main metric of every task present.
    pub overall: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<String>,
}

impl MetricsReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, task: Task, metrics: TaskMetrics) -> Result<()> {
        self.tasks.insert(task, metrics);
        self.overall = self.compute_overall()?;
        Ok(())
    }

    fn compute_overall(&self) -> Result<Option<f64>> {
        let mains: Vec<f64> = self
            .tasks
            .iter()
            .filter_map(|(t, m)| m.main(*t))
            .collect();
        if mains.is_empty() {
            return Ok(None);
        }
        mean_score(&mains).map(Some)
    }

    /// Looks up `"overall"`, `"<task>"` (its main metric) or
    /// `"<task>.<metric>"`.
    pub fn metric(&self, name: &str) -> Result<Option<f64>> {
        if name.eq_ignore_ascii_case("overall") {
            return Ok(self.overall);
        }
        let (task, metric) = match name.split_once('.') {
            Some((t, m)) => (t.parse::<Task>()?, Some(m)),
            None => (name.parse::<Task>()?, None),
        };
        let Some(m) = self.tasks.get(&task) else {
            return Ok(None);
        };
        match metric {
            None => Ok(m.main(task)),
            Some(metric) => {
                let known = ["rouge1", "rougeL", "em", "bleu", "accuracy", "f1", "jga"];
                if !known.contains(&metric) {
                    return Err(Error::invalid(format!("unknown metric {metric:?}")));
                }
                Ok(m.get(metric))
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    /// Human-readable table with values scaled by 100.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (task, m) in &self.tasks {
            let cells: Vec<String> = ["rouge1", "rougeL", "em", "bleu", "accuracy", "f1", "jga"]
                .iter()
                .filter_map(|k| m.get(k).map(|v| format!("{k}={:.2}", v * 100.0)))
                .collect();
            out.push_str(&format!("{task:<4} n={:<6} {}\n", m.count, cells.join(" ")));
        }
        if let Some(o) = self.overall {
            out.push_str(&format!("overall {:.2}\n", o * 100.0));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overall_tracks_main_metrics() {
        let mut r = MetricsReport::new();
        r.insert(
            Task::DS,
            TaskMetrics {
                count: 3,
                rouge1: Some(0.5),
                rouge_l: Some(0.4),
                ..Default::default()
            },
        )
        .unwrap();
        r.insert(
            Task::ID,
            TaskMetrics {
                count: 2,
                accuracy: Some(0.8),
                ..Default::default()
            },
        )
        .unwrap();
        assert!((r.overall.unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(r.metric("ds").unwrap(), Some(0.4));
        assert_eq!(r.metric("DS.rouge1").unwrap(), Some(0.5));
        assert_eq!(r.metric("sf").unwrap(), None);
        assert!(r.metric("ds.meteor").is_err());
        let back = MetricsReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(r.to_text().contains("overall 60.00"));
    }
}
