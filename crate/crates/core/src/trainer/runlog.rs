use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::metrics::MetricsReport;
use crate::{Error, Result, Task};

/// Record of one completed epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based epoch number.
    pub epoch: usize,
    pub stage: usize,
    /// Optimizer updates completed so far in the run.
    pub updates: u64,
    /// Records consumed this epoch, by corpus name.
    pub consumed: BTreeMap<String, usize>,
    pub consumed_tasks: BTreeMap<Task, usize>,
    /// Strategy objective of every optimizer update in this epoch.
    pub objectives: Vec<f64>,
    /// Task weights after every optimizer update, for weighted strategies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<BTreeMap<Task, f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev: Option<MetricsReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_secs: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub entries: Vec<EpochLog>,
}

impl RunLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("epoch log serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<EpochLog>, _>>()?;
        Ok(RunLog { entries })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }

    /// Weight trajectory across the whole run.
    pub fn weight_trajectory(&self) -> Option<Vec<BTreeMap<Task, f64>>> {
        let mut out = Vec::new();
        for e in &self.entries {
            out.extend(e.weights.as_ref()?.iter().cloned());
        }
        Some(out)
    }
}

/// Epoch (1-based) with the highest dev value of `criterion`; ties go to the
/// earliest epoch. Epochs without a dev report are skipped.
pub fn select_checkpoint(log: &RunLog, criterion: &str) -> Result<usize> {
    if log.entries.is_empty() {
        return Err(Error::Empty("run log"));
    }
    let criterion = criterion.replace(':', ".");
    let mut best: Option<(usize, f64)> = None;
    for e in &log.entries {
        let Some(report) = &e.dev else { continue };
        let Some(v) = report.metric(&criterion)? else {
            continue;
        };
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((e.epoch, v));
        }
    }
    best.map(|(epoch, _)| epoch).ok_or_else(|| {
        Error::invalid(format!("no epoch in the run log reports {criterion:?}"))
    })
}
