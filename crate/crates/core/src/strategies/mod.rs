//! Multitask training strategies: loss weighting and stage schedules.

mod features;
mod weighting;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use features::{
    compute_task_features, features_from_json, features_to_json, raw_feature, z_normalize,
    TaskFeature, FEATURE_DIM, FEATURE_NAMES,
};
pub use weighting::{
    average_sum_loss, gradnorm_step, huw_objective, huw_weight_grad, mats_objective, mats_weight,
    sigmoid, softplus, GradNormUpdate, HuwWeights, MatsNet, MATS_HIDDEN, MATS_PARAMS,
    MATS_WEIGHT_FLOOR,
};

use crate::{Error, Result, Task};

/// Default GradNorm restoring-force exponent.
pub const GRADNORM_ALPHA: f64 = 1.5;

#[allow(clippy::upper_case_acronyms)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum StrategyKind {
    ST,
    TT,
    MIX,
    CL,
    G2S,
    GRADNORM,
    HUW,
    MATS,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 8] = [
        StrategyKind::ST,
        StrategyKind::TT,
        StrategyKind::MIX,
        StrategyKind::CL,
        StrategyKind::G2S,
        StrategyKind::GRADNORM,
        StrategyKind::HUW,
        StrategyKind::MATS,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::ST => "st",
            StrategyKind::TT => "tt",
            StrategyKind::MIX => "mix",
            StrategyKind::CL => "cl",
            StrategyKind::G2S => "g2s",
            StrategyKind::GRADNORM => "gradnorm",
            StrategyKind::HUW => "huw",
            StrategyKind::MATS => "mats",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            StrategyKind::ST => "single task: train on one evaluated corpus only",
            StrategyKind::TT => "two-stage transfer: auxiliary corpus first, then the evaluated corpus",
            StrategyKind::MIX => "mix all training samples from every corpus together",
            StrategyKind::CL => "curriculum: utterance-level, then turn-level, then dialogue-level tasks",
            StrategyKind::G2S => "general to specific: domain-independent tasks first, then all tasks",
            StrategyKind::GRADNORM => "balance per-task gradient norms by adapting loss weights",
            StrategyKind::HUW => "learn one uncertainty weight per task",
            StrategyKind::MATS => "weights produced by a shared network over task features",
        }
    }

    /// Number of schedule stages; 1 for unscheduled strategies.
    pub fn stage_count(self) -> usize {
        match self {
            StrategyKind::CL => 3,
            StrategyKind::G2S => 2,
            StrategyKind::TT => 2,
            _ => 1,
        }
    }

    pub fn is_scheduled(self) -> bool {
        matches!(self, StrategyKind::CL | StrategyKind::G2S)
    }

    /// Strategies whose loss weights change during training.
    pub fn has_weights(self) -> bool {
        matches!(
            self,
            StrategyKind::GRADNORM | StrategyKind::HUW | StrategyKind::MATS
        )
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let lower = if lower == "hwu" { "huw".to_string() } else { lower };
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == lower)
            .ok_or_else(|| Error::invalid(format!("unknown strategy {s:?}")))
    }
}

/// Tasks trained at a given stage of the curriculum or general-to-specific
/// schedule. Earlier tasks are kept in later stages.
pub fn schedule_active_tasks(kind: StrategyKind, stage: usize) -> Result<BTreeSet<Task>> {
    let stages: &[&[Task]] = match kind {
        StrategyKind::CL => &[
            &[Task::ID, Task::SF],
            &[Task::ID, Task::SF, Task::DC, Task::DST],
            &Task::ALL,
        ],
        StrategyKind::G2S => &[&[Task::DS, Task::DC], &Task::ALL],
        other => {
            return Err(Error::invalid(format!("strategy {other} has no task schedule")));
        }
    };
    stages
        .get(stage)
        .map(|s| s.iter().copied().collect())
        .ok_or_else(|| {
            Error::invalid(format!(
                "stage {stage} out of range for {kind} ({} stages)",
                stages.len()
            ))
        })
}

/// Stage index for an epoch when the budget is split evenly across stages.
pub fn stage_for_epoch(stages: usize, epoch: usize, epochs: usize) -> usize {
    if stages <= 1 || epochs == 0 {
        return 0;
    }
    (epoch * stages / epochs).min(stages - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradNormState {
    pub weights: Vec<f64>,
    pub initial_losses: Option<Vec<f64>>,
    pub alpha: f64,
}

/// Learnable or scheduled state owned by a training run. Weight vectors are
/// indexed by position in `tasks`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyState {
    pub kind: StrategyKind,
    pub tasks: Vec<Task>,
    pub stage: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub huw: Option<HuwWeights>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mats: Option<MatsNet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradnorm: Option<GradNormState>,
}

impl StrategyState {
    pub fn new(kind: StrategyKind, tasks: &[Task], seed: u64) -> Self {
        let mut tasks = tasks.to_vec();
        tasks.sort();
        tasks.dedup();
        let n = tasks.len();
        StrategyState {
            kind,
            tasks,
            stage: 0,
            huw: (kind == StrategyKind::HUW).then(|| HuwWeights::ones(n)),
            mats: (kind == StrategyKind::MATS).then(|| MatsNet::init(seed)),
            gradnorm: (kind == StrategyKind::GRADNORM).then(|| GradNormState {
                weights: vec![1.0; n],
                initial_losses: None,
                alpha: GRADNORM_ALPHA,
            }),
        }
    }

    pub fn task_index(&self, task: Task) -> Option<usize> {
        self.tasks.iter().position(|t| *t == task)
    }

    pub fn set_stage(&mut self, stage: usize) -> Result<()> {
        if self.kind.is_scheduled() {
            schedule_active_tasks(self.kind, stage)?;
        } else if stage >= self.kind.stage_count() {
            return Err(Error::invalid(format!("stage {stage} out of range for {}", self.kind)));
        }
        self.stage = stage;
        Ok(())
    }

    /// Current per-task weights, or `None` for unweighted strategies.
    pub fn weights(&self, features: &BTreeMap<Task, TaskFeature>) -> Result<Option<Vec<f64>>> {
        match self.kind {
            StrategyKind::HUW => Ok(self.huw.as_ref().map(|h| h.weights())),
            StrategyKind::GRADNORM => Ok(self.gradnorm.as_ref().map(|g| g.weights.clone())),
            StrategyKind::MATS => {
                let net = self.mats.as_ref().ok_or_else(|| Error::invalid("missing MATS state"))?;
                self.tasks
                    .iter()
                    .map(|t| {
                        let f = features
                            .get(t)
                            .ok_or_else(|| Error::invalid(format!("no task feature for {t}")))?;
                        net.weight(&f.normalized)
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(Some)
            }
            _ => Ok(None),
        }
    }
}

/// Outcome of evaluating a strategy objective on grouped task losses.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub objective: f64,
    /// `∂objective/∂L_t` in the order of the input losses.
    pub loss_coefficients: Vec<f64>,
    /// Gradient w.r.t. the strategy's own parameters: log-weights for HUW
    /// (indexed like `state.tasks`), φ for MATS, empty otherwise.
    pub weight_grad: Vec<f64>,
    /// Weight applied to each input loss (1 for unweighted strategies).
    pub weights: Vec<f64>,
}

/// Objective for one batch. `per_task_losses` holds the mean loss of each
/// task present in the batch.
pub fn strategy_batch_loss(
    kind: StrategyKind,
    per_task_losses: &[(Task, f64)],
    state: &StrategyState,
    features: &BTreeMap<Task, TaskFeature>,
) -> Result<BatchLoss> {
    if per_task_losses.is_empty() {
        return Err(Error::Empty("task losses"));
    }
    let losses: Vec<f64> = per_task_losses.iter().map(|(_, l)| *l).collect();
    if kind.is_scheduled() {
        let active = schedule_active_tasks(kind, state.stage)?;
        if let Some((t, _)) = per_task_losses.iter().find(|(t, _)| !active.contains(t)) {
            return Err(Error::ScheduleViolation {
                task: *t,
                stage: state.stage,
            });
        }
    }
    let index = |t: Task| {
        state
            .task_index(t)
            .ok_or_else(|| Error::invalid(format!("task {t} is not part of the strategy state")))
    };
    match kind {
        StrategyKind::ST | StrategyKind::TT | StrategyKind::MIX | StrategyKind::CL | StrategyKind::G2S => {
            let objective = average_sum_loss(&losses)?;
            let c = 1.0 / losses.len() as f64;
            Ok(BatchLoss {
                objective,
                loss_coefficients: vec![c; losses.len()],
                weight_grad: Vec::new(),
                weights: vec![1.0; losses.len()],
            })
        }
        StrategyKind::HUW => {
            let huw = state.huw.as_ref().ok_or_else(|| Error::invalid("missing HUW state"))?;
            let all = huw.weights();
            let mut weights = Vec::with_capacity(losses.len());
            let mut weight_grad = vec![0.0; all.len()];
            for (t, l) in per_task_losses {
                let i = index(*t)?;
                weights.push(all[i]);
                weight_grad[i] += l * all[i] - 1.0;
            }
            let objective = huw_objective(&losses, &weights)?;
            Ok(BatchLoss {
                objective,
                loss_coefficients: weights.clone(),
                weight_grad,
                weights,
            })
        }
        StrategyKind::MATS => {
            let net = state.mats.as_ref().ok_or_else(|| Error::invalid("missing MATS state"))?;
            let feats = per_task_losses
                .iter()
                .map(|(t, _)| {
                    features
                        .get(t)
                        .map(|f| f.normalized.as_slice())
                        .ok_or_else(|| Error::invalid(format!("no task feature for {t}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let (objective, weight_grad, weights) = net.objective(&losses, &feats)?;
            Ok(BatchLoss {
                objective,
                loss_coefficients: weights.clone(),
                weight_grad,
                weights,
            })
        }
        StrategyKind::GRADNORM => {
            let gn = state
                .gradnorm
                .as_ref()
                .ok_or_else(|| Error::invalid("missing GradNorm state"))?;
            let mut weights = Vec::with_capacity(losses.len());
            for (t, _) in per_task_losses {
                weights.push(gn.weights[index(*t)?]);
            }
            let objective = losses.iter().zip(&weights).map(|(l, w)| l * w).sum::<f64>();
            if !objective.is_finite() {
                return Err(Error::NonFinite("GradNorm objective".into()));
            }
            Ok(BatchLoss {
                objective,
                loss_coefficients: weights.clone(),
                weight_grad: Vec::new(),
                weights,
            })
        }
    }
}
