use std::collections::BTreeMap;

use proptest::prelude::*;
use unidu_core::strategies::{
    schedule_active_tasks, stage_for_epoch, strategy_batch_loss, StrategyKind, StrategyState, TaskFeature,
    FEATURE_DIM,
};
use unidu_core::{Error, Task};

fn features(seed: u64) -> BTreeMap<Task, TaskFeature> {
    Task::ALL
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let mut f = [0.0; FEATURE_DIM];
            for (k, x) in f.iter_mut().enumerate() {
                *x = (((seed as usize + 7 * i + 3 * k) % 11) as f64 - 5.0) / 3.0;
            }
            (t, TaskFeature { raw: f, normalized: f })
        })
        .collect()
}

fn losses_strategy() -> impl Strategy<Value = Vec<(Task, f64)>> {
    prop::sample::subsequence(Task::ALL.to_vec(), 1..=5)
        .prop_flat_map(|ts| {
            let n = ts.len();
            (Just(ts), prop::collection::vec(0.05f64..5.0, n))
        })
        .prop_map(|(ts, ls)| ts.into_iter().zip(ls).collect())
}

#[test]
fn parse_names() {
    for k in StrategyKind::ALL {
        assert_eq!(k.name().parse::<StrategyKind>().unwrap(), k);
        assert_eq!(k.name().to_uppercase().parse::<StrategyKind>().unwrap(), k);
    }
    assert_eq!("hwu".parse::<StrategyKind>().unwrap(), StrategyKind::HUW);
    assert!("nope".parse::<StrategyKind>().is_err());
}

#[test]
fn schedules_grow_and_end_with_every_task() {
    for kind in [StrategyKind::CL, StrategyKind::G2S] {
        let mut prev = schedule_active_tasks(kind, 0).unwrap();
        for s in 1..kind.stage_count() {
            let cur = schedule_active_tasks(kind, s).unwrap();
            assert!(prev.is_subset(&cur));
            prev = cur;
        }
        assert_eq!(prev.len(), 5);
        assert!(schedule_active_tasks(kind, kind.stage_count()).is_err());
    }
    assert!(schedule_active_tasks(StrategyKind::MIX, 0).is_err());
}

#[test]
fn scheduled_strategies_reject_inactive_tasks() {
    let mut state = StrategyState::new(StrategyKind::CL, &Task::ALL, 0);
    let err = strategy_batch_loss(StrategyKind::CL, &[(Task::DS, 1.0)], &state, &BTreeMap::new()).unwrap_err();
    assert!(matches!(err, Error::ScheduleViolation { task: Task::DS, stage: 0 }));
    state.set_stage(2).unwrap();
    assert!(strategy_batch_loss(StrategyKind::CL, &[(Task::DS, 1.0)], &state, &BTreeMap::new()).is_ok());
}

proptest! {
    #[test]
    fn stages_are_monotone_and_cover_the_budget(stages in 1usize..5, epochs in 1usize..60) {
        let seq: Vec<usize> = (0..epochs).map(|e| stage_for_epoch(stages, e, epochs)).collect();
        prop_assert_eq!(seq[0], 0);
        prop_assert!(seq.windows(2).all(|w| w[0] <= w[1] && w[1] - w[0] <= 1));
        prop_assert!(seq.iter().all(|s| *s < stages));
        if epochs >= stages {
            prop_assert_eq!(*seq.last().unwrap(), stages - 1);
            // Equal splits: stage lengths differ by at most one.
            let lens: Vec<usize> = (0..stages).map(|s| seq.iter().filter(|x| **x == s).count()).collect();
            prop_assert!(lens.iter().max().unwrap() - lens.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn loss_coefficients_are_objective_derivatives(
        losses in losses_strategy(),
        kind in prop::sample::select(vec![StrategyKind::MIX, StrategyKind::HUW, StrategyKind::MATS, StrategyKind::GRADNORM]),
        seed in 0u64..50,
    ) {
        let mut state = StrategyState::new(kind, &Task::ALL, seed);
        if let Some(h) = state.huw.as_mut() {
            for (i, w) in h.log_weights.iter_mut().enumerate() {
                *w = 0.1 * i as f64 - 0.2;
            }
        }
        let feats = features(seed);
        let out = strategy_batch_loss(kind, &losses, &state, &feats).unwrap();
        prop_assert_eq!(out.loss_coefficients.len(), losses.len());
        let h = 1e-6;
        for i in 0..losses.len() {
            let mut up = losses.clone();
            up[i].1 += h;
            let mut down = losses.clone();
            down[i].1 -= h;
            let fd = (strategy_batch_loss(kind, &up, &state, &feats).unwrap().objective
                - strategy_batch_loss(kind, &down, &state, &feats).unwrap().objective) / (2.0 * h);
            prop_assert!((fd - out.loss_coefficients[i]).abs() < 1e-6, "{} vs {}", fd, out.loss_coefficients[i]);
        }
        if kind == StrategyKind::HUW {
            for j in 0..5 {
                let mut s = state.clone();
                s.huw.as_mut().unwrap().log_weights[j] += h;
                let up = strategy_batch_loss(kind, &losses, &s, &feats).unwrap().objective;
                s.huw.as_mut().unwrap().log_weights[j] -= 2.0 * h;
                let down = strategy_batch_loss(kind, &losses, &s, &feats).unwrap().objective;
                prop_assert!(((up - down) / (2.0 * h) - out.weight_grad[j]).abs() < 1e-6);
            }
        }
    }
}
