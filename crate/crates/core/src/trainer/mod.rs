//! Multitask training loop, evaluation, few-shot finetuning and checkpoint
//! selection.

mod config;
mod evaluate;
mod runlog;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{RosterEntry, TrainConfig};
pub use evaluate::{evaluate, evaluate_max_new, exact_match_rate, predict, score_task, Predictions};
pub use runlog::{select_checkpoint, EpochLog, RunLog};

use crate::corpus::{split_by_id_hash, Corpus, CorpusStats};
use crate::metrics::{main_metric_name, MetricsReport};
use crate::model::{
    AdamState, Checkpoint, CheckpointMeta, Gradients, Parameters, Scalar, Vocab, Weights,
};
use crate::strategies::{
    compute_task_features, gradnorm_step, schedule_active_tasks, stage_for_epoch,
    strategy_batch_loss, StrategyKind, StrategyState, TaskFeature,
};
use crate::unify::{serialize_corpus, FormatVariant, Polarity, SerializeMode, UnifiedRecord};
use crate::{Error, Result, Role, Split, Task};

const DROPOUT_STREAM: u64 = 0x5DEE_CE66_D1CE_0001;
const MATS_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

/// Result of a training run.
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Best checkpoint per criterion (`overall` and every dev task), with the
    /// epoch it came from.
    pub best: BTreeMap<String, (usize, Checkpoint)>,
    pub log: RunLog,
}

/// A training record with its source corpus and token ids.
struct Item {
    corpus: usize,
    task: Task,
    role: Role,
    input: Vec<u32>,
    target: Vec<u32>,
}

fn encode(vocab: &Vocab, r: &UnifiedRecord, corpus: usize, role: Role) -> Item {
    Item {
        corpus,
        task: r.task,
        role,
        input: vocab.tokenize(&r.input_text),
        target: vocab.tokenize(&r.target_text),
    }
}

/// Per-task gradient sums over an accumulation window.
struct Window<T> {
    grads: Vec<Option<Gradients<T>>>,
    loss_sums: Vec<f64>,
    counts: Vec<usize>,
    micro_batches: usize,
}

impl<T: Scalar> Window<T> {
    fn new(tasks: usize) -> Self {
        Window {
            grads: (0..tasks).map(|_| None).collect(),
            loss_sums: vec![0.0; tasks],
            counts: vec![0; tasks],
            micro_batches: 0,
        }
    }

    fn is_empty(&self) -> bool {
        self.counts.iter().all(|c| *c == 0)
    }

    fn clear(&mut self) {
        for g in self.grads.iter_mut().flatten() {
            g.fill_zero();
        }
        self.loss_sums.iter_mut().for_each(|x| *x = 0.0);
        self.counts.iter_mut().for_each(|x| *x = 0);
        self.micro_batches = 0;
    }
}

/// Mutable state of one run: model, optimizers and strategy.
struct Session<'a, T> {
    cfg: &'a TrainConfig,
    kind: StrategyKind,
    params: Parameters<T>,
    adam: AdamState,
    state: StrategyState,
    weight_adam: Option<AdamState>,
    features: BTreeMap<Task, TaskFeature>,
    shuffle_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    updates: u64,
}

impl<'a, T: Scalar> Session<'a, T> {
    fn new(
        cfg: &'a TrainConfig,
        kind: StrategyKind,
        params: Parameters<T>,
        tasks: &[Task],
        features: BTreeMap<Task, TaskFeature>,
    ) -> Self {
        let mut state = StrategyState::new(kind, tasks, cfg.seed ^ MATS_STREAM);
        if let Some(gn) = state.gradnorm.as_mut() {
            gn.alpha = cfg.gradnorm_alpha;
        }
        let weight_adam = match kind {
            StrategyKind::HUW => Some(AdamState::new(state.tasks.len())),
            StrategyKind::MATS => Some(AdamState::new(crate::strategies::MATS_PARAMS)),
            _ => None,
        };
        let n = params.data.len();
        Session {
            cfg,
            kind,
            params,
            adam: AdamState::new(n),
            state,
            weight_adam,
            features,
            shuffle_rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            dropout_rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ DROPOUT_STREAM),
            updates: 0,
        }
    }

    fn current_weights(&self) -> Result<Option<BTreeMap<Task, f64>>> {
        Ok(self
            .state
            .weights(&self.features)?
            .map(|w| self.state.tasks.iter().copied().zip(w).collect()))
    }

    /// One pass over `pool` in a seeded shuffled order.
    fn run_epoch(&mut self, items: &[Item], pool: &[usize], names: &[String], log: &mut EpochLog) -> Result<()> {
        let mut order = pool.to_vec();
        order.shuffle(&mut self.shuffle_rng);
        let mut window = Window::<T>::new(self.state.tasks.len());
        let track_weights = self.kind.has_weights();
        let mut trajectory = Vec::new();
        for batch in order.chunks(self.cfg.batch_size) {
            for &i in batch {
                let item = &items[i];
                let t = self
                    .state
                    .task_index(item.task)
                    .ok_or_else(|| Error::invalid(format!("task {} has no strategy slot", item.task)))?;
                let rng: Option<&mut dyn RngCore> = if self.cfg.model.dropout > 0.0 {
                    Some(&mut self.dropout_rng)
                } else {
                    None
                };
                let (loss, cache) = self.params.forward_loss(&item.input, &item.target, rng)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss at update {} (record from {})",
                        self.updates + 1,
                        names[item.corpus]
                    )));
                }
                let layout = self.params.layout().clone();
                let g = window.grads[t].get_or_insert_with(|| Gradients::zeros(layout));
                self.params.backward_into(&cache, T::one(), g);
                window.loss_sums[t] += loss;
                window.counts[t] += 1;
                *log.consumed.entry(names[item.corpus].clone()).or_default() += 1;
                *log.consumed_tasks.entry(item.task).or_default() += 1;
            }
            window.micro_batches += 1;
            if window.micro_batches == self.cfg.grad_accumulation_steps {
                let objective = self.apply(&window)?;
                log.objectives.push(objective);
                window.clear();
                if track_weights {
                    trajectory.push(self.current_weights()?.unwrap_or_default());
                }
            }
        }
        if !window.is_empty() {
            let objective = self.apply(&window)?;
            log.objectives.push(objective);
            if track_weights {
                trajectory.push(self.current_weights()?.unwrap_or_default());
            }
        }
        if track_weights {
            log.weights = Some(trajectory);
        }
        log.updates = self.updates;
        Ok(())
    }

    /// Forms the strategy objective from the window's task means and applies
    /// one optimizer update. Returns the objective.
    fn apply(&mut self, window: &Window<T>) -> Result<f64> {
        let step = self.updates + 1;
        let present: Vec<usize> = (0..window.counts.len()).filter(|&t| window.counts[t] > 0).collect();
        let losses: Vec<(Task, f64)> = present
            .iter()
            .map(|&t| (self.state.tasks[t], window.loss_sums[t] / window.counts[t] as f64))
            .collect();
        let out = strategy_batch_loss(self.kind, &losses, &self.state, &self.features)?;
        if !out.objective.is_finite() {
            return Err(Error::NonFinite(format!("objective at update {step}")));
        }
        let mut total = Gradients::<T>::zeros(self.params.layout().clone());
        for (k, &t) in present.iter().enumerate() {
            let g = window.grads[t].as_ref().expect("task with records has gradients");
            total.add_scaled(g, T::from_f64(out.loss_coefficients[k] / window.counts[t] as f64));
        }
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("gradient at update {step}")));
        }
        self.adam.step(&mut self.params.data, &total.data, self.cfg.lr_model)?;

        match self.kind {
            StrategyKind::HUW => {
                let huw = self.state.huw.as_mut().expect("HUW state");
                let adam = self.weight_adam.as_mut().expect("HUW optimizer");
                adam.step(&mut huw.log_weights, &out.weight_grad, self.cfg.lr_weights)?;
            }
            StrategyKind::MATS => {
                let net = self.state.mats.as_mut().expect("MATS state");
                let adam = self.weight_adam.as_mut().expect("MATS optimizer");
                adam.step(&mut net.phi, &out.weight_grad, self.cfg.lr_weights)?;
            }
            StrategyKind::GRADNORM if present.len() == self.state.tasks.len() => {
                let layout = self.params.layout().clone();
                let arrays = layout.last_encoder_layer();
                let norms: Vec<f64> = present
                    .iter()
                    .map(|&t| {
                        let g = window.grads[t].as_ref().expect("gradients");
                        g.norm_over(&arrays) / window.counts[t] as f64
                    })
                    .collect();
                let current: Vec<f64> = losses.iter().map(|(_, l)| *l).collect();
                let gn = self.state.gradnorm.as_mut().expect("GradNorm state");
                let initial = gn.initial_losses.get_or_insert_with(|| current.clone()).clone();
                let upd = gradnorm_step(&gn.weights, &norms, &initial, &current, gn.alpha, self.cfg.lr_weights)?;
                gn.weights = upd.weights;
            }
            _ => {}
        }
        self.updates = step;
        Ok(out.objective)
    }
}

fn check_roster(kind: StrategyKind, train: &[&Corpus]) -> Result<()> {
    let evals: Vec<&&Corpus> = train.iter().filter(|c| c.role == Role::EVAL).collect();
    let auxes: Vec<&&Corpus> = train.iter().filter(|c| c.role == Role::AUX).collect();
    match kind {
        StrategyKind::ST => {
            if evals.len() != 1 {
                return Err(Error::Roster(format!(
                    "ST trains on exactly one EVAL corpus, found {}",
                    evals.len()
                )));
            }
        }
        StrategyKind::TT => {
            if evals.is_empty() || auxes.is_empty() {
                return Err(Error::Roster("TT needs an EVAL and an AUX corpus".into()));
            }
            let task = evals[0].task;
            if let Some(c) = train.iter().find(|c| c.task != task) {
                return Err(Error::Roster(format!(
                    "TT corpora must share one task; {} is {} but {} is {}",
                    evals[0].name, task, c.name, c.task
                )));
            }
        }
        _ => {
            if train.is_empty() {
                return Err(Error::Roster("no training corpora".into()));
            }
        }
    }
    Ok(())
}

/// Corpora used for training and for dev evaluation.
fn partition(cfg: &TrainConfig, corpora: &[Corpus]) -> (Vec<Corpus>, Vec<Corpus>) {
    let mut train = Vec::new();
    let mut dev = Vec::new();
    for c in corpora {
        match c.split {
            Split::TRAIN if cfg.holdout => {
                let (tr, dv, _) = split_by_id_hash(c);
                train.push(tr);
                dev.push(dv);
            }
            Split::TRAIN => train.push(c.clone()),
            Split::DEV => dev.push(c.clone()),
            Split::TEST => log::info!("ignoring test corpus {} during training", c.name),
        }
    }
    dev.retain(|c| !c.dialogues.is_empty());
    (train, dev)
}

fn task_features(records: &[(usize, UnifiedRecord)], tasks: &[Task]) -> Result<BTreeMap<Task, TaskFeature>> {
    let mut stats: Vec<CorpusStats> = Vec::new();
    for t in tasks {
        let rs: Vec<UnifiedRecord> = records
            .iter()
            .filter(|(_, r)| r.task == *t)
            .map(|(_, r)| r.clone())
            .collect();
        stats.push(CorpusStats::from_records(&rs)?);
    }
    let feats = compute_task_features(&stats)?;
    Ok(tasks.iter().copied().zip(feats).collect())
}

fn criterion_values(report: &MetricsReport) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    if let Some(o) = report.overall {
        out.push(("overall".to_string(), o));
    }
    for (task, m) in &report.tasks {
        if let Some(v) = m.main(*task) {
            out.push((format!("{}.{}", task, main_metric_name(*task)), v));
        }
    }
    out
}

fn make_checkpoint<T: Scalar>(
    vocab: &Vocab,
    params: &Parameters<T>,
    wrap: fn(Parameters<T>) -> Weights,
    session_state: Option<&StrategyState>,
    meta: CheckpointMeta,
) -> Checkpoint {
    let mut ck = Checkpoint::new(vocab.clone(), wrap(params.clone()));
    ck.strategy_state = session_state.map(|s| serde_json::to_value(s).expect("state serializes"));
    ck.meta = meta;
    ck
}

/// Trains a fresh model under `cfg.strategy` on the TRAIN corpora; DEV
/// corpora (or hash-split holdouts) are evaluated every `eval_every` epochs.
pub fn train(cfg: &TrainConfig, corpora: &[Corpus]) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_set, dev_set) = partition(cfg, corpora);
    let train_refs: Vec<&Corpus> = train_set.iter().collect();
    check_roster(cfg.strategy, &train_refs)?;
    let kind = cfg.strategy;

    // ST ignores auxiliary corpora.
    let used: Vec<usize> = (0..train_set.len())
        .filter(|&i| kind != StrategyKind::ST || train_set[i].role == Role::EVAL)
        .collect();
    let mut records = Vec::new();
    for &i in &used {
        let rs = serialize_corpus(&train_set[i], cfg.variant, SerializeMode::Train { seed: cfg.negative_seed() })?;
        records.extend(rs.into_iter().map(|r| (i, r)));
    }
    if records.is_empty() {
        return Err(Error::Roster("training corpora produce no records".into()));
    }
    let plain: Vec<UnifiedRecord> = records.iter().map(|(_, r)| r.clone()).collect();
    let vocab = Vocab::build(&plain, cfg.min_freq)?;
    let tasks: Vec<Task> = records.iter().map(|(_, r)| r.task).collect::<BTreeSet<_>>().into_iter().collect();
    let features = if kind == StrategyKind::MATS {
        if tasks.len() < 2 {
            return Err(Error::Roster("MATS needs at least two tasks".into()));
        }
        task_features(&records, &tasks)?
    } else {
        BTreeMap::new()
    };
    let items: Vec<Item> = records
        .iter()
        .map(|(i, r)| encode(&vocab, r, *i, train_set[*i].role))
        .collect();
    let names: Vec<String> = train_set.iter().map(|c| c.name.clone()).collect();
    let weights = Weights::init(&cfg.model, vocab.len(), cfg.seed)?;
    let dev_set = if dev_set.is_empty() && cfg.eval_every > 0 {
        used.iter()
            .map(|&i| &train_set[i])
            .filter(|c| c.role == Role::EVAL)
            .cloned()
            .collect()
    } else {
        dev_set
    };
    match weights {
        Weights::Single(p) => run(cfg, kind, p, Weights::Single, vocab, &tasks, features, &items, &names, &dev_set),
        Weights::Double(p) => run(cfg, kind, p, Weights::Double, vocab, &tasks, features, &items, &names, &dev_set),
    }
}

fn active_pool(kind: StrategyKind, stage: usize, items: &[Item]) -> Result<Vec<usize>> {
    let keep: Box<dyn Fn(&Item) -> bool> = match kind {
        StrategyKind::CL | StrategyKind::G2S => {
            let active = schedule_active_tasks(kind, stage)?;
            Box::new(move |it: &Item| active.contains(&it.task))
        }
        StrategyKind::TT if stage == 0 => Box::new(|it: &Item| it.role == Role::AUX),
        StrategyKind::TT => Box::new(|it: &Item| it.role == Role::EVAL),
        _ => Box::new(|_: &Item| true),
    };
    Ok((0..items.len()).filter(|&i| keep(&items[i])).collect())
}

#[allow(clippy::too_many_arguments)]
fn run<T: Scalar>(
    cfg: &TrainConfig,
    kind: StrategyKind,
    params: Parameters<T>,
    wrap: fn(Parameters<T>) -> Weights,
    vocab: Vocab,
    tasks: &[Task],
    features: BTreeMap<Task, TaskFeature>,
    items: &[Item],
    names: &[String],
    dev: &[Corpus],
) -> Result<TrainOutcome> {
    let mut session = Session::new(cfg, kind, params, tasks, features);
    let mut log = RunLog::default();
    let mut best: BTreeMap<String, (usize, f64, Checkpoint)> = BTreeMap::new();
    let stages = kind.stage_count();
    let meta = |epoch: usize, step: u64| CheckpointMeta {
        seed: cfg.seed,
        epoch,
        step,
        strategy: Some(kind.name().to_string()),
        variant: cfg.variant,
    };
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let stage = stage_for_epoch(stages, epoch - 1, cfg.epochs);
        session.state.set_stage(stage)?;
        let pool = active_pool(kind, stage, items)?;
        let mut entry = EpochLog {
            epoch,
            stage,
            ..Default::default()
        };
        if pool.is_empty() {
            log::warn!("epoch {epoch}: no records active at stage {stage}");
        }
        session.run_epoch(items, &pool, names, &mut entry)?;
        if cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) && !dev.is_empty() {
            let mut report = MetricsReport::new();
            for task in dev.iter().map(|c| c.task).collect::<BTreeSet<_>>() {
                let group: Vec<&Corpus> = dev.iter().filter(|c| c.task == task).collect();
                let m = evaluate_group(&session.params, &vocab, &group, cfg.variant, cfg.max_new)?;
                report.insert(task, m)?;
            }
            for (name, v) in criterion_values(&report) {
                let better = best.get(&name).is_none_or(|(_, b, _)| v > *b);
                if better {
                    let ck = make_checkpoint(&vocab, &session.params, wrap, Some(&session.state), meta(epoch, session.updates));
                    best.insert(name, (epoch, v, ck));
                }
            }
            log::info!("epoch {epoch}: dev overall {:?}", report.overall);
            entry.dev = Some(report);
        }
        if cfg.record_wall_clock {
            entry.wall_clock_secs = Some(started.elapsed().as_secs_f64());
        }
        log::debug!(
            "epoch {epoch}: {} updates, last objective {:?}",
            entry.objectives.len(),
            entry.objectives.last()
        );
        log.entries.push(entry);
    }
    let checkpoint = make_checkpoint(
        &vocab,
        &session.params,
        wrap,
        Some(&session.state),
        meta(cfg.epochs, session.updates),
    );
    Ok(TrainOutcome {
        checkpoint,
        best: best.into_iter().map(|(k, (e, _, c))| (k, (e, c))).collect(),
        log,
    })
}

fn evaluate_group<T: Scalar>(
    params: &Parameters<T>,
    vocab: &Vocab,
    group: &[&Corpus],
    variant: FormatVariant,
    max_new: usize,
) -> Result<crate::metrics::TaskMetrics> {
    if let [single] = group {
        return evaluate::evaluate_with(params, vocab, single, variant, max_new);
    }
    let mut merged = group[0].clone();
    for c in &group[1..] {
        merged.dialogues.extend(c.dialogues.iter().cloned());
    }
    evaluate::evaluate_with(params, vocab, &merged, variant, max_new)
}

/// Seeded subsample of `round(fraction * len)` records, stratified by
/// polarity (largest-remainder allocation); original order is kept.
pub fn subsample(records: &[UnifiedRecord], fraction: f64, seed: u64) -> Result<Vec<UnifiedRecord>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("fraction {fraction} is outside (0, 1]")));
    }
    let n = records.len();
    let k = (fraction * n as f64).round() as usize;
    if k == 0 {
        return Err(Error::Empty("few-shot subsample"));
    }
    let mut groups: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let key = match r.polarity {
            Polarity::POSITIVE => 0,
            Polarity::NEGATIVE => 1,
            Polarity::NA => 2,
        };
        groups.entry(key).or_default().push(i);
    }
    let mut alloc: Vec<(u8, usize, f64)> = groups
        .iter()
        .map(|(g, idx)| {
            let exact = k as f64 * idx.len() as f64 / n as f64;
            (*g, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let mut remaining = k - alloc.iter().map(|a| a.1).sum::<usize>();
    let mut by_remainder: Vec<usize> = (0..alloc.len()).collect();
    by_remainder.sort_by(|&a, &b| alloc[b].2.total_cmp(&alloc[a].2).then(a.cmp(&b)));
    for &i in by_remainder.iter().cycle() {
        if remaining == 0 {
            break;
        }
        if alloc[i].1 < groups[&alloc[i].0].len() {
            alloc[i].1 += 1;
            remaining -= 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(k);
    for (g, take, _) in alloc {
        let idx = &groups[&g];
        let picked = rand::seq::index::sample(&mut rng, idx.len(), take);
        chosen.extend(picked.into_iter().map(|p| idx[p]));
    }
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| records[i].clone()).collect())
}

/// Continues training `checkpoint` on a seeded `fraction` of `corpus` under
/// the average-sum objective. Uses the epochs, batch, learning rate and seed
/// of `cfg`.
pub fn finetune(checkpoint: &Checkpoint, corpus: &Corpus, fraction: f64, cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    let variant = checkpoint.meta.variant;
    let records = serialize_corpus(corpus, variant, SerializeMode::Train { seed: cfg.negative_seed() })?;
    let records = subsample(&records, fraction, cfg.seed)?;
    let vocab = checkpoint.vocab.clone();
    let items: Vec<Item> = records.iter().map(|r| encode(&vocab, r, 0, corpus.role)).collect();
    let names = vec![corpus.name.clone()];
    let mut sub = cfg.clone();
    sub.strategy = StrategyKind::ST;
    let pool: Vec<usize> = (0..items.len()).collect();
    let meta = CheckpointMeta {
        seed: cfg.seed,
        epoch: checkpoint.meta.epoch + cfg.epochs,
        step: 0,
        strategy: Some("finetune".into()),
        variant,
    };
    fn go<T: Scalar>(
        cfg: &TrainConfig,
        params: Parameters<T>,
        wrap: fn(Parameters<T>) -> Weights,
        vocab: &Vocab,
        task: Task,
        items: &[Item],
        pool: &[usize],
        names: &[String],
        mut meta: CheckpointMeta,
    ) -> Result<Checkpoint> {
        let mut s = Session::new(cfg, StrategyKind::ST, params, &[task], BTreeMap::new());
        for epoch in 1..=cfg.epochs {
            let mut entry = EpochLog { epoch, ..Default::default() };
            s.run_epoch(items, pool, names, &mut entry)?;
        }
        meta.step = s.updates;
        Ok(make_checkpoint(vocab, &s.params, wrap, None, meta))
    }
    match &checkpoint.weights {
        Weights::Single(p) => go(&sub, p.clone(), Weights::Single, &vocab, corpus.task, &items, &pool, &names, meta),
        Weights::Double(p) => go(&sub, p.clone(), Weights::Double, &vocab, corpus.task, &items, &pool, &names, meta),
    }
}

