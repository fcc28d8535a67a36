use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use unidu_core::corpus::{generate_synthetic_corpus, load_corpus, Corpus, CorpusStats, OntologySize};
use unidu_core::metrics::MetricsReport;
use unidu_core::model::Checkpoint;
use unidu_core::strategies::{compute_task_features, features_to_json, StrategyKind};
use unidu_core::trainer::{self, select_checkpoint, RunLog, TrainConfig};
use unidu_core::unify::{serialize_corpus, write_records, FormatVariant, SerializeMode};
use unidu_core::{Role, Split, Task};

const STRATEGY_HELP: &str = "Training strategies:
  st        single task: train on one evaluated corpus only
  tt        two-stage transfer: auxiliary corpus first, then the evaluated corpus
  mix       mix all training samples from every corpus together
  cl        curriculum: utterance-level, then turn-level, then dialogue-level tasks
  g2s       general to specific: domain-independent tasks first, then all tasks
  gradnorm  balance per-task gradient norms by adapting loss weights
  huw       learn one uncertainty weight per task
  mats      weights produced by a shared network over task features";

/// Argument problem detected after parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(name = "unidu", version, about = "Unified generative dialogue understanding", after_help = STRATEGY_HELP)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum Variant {
    Qa,
    Prefix,
}

impl From<Variant> for FormatVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Qa => FormatVariant::QA,
            Variant::Prefix => FormatVariant::PREFIX,
        }
    }
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum Strategy {
    St,
    Tt,
    Mix,
    Cl,
    G2s,
    Gradnorm,
    Huw,
    Mats,
}

impl From<Strategy> for StrategyKind {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::St => StrategyKind::ST,
            Strategy::Tt => StrategyKind::TT,
            Strategy::Mix => StrategyKind::MIX,
            Strategy::Cl => StrategyKind::CL,
            Strategy::G2s => StrategyKind::G2S,
            Strategy::Gradnorm => StrategyKind::GRADNORM,
            Strategy::Huw => StrategyKind::HUW,
            Strategy::Mats => StrategyKind::MATS,
        }
    }
}

#[derive(Debug, Args)]
struct SeedArg {
    /// Seed for all randomness; overrides the config file. Read from UNIDU_SEED when the flag is absent.
    #[arg(long, env = "UNIDU_SEED")]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate corpus files and print a summary.
    Ingest {
        #[arg(long, num_args = 1.., required = true)]
        corpus: Vec<PathBuf>,
        /// Expected task of every corpus.
        #[arg(long)]
        task: Option<Task>,
        /// Write the (single) validated corpus back out in canonical form.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a seeded synthetic corpus.
    Synth {
        #[arg(long)]
        task: Task,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[command(flatten)]
        seed: SeedArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        domains: usize,
        #[arg(long, default_value_t = 3)]
        slots: usize,
        #[arg(long, default_value_t = 2)]
        intents: usize,
        #[arg(long, value_parser = parse_role, default_value = "EVAL")]
        role: Role,
        #[arg(long, value_parser = parse_split, default_value = "TRAIN")]
        split: Split,
    },
    /// Serialize a corpus into unified records (JSON Lines).
    Serialize {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "qa")]
        variant: Variant,
        #[command(flatten)]
        seed: SeedArg,
        /// Evaluation mode: query every slot, no negative subsampling.
        #[arg(long)]
        eval: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute 14-dimension task features from training corpora.
    Features {
        #[arg(long, num_args = 1.., required = true)]
        corpus: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "qa")]
        variant: Variant,
        #[command(flatten)]
        seed: SeedArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoint.bin, runlog.jsonl and report.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        strategy: Option<Strategy>,
        #[arg(long, value_enum)]
        variant: Option<Variant>,
        #[command(flatten)]
        seed: SeedArg,
        /// Extra corpora appended to the configured roster.
        #[arg(long, num_args = 1..)]
        corpus: Vec<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Report path (default: <out>/report.json).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on corpora.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        corpus: Vec<PathBuf>,
        /// Defaults to the variant the checkpoint was trained with.
        #[arg(long, value_enum)]
        variant: Option<Variant>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Continue training a checkpoint on a seeded fraction of one corpus.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
        /// Training settings (epochs, batch, learning rate).
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        seed: SeedArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print metric reports, or select the best epoch of a run log.
    Report {
        #[arg(long, num_args = 1..)]
        report: Vec<PathBuf>,
        #[arg(long)]
        runlog: Option<PathBuf>,
        /// Selection criterion for --runlog: overall, a task, or task.metric.
        #[arg(long, default_value = "overall")]
        criterion: String,
    },
}

fn parse_role(s: &str) -> std::result::Result<Role, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_uppercase())).map_err(|_| format!("unknown role {s:?}"))
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_uppercase())).map_err(|_| format!("unknown split {s:?}"))
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("no such file: {}", path.display())));
    }
    Ok(())
}

fn require_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => {
            Err(usage(format!("output directory does not exist: {}", p.display())))
        }
        _ => Ok(()),
    }
}

fn load_all(paths: &[PathBuf], task: Option<Task>) -> Result<Vec<Corpus>> {
    paths.iter().try_for_each(|p| require_file(p))?;
    paths
        .iter()
        .map(|p| load_corpus(p, task).with_context(|| format!("loading {}", p.display())))
        .collect()
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { corpus, task, out } => ingest(&corpus, task, out.as_deref()),
        Command::Synth {
            task,
            n,
            seed,
            out,
            domains,
            slots,
            intents,
            role,
            split,
        } => {
            require_parent(&out)?;
            let size = OntologySize {
                domains,
                slots_per_domain: slots,
                intents_per_domain: intents,
            };
            let mut c = generate_synthetic_corpus(seed.seed.unwrap_or(0), task, n, size)?;
            c.role = role;
            c.split = split;
            c.write(&out)?;
            Ok(())
        }
        Command::Serialize {
            corpus,
            variant,
            seed,
            eval,
            out,
        } => {
            require_parent(&out)?;
            let c = load_all(&[corpus], None)?.remove(0);
            let mode = if eval {
                SerializeMode::Eval
            } else {
                SerializeMode::Train {
                    seed: seed.seed.unwrap_or(0),
                }
            };
            let records = serialize_corpus(&c, variant.into(), mode)?;
            write_records(&records, &out)?;
            Ok(())
        }
        Command::Features {
            corpus,
            variant,
            seed,
            out,
        } => features(&corpus, variant.into(), seed.seed.unwrap_or(0), &out),
        Command::Train {
            config,
            strategy,
            variant,
            seed,
            corpus,
            out,
            report,
        } => train(&config, strategy, variant, seed.seed, &corpus, &out, report.as_deref()),
        Command::Eval {
            checkpoint,
            corpus,
            variant,
            report,
        } => eval(&checkpoint, &corpus, variant, &report),
        Command::Finetune {
            checkpoint,
            corpus,
            fraction,
            config,
            seed,
            out,
        } => {
            require_file(&checkpoint)?;
            require_parent(&out)?;
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(usage(format!("--fraction must be in (0, 1], got {fraction}")));
            }
            let mut cfg = match &config {
                Some(p) => {
                    require_file(p)?;
                    TrainConfig::load(p)?
                }
                None => TrainConfig::new(StrategyKind::ST),
            };
            if let Some(s) = seed.seed {
                cfg.seed = s;
            }
            let c = load_all(&[corpus], None)?.remove(0);
            let ck = Checkpoint::load(&checkpoint)?;
            let tuned = trainer::finetune(&ck, &c, fraction, &cfg)?;
            tuned.save(&out)?;
            Ok(())
        }
        Command::Report {
            report,
            runlog,
            criterion,
        } => {
            if report.is_empty() && runlog.is_none() {
                return Err(usage("report needs --report or --runlog"));
            }
            for p in &report {
                require_file(p)?;
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                let r = MetricsReport::from_json(&text)?;
                println!("{}", p.display());
                print!("{}", r.to_text());
            }
            if let Some(p) = runlog {
                require_file(&p)?;
                let log = RunLog::read(&p)?;
                let epoch = select_checkpoint(&log, &criterion)?;
                println!("best epoch by {criterion}: {epoch}");
            }
            Ok(())
        }
    }
}

fn ingest(paths: &[PathBuf], task: Option<Task>, out: Option<&Path>) -> Result<()> {
    if let Some(o) = out {
        if paths.len() != 1 {
            return Err(usage("--out takes exactly one --corpus"));
        }
        require_parent(o)?;
    }
    let corpora = load_all(paths, task)?;
    for c in &corpora {
        println!(
            "{}\t{}\t{:?}\t{:?}\t{} dialogues\t{} domains",
            c.name,
            c.task,
            c.role,
            c.split,
            c.dialogues.len(),
            c.ontology.domains.len()
        );
    }
    if let Some(o) = out {
        corpora[0].write(o)?;
    }
    Ok(())
}

fn features(paths: &[PathBuf], variant: FormatVariant, seed: u64, out: &Path) -> Result<()> {
    require_parent(out)?;
    let corpora = load_all(paths, None)?;
    let mut by_task: BTreeMap<Task, Vec<_>> = BTreeMap::new();
    for c in &corpora {
        let records = serialize_corpus(c, variant, SerializeMode::Train { seed })?;
        by_task.entry(c.task).or_default().extend(records);
    }
    let tasks: Vec<Task> = by_task.keys().copied().collect();
    let stats = by_task
        .values()
        .map(|r| CorpusStats::from_records(r))
        .collect::<unidu_core::Result<Vec<_>>>()?;
    let feats = compute_task_features(&stats)?;
    fs::write(out, features_to_json(&tasks, &feats) + "\n").with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn train(
    config: &Path,
    strategy: Option<Strategy>,
    variant: Option<Variant>,
    seed: Option<u64>,
    extra: &[PathBuf],
    out: &Path,
    report: Option<&Path>,
) -> Result<()> {
    require_file(config)?;
    let mut cfg = TrainConfig::load(config)?;
    if let Some(s) = strategy {
        cfg.strategy = s.into();
    }
    if let Some(v) = variant {
        cfg.variant = v.into();
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let base = config.parent().unwrap_or(Path::new("."));
    let mut corpora = Vec::new();
    for entry in &cfg.roster {
        let path = resolve(base, &entry.path);
        let mut c = load_all(&[path], None)?.remove(0);
        if let Some(r) = entry.role {
            c.role = r;
        }
        if let Some(s) = entry.split {
            c.split = s;
        }
        corpora.push(c);
    }
    corpora.extend(load_all(extra, None)?);
    if corpora.is_empty() {
        return Err(usage("the roster is empty; list corpora in the config or pass --corpus"));
    }
    if out.exists() && !out.is_dir() {
        return Err(usage(format!("--out must be a directory: {}", out.display())));
    }
    let outcome = trainer::train(&cfg, &corpora)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    outcome.checkpoint.save(out.join("checkpoint.bin"))?;
    outcome.log.write(out.join("runlog.jsonl"))?;
    for (criterion, (_, ck)) in &outcome.best {
        ck.save(out.join(format!("best-{criterion}.bin")))?;
    }
    let mut final_report = outcome
        .log
        .entries
        .last()
        .and_then(|e| e.dev.clone())
        .unwrap_or_default();
    final_report.checkpoint = Some(outcome.checkpoint.fingerprint());
    final_report.config = Some(format!("{:016x}", unidu_core::fnv1a(cfg.to_json().as_bytes())));
    let report_path = report.map(Path::to_path_buf).unwrap_or_else(|| out.join("report.json"));
    final_report.write(&report_path)?;
    Ok(())
}

fn eval(checkpoint: &Path, corpora: &[PathBuf], variant: Option<Variant>, report: &Path) -> Result<()> {
    require_file(checkpoint)?;
    require_parent(report)?;
    let corpora = load_all(corpora, None)?;
    let ck = Checkpoint::load(checkpoint)?;
    let variant = variant.map(Into::into).unwrap_or(ck.meta.variant);
    let mut merged: BTreeMap<Task, Corpus> = BTreeMap::new();
    for c in corpora {
        match merged.get_mut(&c.task) {
            Some(m) => m.dialogues.extend(c.dialogues),
            None => {
                merged.insert(c.task, c);
            }
        }
    }
    let mut out = MetricsReport::new();
    for (task, c) in &merged {
        let r = trainer::evaluate(&ck, c, variant)?;
        out.insert(*task, r.tasks[task].clone())?;
    }
    out.checkpoint = Some(ck.fingerprint());
    out.write(report)?;
    print!("{}", out.to_text());
    Ok(())
}
