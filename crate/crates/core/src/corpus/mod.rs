//! Dialogue data model, the canonical corpus file format, corpus statistics
//! and the seeded synthetic corpus generator.

mod stats;
mod synth;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{Error, Result, Role, Split, Task};

pub use stats::{compute_corpus_stats, count_sentences, CorpusStats};
pub use synth::{generate_synthetic_corpus, split_by_id_hash, OntologySize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speaker {
    USER,
    SYSTEM,
}

impl Speaker {
    pub fn as_str(self) -> &'static str {
        match self {
            Speaker::USER => "USER",
            Speaker::SYSTEM => "SYSTEM",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Turn {
            speaker: Speaker::USER,
            text: text.into(),
        }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Turn {
            speaker: Speaker::SYSTEM,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domain {
    pub name: String,
    #[serde(default)]
    pub slots: Vec<String>,
    #[serde(default)]
    pub intents: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ontology {
    #[serde(default)]
    pub domains: Vec<Domain>,
}

impl Ontology {
    pub fn domain(&self, name: &str) -> Option<&Domain> {
        self.domains.iter().find(|d| d.name == name)
    }

    pub fn has_slot(&self, domain: &str, slot: &str) -> bool {
        self.domain(domain)
            .is_some_and(|d| d.slots.iter().any(|s| s == slot))
    }

    pub fn has_intent(&self, domain: &str, intent: &str) -> bool {
        self.domain(domain)
            .is_some_and(|d| d.intents.iter().any(|s| s == intent))
    }

    /// Every `(domain, slot)` pair in declaration order.
    pub fn slot_pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.domains.iter().flat_map(|d| {
            d.slots
                .iter()
                .map(move |s| (d.name.as_str(), s.as_str()))
        })
    }

    /// Problems with the ontology itself (duplicate or empty names).
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        for d in &self.domains {
            if d.name.trim().is_empty() {
                out.push("empty domain name".to_string());
            }
            if !seen.insert(d.name.as_str()) {
                out.push(format!("duplicate domain `{}`", d.name));
            }
            for (kind, names) in [("slot", &d.slots), ("intent", &d.intents)] {
                let mut local = HashSet::new();
                for n in names {
                    if n.trim().is_empty() {
                        out.push(format!("empty {kind} name in domain `{}`", d.name));
                    }
                    if !local.insert(n.as_str()) {
                        out.push(format!("duplicate {kind} `{n}` in domain `{}`", d.name));
                    }
                }
            }
        }
        out
    }
}

/// One (domain, slot, value) constraint of a dialogue state.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StateTriple(pub String, pub String, pub String);

impl StateTriple {
    pub fn new(domain: impl Into<String>, slot: impl Into<String>, value: impl Into<String>) -> Self {
        StateTriple(domain.into(), slot.into(), value.into())
    }

    pub fn domain(&self) -> &str {
        &self.0
    }

    pub fn slot(&self) -> &str {
        &self.1
    }

    pub fn value(&self) -> &str {
        &self.2
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rewrite {
    pub turn: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotAnnotation {
    pub turn: usize,
    pub domain: String,
    pub slot: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentAnnotation {
    pub turn: usize,
    pub domain: String,
    pub intent: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnState {
    pub turn: usize,
    pub state: BTreeSet<StateTriple>,
}

/// Task-specific labels of a dialogue. The variant must match the corpus task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Annotations {
    DS { summary: String },
    DC { rewrites: Vec<Rewrite> },
    SF { slots: Vec<SlotAnnotation> },
    ID { intents: Vec<IntentAnnotation> },
    DST { states: Vec<TurnState> },
}

impl Annotations {
    pub fn task(&self) -> Task {
        match self {
            Annotations::DS { .. } => Task::DS,
            Annotations::DC { .. } => Task::DC,
            Annotations::SF { .. } => Task::SF,
            Annotations::ID { .. } => Task::ID,
            Annotations::DST { .. } => Task::DST,
        }
    }

    fn turn_indices(&self) -> Vec<usize> {
        match self {
            Annotations::DS { .. } => Vec::new(),
            Annotations::DC { rewrites } => rewrites.iter().map(|r| r.turn).collect(),
            Annotations::SF { slots } => slots.iter().map(|s| s.turn).collect(),
            Annotations::ID { intents } => intents.iter().map(|i| i.turn).collect(),
            Annotations::DST { states } => states.iter().map(|s| s.turn).collect(),
        }
    }

    fn parse(task: Task, value: Value) -> serde_json::Result<Self> {
        #[derive(Deserialize)]
        struct Ds {
            summary: String,
        }
        #[derive(Deserialize)]
        struct Dc {
            rewrites: Vec<Rewrite>,
        }
        #[derive(Deserialize)]
        struct Sf {
            slots: Vec<SlotAnnotation>,
        }
        #[derive(Deserialize)]
        struct Id {
            intents: Vec<IntentAnnotation>,
        }
        #[derive(Deserialize)]
        struct Dst {
            states: Vec<TurnState>,
        }
        Ok(match task {
            Task::DS => Annotations::DS {
                summary: serde_json::from_value::<Ds>(value)?.summary,
            },
            Task::DC => Annotations::DC {
                rewrites: serde_json::from_value::<Dc>(value)?.rewrites,
            },
            Task::SF => Annotations::SF {
                slots: serde_json::from_value::<Sf>(value)?.slots,
            },
            Task::ID => Annotations::ID {
                intents: serde_json::from_value::<Id>(value)?.intents,
            },
            Task::DST => Annotations::DST {
                states: serde_json::from_value::<Dst>(value)?.states,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
    pub annotations: Annotations,
}

impl Dialogue {
    pub fn summary(&self) -> Option<&str> {
        match &self.annotations {
            Annotations::DS { summary } => Some(summary),
            _ => None,
        }
    }

    pub fn rewrite(&self, turn: usize) -> Option<&str> {
        match &self.annotations {
            Annotations::DC { rewrites } => rewrites
                .iter()
                .find(|r| r.turn == turn)
                .map(|r| r.text.as_str()),
            _ => None,
        }
    }

    /// Slot annotations of one turn.
    pub fn slot_values(&self, turn: usize) -> impl Iterator<Item = &SlotAnnotation> {
        let slots: &[SlotAnnotation] = match &self.annotations {
            Annotations::SF { slots } => slots,
            _ => &[],
        };
        slots.iter().filter(move |s| s.turn == turn)
    }

    pub fn intent(&self, turn: usize) -> Option<&IntentAnnotation> {
        match &self.annotations {
            Annotations::ID { intents } => intents.iter().find(|i| i.turn == turn),
            _ => None,
        }
    }

    pub fn state(&self, turn: usize) -> Option<&BTreeSet<StateTriple>> {
        match &self.annotations {
            Annotations::DST { states } => states.iter().find(|s| s.turn == turn).map(|s| &s.state),
            _ => None,
        }
    }

    /// Turn indices carrying an annotation, ascending and de-duplicated.
    pub fn annotated_turns(&self) -> Vec<usize> {
        let mut t = self.annotations.turn_indices();
        t.sort_unstable();
        t.dedup();
        t
    }
}

/// A broken dialogue invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    TurnsEmpty,
    EmptyTurnText(usize),
    EmptyId,
    TaskMismatch(Task),
    TurnIndex { turn: usize, len: usize },
    EmptyValues { turn: usize, slot: String },
    UnknownSlot { domain: String, slot: String },
    UnknownIntent { domain: String, intent: String },
    EmptySummary,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TurnsEmpty => f.write_str("turns empty"),
            Violation::EmptyTurnText(i) => write!(f, "turn {i} text empty"),
            Violation::EmptyId => f.write_str("dialogue id empty"),
            Violation::TaskMismatch(t) => write!(f, "annotations are for task {t}"),
            Violation::TurnIndex { turn, len } => {
                write!(f, "annotation turn index {turn} out of range for {len} turns")
            }
            Violation::EmptyValues { turn, slot } => {
                write!(f, "slot `{slot}` at turn {turn} has no values")
            }
            Violation::UnknownSlot { domain, slot } => {
                write!(f, "slot `{domain}/{slot}` not in ontology")
            }
            Violation::UnknownIntent { domain, intent } => {
                write!(f, "intent `{domain}/{intent}` not in ontology")
            }
            Violation::EmptySummary => f.write_str("summary empty"),
        }
    }
}

/// Checks every dialogue invariant; an empty result means the dialogue is valid.
pub fn validate_dialogue(d: &Dialogue, o: &Ontology, task: Task) -> Vec<Violation> {
    let mut out = Vec::new();
    if d.id.trim().is_empty() {
        out.push(Violation::EmptyId);
    }
    if d.turns.is_empty() {
        out.push(Violation::TurnsEmpty);
    }
    for (i, t) in d.turns.iter().enumerate() {
        if t.text.trim().is_empty() {
            out.push(Violation::EmptyTurnText(i));
        }
    }
    if d.annotations.task() != task {
        out.push(Violation::TaskMismatch(d.annotations.task()));
        return out;
    }
    let len = d.turns.len();
    for turn in d.annotations.turn_indices() {
        if turn >= len {
            out.push(Violation::TurnIndex { turn, len });
        }
    }
    match &d.annotations {
        Annotations::DS { summary } => {
            if summary.trim().is_empty() {
                out.push(Violation::EmptySummary);
            }
        }
        Annotations::DC { .. } => {}
        Annotations::SF { slots } => {
            for s in slots {
                if s.values.is_empty() {
                    out.push(Violation::EmptyValues {
                        turn: s.turn,
                        slot: s.slot.clone(),
                    });
                }
                if !o.has_slot(&s.domain, &s.slot) {
                    out.push(Violation::UnknownSlot {
                        domain: s.domain.clone(),
                        slot: s.slot.clone(),
                    });
                }
            }
        }
        Annotations::ID { intents } => {
            for i in intents {
                if !o.has_intent(&i.domain, &i.intent) {
                    out.push(Violation::UnknownIntent {
                        domain: i.domain.clone(),
                        intent: i.intent.clone(),
                    });
                }
            }
        }
        Annotations::DST { states } => {
            for st in states {
                for tr in &st.state {
                    if !o.has_slot(tr.domain(), tr.slot()) {
                        out.push(Violation::UnknownSlot {
                            domain: tr.domain().to_string(),
                            slot: tr.slot().to_string(),
                        });
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    pub task: Task,
    pub role: Role,
    pub split: Split,
    #[serde(default)]
    pub ontology: Ontology,
    pub dialogues: Vec<Dialogue>,
}

impl Corpus {
    /// Parses and validates a corpus from its canonical JSON text.
    pub fn from_json(text: &str, expected_task: Option<Task>) -> Result<Corpus> {
        #[derive(Deserialize)]
        struct RawCorpus {
            name: String,
            task: Task,
            role: Role,
            split: Split,
            #[serde(default)]
            ontology: Ontology,
            dialogues: Vec<Value>,
        }
        #[derive(Deserialize)]
        struct RawDialogue {
            id: String,
            turns: Vec<Turn>,
            annotations: Value,
        }

        let raw: RawCorpus = serde_json::from_str(text).map_err(|e| Error::Schema {
            dialogue: "<corpus>".into(),
            field: "<top-level>".into(),
            message: e.to_string(),
        })?;
        if let Some(expected) = expected_task {
            if expected != raw.task {
                return Err(Error::TaskMismatch {
                    expected,
                    found: raw.task,
                });
            }
        }
        if let Some(v) = raw.ontology.violations().into_iter().next() {
            return Err(Error::Schema {
                dialogue: "<corpus>".into(),
                field: "ontology".into(),
                message: v,
            });
        }

        let mut dialogues = Vec::with_capacity(raw.dialogues.len());
        let mut ids = HashSet::new();
        for (pos, value) in raw.dialogues.into_iter().enumerate() {
            let id_hint = value
                .get("id")
                .and_then(Value::as_str)
                .map(str::to_string)
                .unwrap_or_else(|| format!("#{pos}"));
            let schema = |field: &str, e: serde_json::Error| Error::Schema {
                dialogue: id_hint.clone(),
                field: field.to_string(),
                message: e.to_string(),
            };
            let rd: RawDialogue = serde_json::from_value(value).map_err(|e| schema("dialogue", e))?;
            let annotations =
                Annotations::parse(raw.task, rd.annotations).map_err(|e| schema("annotations", e))?;
            let d = Dialogue {
                id: rd.id,
                turns: rd.turns,
                annotations,
            };
            if !ids.insert(d.id.clone()) {
                return Err(Error::Schema {
                    dialogue: d.id,
                    field: "id".into(),
                    message: "duplicate dialogue id".into(),
                });
            }
            if let Some(v) = validate_dialogue(&d, &raw.ontology, raw.task).into_iter().next() {
                return Err(violation_error(&d.id, v));
            }
            dialogues.push(d);
        }
        Ok(Corpus {
            name: raw.name,
            task: raw.task,
            role: raw.role,
            split: raw.split,
            ontology: raw.ontology,
            dialogues,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("corpus serialization is infallible")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

fn violation_error(dialogue: &str, v: Violation) -> Error {
    match v {
        Violation::UnknownSlot { domain, slot } => Error::OntologyReference {
            dialogue: dialogue.to_string(),
            kind: "slot",
            domain,
            name: slot,
        },
        Violation::UnknownIntent { domain, intent } => Error::OntologyReference {
            dialogue: dialogue.to_string(),
            kind: "intent",
            domain,
            name: intent,
        },
        other => {
            let field = match &other {
                Violation::TurnsEmpty | Violation::EmptyTurnText(_) => "turns",
                Violation::EmptyId => "id",
                _ => "annotations",
            };
            Error::Schema {
                dialogue: dialogue.to_string(),
                field: field.to_string(),
                message: other.to_string(),
            }
        }
    }
}

/// Reads and validates a corpus file.
pub fn load_corpus(path: impl AsRef<Path>, expected_task: Option<Task>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Corpus::from_json(&text, expected_task)
}
