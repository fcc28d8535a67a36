//! Serialization of task annotations into unified generative records:
//! `[TI] dialogue content [C] task query` → `[TI] query answer`.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Dialogue, Speaker, Turn};
use crate::{Error, Result, Task};

pub const CONTENT_SEP: &str = "[C]";
pub const TURN_SEP: &str = "[T]";
pub const NOT_MENTIONED: &str = "not mentioned";
pub const NOT_DEFINED: &str = "not defined";
pub const DS_QUERY: &str = "what is the summary of this dialogue?";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    POSITIVE,
    NEGATIVE,
    NA,
}

/// Where the task query lives: in the encoder input (QA) or as a decoder
/// prefix of the target (PREFIX).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FormatVariant {
    #[default]
    QA,
    PREFIX,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Origin {
    pub dialogue: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<String>,
}

/// One serialized training or evaluation pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnifiedRecord {
    pub task: Task,
    #[serde(rename = "input")]
    pub input_text: String,
    #[serde(rename = "target")]
    pub target_text: String,
    pub polarity: Polarity,
    pub origin: Origin,
    pub variant: FormatVariant,
    pub query: String,
}

impl UnifiedRecord {
    fn build(
        task: Task,
        content: &str,
        query: String,
        answer: &str,
        polarity: Polarity,
        origin: Origin,
        variant: FormatVariant,
    ) -> Self {
        let tag = task.tag();
        let (input_text, target_text) = match variant {
            FormatVariant::QA => (
                format!("{tag} {content} {CONTENT_SEP} {query}"),
                format!("{tag} {answer}"),
            ),
            FormatVariant::PREFIX => (format!("{tag} {content}"), format!("{tag} {query} {answer}")),
        };
        UnifiedRecord {
            task,
            input_text,
            target_text,
            polarity,
            origin,
            variant,
            query,
        }
    }

    /// The dialogue-content portion of the input (between tag and `[C]`).
    pub fn content(&self) -> &str {
        let rest = self.input_text[self.task.tag().len()..].trim_start();
        match self.variant {
            FormatVariant::QA => {
                let cut = rest
                    .rfind(&format!(" {CONTENT_SEP} "))
                    .unwrap_or(rest.len());
                &rest[..cut]
            }
            FormatVariant::PREFIX => rest,
        }
    }

    /// The answer portion of the target, without tag or query prefix.
    pub fn answer(&self) -> &str {
        let rest = self.target_text[self.task.tag().len()..].trim_start();
        match self.variant {
            FormatVariant::QA => rest,
            FormatVariant::PREFIX => rest
                .strip_prefix(self.query.as_str())
                .unwrap_or(rest)
                .trim_start(),
        }
    }

    /// The text force-fed to the decoder before free generation starts.
    pub fn decoder_prefix(&self) -> String {
        match self.variant {
            FormatVariant::QA => String::new(),
            FormatVariant::PREFIX => format!("{} {}", self.task.tag(), self.query),
        }
    }
}

/// Renders turns `0..=upto` as `SPEAKER : text` joined by ` [T] `.
pub fn render_dialogue(turns: &[Turn], upto: usize) -> Result<String> {
    if upto >= turns.len() {
        return Err(Error::IndexOutOfRange {
            index: upto,
            len: turns.len(),
        });
    }
    Ok(turns[..=upto]
        .iter()
        .map(|t| format!("{} : {}", t.speaker.as_str(), t.text))
        .collect::<Vec<_>>()
        .join(&format!(" {TURN_SEP} ")))
}

fn turn_text(d: &Dialogue, n: usize) -> Result<&str> {
    let t = d.turns.get(n).ok_or(Error::IndexOutOfRange {
        index: n,
        len: d.turns.len(),
    })?;
    if t.text.trim().is_empty() {
        return Err(Error::invalid(format!("dialogue `{}` turn {n} is empty", d.id)));
    }
    Ok(&t.text)
}

fn origin(d: &Dialogue, turn: Option<usize>, domain: Option<&str>, slot: Option<&str>) -> Origin {
    Origin {
        dialogue: d.id.clone(),
        turn,
        domain: domain.map(str::to_string),
        slot: slot.map(str::to_string),
    }
}

pub fn serialize_ds(d: &Dialogue, variant: FormatVariant) -> Result<UnifiedRecord> {
    let summary = d.summary().ok_or_else(|| Error::MissingAnnotation {
        dialogue: d.id.clone(),
        task: Task::DS,
        turn: None,
    })?;
    if d.turns.is_empty() {
        return Err(Error::Empty("dialogue turns"));
    }
    let content = render_dialogue(&d.turns, d.turns.len() - 1)?;
    Ok(UnifiedRecord::build(
        Task::DS,
        &content,
        DS_QUERY.to_string(),
        summary,
        Polarity::NA,
        origin(d, None, None, None),
        variant,
    ))
}

pub fn dc_query(utterance: &str) -> String {
    format!("what is the semantic completion statement of \"{utterance}\"?")
}

pub fn serialize_dc(d: &Dialogue, n: usize, variant: FormatVariant) -> Result<UnifiedRecord> {
    let rewrite = d.rewrite(n).ok_or_else(|| Error::MissingAnnotation {
        dialogue: d.id.clone(),
        task: Task::DC,
        turn: Some(n),
    })?;
    let content = render_dialogue(&d.turns, n)?;
    let query = dc_query(turn_text(d, n)?);
    Ok(UnifiedRecord::build(
        Task::DC,
        &content,
        query,
        rewrite,
        Polarity::NA,
        origin(d, Some(n), None, None),
        variant,
    ))
}

pub fn sf_query(domain: &str, slot: &str) -> String {
    format!("what is {slot} of {domain}?")
}

/// Orders values by first appearance in the utterance; values not found keep
/// their annotated order after the located ones.
fn order_by_appearance<'a>(utterance: &str, values: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut keyed: Vec<(usize, usize, &str)> = values
        .enumerate()
        .map(|(i, v)| (utterance.find(v).unwrap_or(usize::MAX), i, v))
        .collect();
    keyed.sort();
    let mut out: Vec<&str> = Vec::with_capacity(keyed.len());
    for (_, _, v) in keyed {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

pub fn serialize_sf(
    d: &Dialogue,
    n: usize,
    domain: &str,
    slot: &str,
    ontology: &crate::corpus::Ontology,
    variant: FormatVariant,
) -> Result<UnifiedRecord> {
    if !ontology.has_slot(domain, slot) {
        return Err(Error::UnknownSlot {
            domain: domain.to_string(),
            slot: slot.to_string(),
        });
    }
    let utterance = turn_text(d, n)?;
    let values = order_by_appearance(
        utterance,
        d.slot_values(n)
            .filter(|s| s.domain == domain && s.slot == slot)
            .flat_map(|s| s.values.iter().map(String::as_str)),
    );
    let (answer, polarity) = if values.is_empty() {
        (NOT_MENTIONED.to_string(), Polarity::NEGATIVE)
    } else {
        (values.join(", "), Polarity::POSITIVE)
    };
    Ok(UnifiedRecord::build(
        Task::SF,
        utterance,
        sf_query(domain, slot),
        &answer,
        polarity,
        origin(d, Some(n), Some(domain), Some(slot)),
        variant,
    ))
}

pub fn id_query(domain: &str) -> String {
    format!("what is the user's intent on the {domain}?")
}

/// Positive intent record for turn `n`, queried on the annotated domain.
pub fn serialize_id(d: &Dialogue, n: usize, domain: &str, variant: FormatVariant) -> Result<UnifiedRecord> {
    let ann = d
        .intent(n)
        .filter(|a| a.domain == domain)
        .ok_or_else(|| Error::MissingAnnotation {
            dialogue: d.id.clone(),
            task: Task::ID,
            turn: Some(n),
        })?;
    let utterance = turn_text(d, n)?;
    Ok(UnifiedRecord::build(
        Task::ID,
        utterance,
        id_query(domain),
        &ann.intent,
        Polarity::POSITIVE,
        origin(d, Some(n), Some(domain), None),
        variant,
    ))
}

/// Negative intent record: an utterance from `source` (a dialogue outside
/// `domain`) queried on `domain`, answered "not defined".
pub fn serialize_id_negative(
    source: &Dialogue,
    n: usize,
    domain: &str,
    variant: FormatVariant,
) -> Result<UnifiedRecord> {
    if source.intent(n).is_some_and(|a| a.domain == domain) {
        return Err(Error::invalid(format!(
            "utterance {}#{n} is in domain `{domain}` and cannot be a negative for it",
            source.id
        )));
    }
    let utterance = turn_text(source, n)?;
    Ok(UnifiedRecord::build(
        Task::ID,
        utterance,
        id_query(domain),
        NOT_DEFINED,
        Polarity::NEGATIVE,
        origin(source, Some(n), Some(domain), None),
        variant,
    ))
}

pub fn dst_query(domain: &str, slot: &str) -> String {
    format!("what is the user's constraint about the {slot} of the {domain}?")
}

pub fn serialize_dst(
    d: &Dialogue,
    n: usize,
    domain: &str,
    slot: &str,
    ontology: &crate::corpus::Ontology,
    variant: FormatVariant,
) -> Result<UnifiedRecord> {
    if !ontology.has_slot(domain, slot) {
        return Err(Error::UnknownSlot {
            domain: domain.to_string(),
            slot: slot.to_string(),
        });
    }
    let state = d.state(n).ok_or_else(|| Error::MissingAnnotation {
        dialogue: d.id.clone(),
        task: Task::DST,
        turn: Some(n),
    })?;
    let content = render_dialogue(&d.turns, n)?;
    let values: Vec<&str> = state
        .iter()
        .filter(|t| t.domain() == domain && t.slot() == slot)
        .map(|t| t.value())
        .collect();
    let (answer, polarity) = if values.is_empty() {
        (NOT_MENTIONED.to_string(), Polarity::NEGATIVE)
    } else {
        (values.join(", "), Polarity::POSITIVE)
    };
    Ok(UnifiedRecord::build(
        Task::DST,
        &content,
        dst_query(domain, slot),
        &answer,
        polarity,
        origin(d, Some(n), Some(domain), Some(slot)),
        variant,
    ))
}

/// Keeps every positive and at most twice as many negatives, chosen by a
/// seeded uniform sample without replacement. Original order is preserved.
pub fn balance_negatives(records: Vec<UnifiedRecord>, task: Task, rng_seed: u64) -> Vec<UnifiedRecord> {
    if !matches!(task, Task::SF | Task::ID | Task::DST) {
        return records;
    }
    let positives = records
        .iter()
        .filter(|r| r.polarity == Polarity::POSITIVE)
        .count();
    let negatives: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.polarity == Polarity::NEGATIVE)
        .map(|(i, _)| i)
        .collect();
    let budget = 2 * positives;
    if negatives.len() <= budget {
        if task == Task::ID && negatives.len() < budget {
            log::warn!(
                "ID negative pool short: {} available, {} wanted",
                negatives.len(),
                budget
            );
        }
        return records;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let keep: BTreeSet<usize> = sample(&mut rng, negatives.len(), budget)
        .into_iter()
        .map(|i| negatives[i])
        .collect();
    records
        .into_iter()
        .enumerate()
        .filter(|(i, r)| r.polarity != Polarity::NEGATIVE || keep.contains(i))
        .map(|(_, r)| r)
        .collect()
}

/// Splits a generated text into its leading task tag and trimmed answer.
pub fn parse_output(text: &str) -> Result<(Task, String)> {
    let trimmed = text.trim_start();
    let (head, rest) = trimmed
        .split_once(char::is_whitespace)
        .unwrap_or((trimmed, ""));
    let task = Task::from_tag(head).ok_or_else(|| Error::UnknownTag(text.to_string()))?;
    Ok((task, rest.trim().to_string()))
}

/// Whether SF/DST queries go through negative balancing (training) or all
/// slots are queried (evaluation).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SerializeMode {
    Train { seed: u64 },
    Eval,
}

/// Seed used for the ID negatives of evaluation sets.
pub const EVAL_NEGATIVE_SEED: u64 = 0;

fn user_turns(d: &Dialogue) -> impl Iterator<Item = usize> + '_ {
    d.turns
        .iter()
        .enumerate()
        .filter(|(_, t)| t.speaker == Speaker::USER)
        .map(|(i, _)| i)
}

/// Serializes every dialogue of a corpus into records for its task.
pub fn serialize_corpus(corpus: &Corpus, variant: FormatVariant, mode: SerializeMode) -> Result<Vec<UnifiedRecord>> {
    let mut out = Vec::new();
    let ontology = &corpus.ontology;
    match corpus.task {
        Task::DS => {
            for d in &corpus.dialogues {
                out.push(serialize_ds(d, variant)?);
            }
        }
        Task::DC => {
            for d in &corpus.dialogues {
                for n in d.annotated_turns() {
                    out.push(serialize_dc(d, n, variant)?);
                }
            }
        }
        Task::SF => {
            for d in &corpus.dialogues {
                for n in user_turns(d) {
                    for (dom, slot) in ontology.slot_pairs() {
                        out.push(serialize_sf(d, n, dom, slot, ontology, variant)?);
                    }
                }
            }
        }
        Task::ID => {
            let mut negatives = Vec::new();
            for d in &corpus.dialogues {
                for n in d.annotated_turns() {
                    let Some(ann) = d.intent(n) else { continue };
                    out.push(serialize_id(d, n, &ann.domain, variant)?);
                    for other in ontology.domains.iter().filter(|o| o.name != ann.domain) {
                        negatives.push(serialize_id_negative(d, n, &other.name, variant)?);
                    }
                }
            }
            out.extend(negatives);
        }
        Task::DST => {
            for d in &corpus.dialogues {
                for n in d.annotated_turns() {
                    for (dom, slot) in ontology.slot_pairs() {
                        out.push(serialize_dst(d, n, dom, slot, ontology, variant)?);
                    }
                }
            }
        }
    }
    let seed = match mode {
        SerializeMode::Train { seed } => seed,
        SerializeMode::Eval if corpus.task == Task::ID => EVAL_NEGATIVE_SEED,
        SerializeMode::Eval => return Ok(out),
    };
    Ok(balance_negatives(out, corpus.task, seed))
}

pub fn write_records(records: &[UnifiedRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<UnifiedRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
