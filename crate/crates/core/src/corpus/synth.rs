//! Seeded templated dialogues with consistent annotations, standing in for
//! the public corpora at desk scale.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    Annotations, Corpus, Dialogue, Domain, IntentAnnotation, Ontology, Rewrite, SlotAnnotation,
    StateTriple, Turn, TurnState,
};
use crate::util::fnv1a;
use crate::{Error, Result, Role, Split, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OntologySize {
    pub domains: usize,
    pub slots_per_domain: usize,
    pub intents_per_domain: usize,
}

impl Default for OntologySize {
    fn default() -> Self {
        OntologySize {
            domains: 3,
            slots_per_domain: 3,
            intents_per_domain: 2,
        }
    }
}

const DOMAINS: &[&str] = &[
    "taxi", "hotel", "restaurant", "train", "attraction", "bus", "flight", "cinema",
];

// Values are disjoint across slots so every value locates a unique span.
const SLOTS: &[(&str, &[&str])] = &[
    ("area", &["north", "south", "east", "west", "centre"]),
    ("price", &["cheap", "moderate", "expensive"]),
    ("day", &["monday", "tuesday", "friday", "sunday"]),
    ("leaving time", &["7pm", "8pm", "10:45", "16:15", "9am"]),
    ("people", &["two", "three", "four", "six"]),
    ("destination", &["avalon", "ely", "stansted", "leicester"]),
    ("food", &["italian", "chinese", "indian", "thai"]),
    ("stars", &["1-star", "3-star", "5-star"]),
    ("parking", &["garage", "street", "valet"]),
    ("payment", &["card", "cash", "voucher"]),
];

const INTENT_VERBS: &[(&str, &[&str])] = &[
    ("book", &["please book a {d} for me", "can you reserve a {d}", "i want to book a {d}"]),
    ("find", &["help me find a {d}", "i am looking for a {d}", "search for a {d}"]),
    ("cancel", &["cancel my {d} please", "drop my {d} booking", "i want to cancel the {d}"]),
    ("check", &["check my {d} status", "is my {d} confirmed", "what is the status of my {d}"]),
    ("change", &["change my {d} booking", "i need to modify the {d}", "move my {d} to later"]),
    ("rate", &["i want to rate the {d}", "let me review my {d}", "leave feedback on the {d}"]),
];

const FILLERS: &[&str] = &["", " now", " today", " please", " thanks"];
const ENTITIES: &[&str] = &["ruskin", "saffron", "kettle", "granta", "fitzbillies", "lensfield"];

fn slot_for(domain_idx: usize, j: usize) -> (&'static str, &'static [&'static str]) {
    SLOTS[(domain_idx + j) % SLOTS.len()]
}

fn pick<'a, R: Rng>(rng: &mut R, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).copied().expect("non-empty pool")
}

struct Generator {
    rng: ChaCha8Rng,
    size: OntologySize,
}

impl Generator {
    fn ontology(&self, task: Task) -> Ontology {
        if !task.is_domain_specific() {
            return Ontology::default();
        }
        let domains = (0..self.size.domains)
            .map(|i| Domain {
                name: DOMAINS[i].to_string(),
                slots: (0..self.size.slots_per_domain)
                    .map(|j| slot_for(i, j).0.to_string())
                    .collect(),
                intents: (0..self.size.intents_per_domain)
                    .map(|j| format!("{} {}", INTENT_VERBS[(i + j) % INTENT_VERBS.len()].0, DOMAINS[i]))
                    .collect(),
            })
            .collect();
        Ontology { domains }
    }

    fn domain(&mut self) -> usize {
        self.rng.gen_range(0..self.size.domains.max(1))
    }

    fn ds(&mut self) -> (Vec<Turn>, Annotations) {
        let dom = DOMAINS[self.domain()];
        let area = pick(&mut self.rng, SLOTS[0].1);
        let people = pick(&mut self.rng, SLOTS[4].1);
        let day = pick(&mut self.rng, SLOTS[2].1);
        let name = pick(&mut self.rng, ENTITIES);
        let mut turns = vec![
            Turn::user(format!("i need a {dom} in the {area} for {people} people .")),
            Turn::system(format!("i found {name} , shall i book it ?")),
        ];
        let summary = if self.rng.gen_bool(0.5) {
            turns.push(Turn::user(format!("yes please book it for {day} .")));
            turns.push(Turn::system("done , your booking is confirmed .".to_string()));
            format!("USER booked the {dom} {name} in the {area} for {people} on {day} .")
        } else {
            turns.push(Turn::user("no thanks , i will think about it .".to_string()));
            format!("USER asked for a {dom} in the {area} for {people} but did not book .")
        };
        (turns, Annotations::DS { summary })
    }

    fn dc(&mut self) -> (Vec<Turn>, Annotations) {
        let entity = pick(&mut self.rng, ENTITIES);
        let area = pick(&mut self.rng, SLOTS[0].1);
        let day = pick(&mut self.rng, SLOTS[2].1);
        let people = pick(&mut self.rng, SLOTS[4].1);
        let first = format!("i want to visit {entity} in the {area} .");
        let (elliptic, resolved) = match self.rng.gen_range(0..3) {
            0 => (
                "how do i get there ?".to_string(),
                format!("how do i get to {entity} ?"),
            ),
            1 => (
                "is it expensive ?".to_string(),
                format!("is {entity} expensive ?"),
            ),
            _ => (
                format!("book it for {people} please ."),
                format!("book {entity} for {people} please ."),
            ),
        };
        let turns = vec![
            Turn::user(first.clone()),
            Turn::system(format!("{entity} is open on {day} .")),
            Turn::user(elliptic),
        ];
        let rewrites = vec![
            Rewrite { turn: 0, text: first },
            Rewrite { turn: 2, text: resolved },
        ];
        (turns, Annotations::DC { rewrites })
    }

    fn sf(&mut self) -> (Vec<Turn>, Annotations) {
        let di = self.domain();
        let dom = DOMAINS[di];
        let k = self.size.slots_per_domain;
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut self.rng);
        let mentioned = self.rng.gen_range(0..=k.min(2));
        let mut phrases = Vec::new();
        let mut slots = Vec::new();
        let lead = usize::from(self.rng.gen_bool(0.3));
        for &j in order.iter().take(mentioned) {
            let (slot, pool) = slot_for(di, j);
            let mut values: Vec<&str> = pool.choose_multiple(&mut self.rng, 2).copied().collect();
            if self.rng.gen_bool(0.75) {
                values.truncate(1);
            }
            phrases.push(format!("{slot} {}", values.join(" or ")));
            slots.push(SlotAnnotation {
                turn: lead,
                domain: dom.to_string(),
                slot: slot.to_string(),
                values: values.into_iter().map(str::to_string).collect(),
            });
        }
        let utterance = if phrases.is_empty() {
            format!("i need a {dom}{}", pick(&mut self.rng, FILLERS))
        } else {
            format!("i need a {dom} with {} .", phrases.join(" and "))
        };
        let mut turns = Vec::new();
        if lead == 1 {
            turns.push(Turn::system("how can i help ?".to_string()));
        }
        turns.push(Turn::user(utterance));
        (turns, Annotations::SF { slots })
    }

    fn id(&mut self) -> (Vec<Turn>, Annotations) {
        let di = self.domain();
        let dom = DOMAINS[di];
        let j = self.rng.gen_range(0..self.size.intents_per_domain);
        let (verb, templates) = INTENT_VERBS[(di + j) % INTENT_VERBS.len()];
        let text = format!(
            "{}{}",
            pick(&mut self.rng, templates).replace("{d}", dom),
            pick(&mut self.rng, FILLERS)
        );
        let intents = vec![IntentAnnotation {
            turn: 0,
            domain: dom.to_string(),
            intent: format!("{verb} {dom}"),
        }];
        (vec![Turn::user(text)], Annotations::ID { intents })
    }

    fn dst(&mut self) -> (Vec<Turn>, Annotations) {
        let di = self.domain();
        let dom = DOMAINS[di];
        let k = self.size.slots_per_domain;
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut self.rng);
        let user_turns = self.rng.gen_range(1..=k.min(3));
        let mut turns = Vec::new();
        let mut states = Vec::new();
        let mut state = BTreeSet::new();
        for (u, &j) in order.iter().take(user_turns).enumerate() {
            let (slot, pool) = slot_for(di, j);
            let value = pick(&mut self.rng, pool);
            let text = if u == 0 {
                format!("i need a {dom} . the {slot} should be {value} .")
            } else {
                format!("also {slot} {value} please .")
            };
            if u > 0 {
                turns.push(Turn::system(
                    pick(&mut self.rng, &["sure , anything else ?", "noted , what else ?"]).to_string(),
                ));
            }
            turns.push(Turn::user(text));
            state.insert(StateTriple::new(dom, slot, value));
            states.push(TurnState {
                turn: turns.len() - 1,
                state: state.clone(),
            });
        }
        (turns, Annotations::DST { states })
    }
}

/// Builds a deterministic synthetic corpus for `task`.
pub fn generate_synthetic_corpus(
    seed: u64,
    task: Task,
    n_dialogues: usize,
    size: OntologySize,
) -> Result<Corpus> {
    if n_dialogues == 0 {
        return Err(Error::invalid("n_dialogues must be at least 1"));
    }
    if task.is_domain_specific()
        && (size.domains == 0 || size.slots_per_domain == 0 || size.intents_per_domain == 0)
    {
        return Err(Error::invalid("ontology sizes must be at least 1"));
    }
    if size.domains > DOMAINS.len()
        || size.slots_per_domain > SLOTS.len()
        || size.intents_per_domain > INTENT_VERBS.len()
    {
        return Err(Error::invalid(format!(
            "ontology size exceeds generator pools ({} domains, {} slots, {} intents)",
            DOMAINS.len(),
            SLOTS.len(),
            INTENT_VERBS.len()
        )));
    }
    let stream = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(task.index() as u64);
    let mut g = Generator {
        rng: ChaCha8Rng::seed_from_u64(stream),
        size,
    };
    let ontology = g.ontology(task);
    let dialogues = (0..n_dialogues)
        .map(|i| {
            let (turns, annotations) = match task {
                Task::DS => g.ds(),
                Task::DC => g.dc(),
                Task::SF => g.sf(),
                Task::ID => g.id(),
                Task::DST => g.dst(),
            };
            Dialogue {
                id: format!("{}-{seed}-{i:05}", task.name().to_lowercase()),
                turns,
                annotations,
            }
        })
        .collect();
    Ok(Corpus {
        name: format!("synthetic-{}-{seed}", task.name().to_lowercase()),
        task,
        role: Role::EVAL,
        split: Split::TRAIN,
        ontology,
        dialogues,
    })
}

/// 80/10/10 train/dev/test split keyed on a hash of the dialogue id.
pub fn split_by_id_hash(corpus: &Corpus) -> (Corpus, Corpus, Corpus) {
    let part = |split: Split, keep: fn(u64) -> bool| Corpus {
        split,
        dialogues: corpus
            .dialogues
            .iter()
            .filter(|d| keep(fnv1a(d.id.as_bytes()) % 10))
            .cloned()
            .collect(),
        ..corpus.clone()
    };
    (
        part(Split::TRAIN, |b| b < 8),
        part(Split::DEV, |b| b == 8),
        part(Split::TEST, |b| b == 9),
    )
}
