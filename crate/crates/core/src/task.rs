use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::Error;

/// The five dialogue understanding tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Task {
    DS,
    DC,
    SF,
    ID,
    DST,
}

impl Task {
    pub const ALL: [Task; 5] = [Task::DS, Task::DC, Task::SF, Task::ID, Task::DST];

    pub fn tag(self) -> &'static str {
        match self {
            Task::DS => "[DS]",
            Task::DC => "[DC]",
            Task::SF => "[SF]",
            Task::ID => "[ID]",
            Task::DST => "[DST]",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Task> {
        Task::ALL.into_iter().find(|t| t.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::DS => "DS",
            Task::DC => "DC",
            Task::SF => "SF",
            Task::ID => "ID",
            Task::DST => "DST",
        }
    }

    /// Tasks whose queries mention an ontology domain.
    pub fn is_domain_specific(self) -> bool {
        matches!(self, Task::SF | Task::ID | Task::DST)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "DS" => Ok(Task::DS),
            "DC" => Ok(Task::DC),
            "SF" => Ok(Task::SF),
            "ID" => Ok(Task::ID),
            "DST" => Ok(Task::DST),
            _ => Err(Error::invalid(format!("unknown task `{s}`"))),
        }
    }
}

/// Whether a corpus is evaluated on or only used as extra training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    EVAL,
    AUX,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    TRAIN,
    DEV,
    TEST,
}
