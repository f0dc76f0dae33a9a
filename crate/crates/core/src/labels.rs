//! Label taxonomies for the two subtasks.
//!
//! Subtask 1A is coarse (`NOT` / `HOF`); subtask 1B splits the offensive
//! class into `HATE`, `OFFN` and `PRFN`, with `NONE` for clean posts. Class
//! indices follow declaration order everywhere (confusion matrices, model
//! outputs, reports).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::LabeledText;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CoarseLabel {
    #[serde(rename = "NOT")]
    Not,
    #[serde(rename = "HOF")]
    Hof,
}

impl CoarseLabel {
    pub const ALL: [CoarseLabel; 2] = [CoarseLabel::Not, CoarseLabel::Hof];

    pub fn as_str(self) -> &'static str {
        match self {
            CoarseLabel::Not => "NOT",
            CoarseLabel::Hof => "HOF",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for CoarseLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "NOT" => Ok(CoarseLabel::Not),
            "HOF" => Ok(CoarseLabel::Hof),
            _ => Err(Error::UnknownLabel {
                value: s.to_string(),
                expected: "NOT, HOF".into(),
            }),
        }
    }
}

impl fmt::Display for CoarseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FineLabel {
    #[serde(rename = "HATE")]
    Hate,
    #[serde(rename = "OFFN")]
    Offn,
    #[serde(rename = "PRFN")]
    Prfn,
    #[serde(rename = "NONE")]
    None,
}

impl FineLabel {
    pub const ALL: [FineLabel; 4] = [
        FineLabel::Hate,
        FineLabel::Offn,
        FineLabel::Prfn,
        FineLabel::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FineLabel::Hate => "HATE",
            FineLabel::Offn => "OFFN",
            FineLabel::Prfn => "PRFN",
            FineLabel::None => "NONE",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// The 1A label implied by this fine-grained label.
    pub fn coarse(self) -> CoarseLabel {
        match self {
            FineLabel::None => CoarseLabel::Not,
            _ => CoarseLabel::Hof,
        }
    }
}

impl FromStr for FineLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "HATE" => Ok(FineLabel::Hate),
            "OFFN" => Ok(FineLabel::Offn),
            "PRFN" => Ok(FineLabel::Prfn),
            "NONE" => Ok(FineLabel::None),
            _ => Err(Error::UnknownLabel {
                value: s.to_string(),
                expected: "HATE, OFFN, PRFN, NONE".into(),
            }),
        }
    }
}

impl fmt::Display for FineLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which label column a dataset is about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "1a")]
    Task1a,
    #[serde(rename = "1b")]
    Task1b,
}

impl Task {
    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            Task::Task1a => &["NOT", "HOF"],
            Task::Task1b => &["HATE", "OFFN", "PRFN", "NONE"],
        }
    }

    /// Class index of `item` under this task, if the item carries the label.
    pub fn class_of(self, item: &LabeledText) -> Option<usize> {
        match self {
            Task::Task1a => item.label_1a.map(CoarseLabel::index),
            Task::Task1b => item.label_1b.map(FineLabel::index),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Task1a => "1a",
            Task::Task1b => "1b",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1a" => Ok(Task::Task1a),
            "1b" => Ok(Task::Task1b),
            _ => Err(Error::InvalidConfig(format!("unknown task {s:?}"))),
        }
    }
}

/// How a task is posed to a classifier.
///
/// `Flat` treats 1B as a four-way problem including `NONE`; `Conditional`
/// trains a three-way model on offensive posts only and relies on a 1A model
/// to gate which posts reach it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskMode {
    #[serde(rename = "1a")]
    Binary,
    #[serde(rename = "1b-flat")]
    Flat,
    #[serde(rename = "1b-conditional")]
    Conditional,
}

impl TaskMode {
    pub fn task(self) -> Task {
        match self {
            TaskMode::Binary => Task::Task1a,
            TaskMode::Flat | TaskMode::Conditional => Task::Task1b,
        }
    }

    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            TaskMode::Binary => &["NOT", "HOF"],
            TaskMode::Flat => &["HATE", "OFFN", "PRFN", "NONE"],
            TaskMode::Conditional => &["HATE", "OFFN", "PRFN"],
        }
    }

    pub fn num_classes(self) -> usize {
        self.class_names().len()
    }

    /// Width of the classifier head: one logit for the sigmoid head, one
    /// per class otherwise.
    pub fn num_outputs(self) -> usize {
        match self {
            TaskMode::Binary => 1,
            m => m.num_classes(),
        }
    }

    pub fn is_binary(self) -> bool {
        self == TaskMode::Binary
    }

    /// Class index of `item` in this mode. `None` when the label is absent or
    /// the item is outside the mode (a `NONE` post in conditional mode).
    pub fn class_of(self, item: &LabeledText) -> Option<usize> {
        match self {
            TaskMode::Binary => item.label_1a.map(CoarseLabel::index),
            TaskMode::Flat => item.label_1b.map(FineLabel::index),
            TaskMode::Conditional => match item.label_1b {
                Some(FineLabel::None) | None => None,
                Some(l) => Some(l.index()),
            },
        }
    }

    pub fn label_name(self, class: usize) -> &'static str {
        self.class_names()[class]
    }
}

impl fmt::Display for TaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskMode::Binary => "1a",
            TaskMode::Flat => "1b-flat",
            TaskMode::Conditional => "1b-conditional",
        })
    }
}

impl FromStr for TaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1a" => Ok(TaskMode::Binary),
            "1b" | "1b-flat" => Ok(TaskMode::Flat),
            "1b-conditional" => Ok(TaskMode::Conditional),
            _ => Err(Error::InvalidConfig(format!(
                "unknown task {s:?} (expected 1a, 1b-flat or 1b-conditional)"
            ))),
        }
    }
}
