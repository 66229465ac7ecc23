use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output layer of a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadKind {
    Classification { classes: usize },
    Regression,
}

impl HeadKind {
    /// Width of the head's output.
    pub fn outputs(&self) -> usize {
        match self {
            HeadKind::Classification { classes } => *classes,
            HeadKind::Regression => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    Matthews,
    Pearson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schema {
    SingleSentence,
    SentencePair,
}

/// Identity of a task: head, metric and input schema.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub head: HeadKind,
    pub metric: Metric,
    pub schema: Schema,
}

impl TaskSpec {
    pub fn new(id: &str, head: HeadKind, metric: Metric, schema: Schema) -> Result<Self> {
        let spec = TaskSpec { id: id.to_string(), head, metric, schema };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: &str| Err(Error::Task { task: self.id.clone(), detail: detail.to_string() });
        if self.id.is_empty() {
            return bad("empty task id");
        }
        match (self.head, self.metric) {
            (HeadKind::Classification { classes }, _) if classes < 2 => bad("classification needs at least 2 classes"),
            (HeadKind::Regression, Metric::Pearson) => Ok(()),
            (HeadKind::Regression, _) => bad("regression heads are scored with pearson"),
            (HeadKind::Classification { .. }, Metric::Pearson) => bad("pearson requires a regression head"),
            (HeadKind::Classification { classes }, Metric::Matthews) if classes != 2 => {
                bad("matthews correlation requires a binary head")
            }
            _ => Ok(()),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: TaskSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Class(usize),
    Score(f32),
}

impl Label {
    pub fn class(&self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(*c),
            Label::Score(_) => None,
        }
    }

    pub fn score(&self) -> Option<f32> {
        match self {
            Label::Score(s) => Some(*s),
            Label::Class(_) => None,
        }
    }

    /// Whether the label is admissible for `head`.
    pub fn fits(&self, head: HeadKind) -> bool {
        match (self, head) {
            (Label::Class(c), HeadKind::Classification { classes }) => *c < classes,
            (Label::Score(s), HeadKind::Regression) => s.is_finite(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub text_a: String,
    pub text_b: Option<String>,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Every text field, in order.
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.examples.iter().flat_map(|e| std::iter::once(e.text_a.as_str()).chain(e.text_b.as_deref()))
    }
}
