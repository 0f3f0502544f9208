//! Samples, tasks and task streams, plus tokenization, synthetic stream
//! generation and file ingestion.

mod batch;
mod io;
mod split;
mod synthetic;
mod tokenize;

use serde::{Deserialize, Serialize};

pub use batch::{Batch, BatchInput, Dataset, Example, Input, Targets, TokenBatch};
pub use io::{load_jsonl, load_tsv, write_jsonl, JsonlSchema, LabelMap, TsvColumns};
pub use split::{split_support_query, SplitSizes};
pub use synthetic::{gen_synthetic_stream, SyntheticSpec, SyntheticStream, SyntheticTask};
pub use tokenize::{tokenize, PAD_ID, SEP_ID};

use crate::error::{Error, Result};
use crate::nn::TaskKind;

/// Supervised target of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Class(usize),
    Score(f64),
}

impl Label {
    pub fn class(&self) -> Option<usize> {
        match *self {
            Label::Class(c) => Some(c),
            Label::Score(_) => None,
        }
    }

    pub fn score(&self) -> Option<f64> {
        match *self {
            Label::Score(s) => Some(s),
            Label::Class(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_pair: Option<String>,
    pub label: Label,
}

impl Sample {
    pub fn new(text: impl Into<String>, label: Label) -> Self {
        Self {
            text: text.into(),
            text_pair: None,
            label,
        }
    }

    pub fn pair(text: impl Into<String>, text_pair: impl Into<String>, label: Label) -> Self {
        Self {
            text: text.into(),
            text_pair: Some(text_pair.into()),
            label,
        }
    }
}

/// Evaluation metric of a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    Matthews,
    Pearson,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Matthews => "matthews",
            Metric::Pearson => "pearson",
        }
    }

    pub fn parse(s: &str) -> Option<Metric> {
        match s {
            "accuracy" => Some(Metric::Accuracy),
            "matthews" => Some(Metric::Matthews),
            "pearson" => Some(Metric::Pearson),
            _ => None,
        }
    }

    fn fits(&self, kind: TaskKind) -> bool {
        match (self, kind) {
            (Metric::Pearson, TaskKind::Regression) => true,
            (Metric::Accuracy, TaskKind::Classification { .. }) => true,
            (Metric::Matthews, TaskKind::Classification { num_classes }) => num_classes == 2,
            _ => false,
        }
    }
}

/// One supervised task with disjoint sample splits. Meta-training reads
/// `support` and `query`; meta-testing reads `train` and `eval`.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: String,
    pub kind: TaskKind,
    pub metric: Metric,
    pub support: Vec<Sample>,
    pub query: Vec<Sample>,
    pub train: Vec<Sample>,
    pub eval: Vec<Sample>,
}

impl Task {
    /// Shuffles `pool` with `seed` and deals it into the four splits.
    /// `sizes.eval == None` gives the eval split every remaining sample.
    pub fn from_pool(
        id: impl Into<String>,
        kind: TaskKind,
        metric: Metric,
        pool: Vec<Sample>,
        sizes: &SplitSizes,
        seed: u64,
    ) -> Result<Task> {
        let id = id.into();
        let available = pool.len();
        let fixed = sizes.support + sizes.query + sizes.train;
        let needed = fixed + sizes.eval.unwrap_or(0);
        if needed > available {
            return Err(Error::InsufficientData {
                what: format!("splits of task `{id}`"),
                needed,
                available,
            });
        }
        let (support, rest) = split_support_query(&pool, sizes.support, available - sizes.support, seed)?;
        let mut rest = rest.into_iter();
        let query: Vec<Sample> = rest.by_ref().take(sizes.query).collect();
        let train: Vec<Sample> = rest.by_ref().take(sizes.train).collect();
        let eval: Vec<Sample> = match sizes.eval {
            Some(n) => rest.take(n).collect(),
            None => rest.collect(),
        };
        let task = Task {
            id,
            kind,
            metric,
            support,
            query,
            train,
            eval,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.metric.fits(self.kind) {
            return Err(Error::invalid(format!(
                "task `{}`: metric {} does not apply to {:?}",
                self.id,
                self.metric.name(),
                self.kind
            )));
        }
        for s in self.all_samples() {
            let ok = match (self.kind, s.label) {
                (TaskKind::Classification { num_classes }, Label::Class(c)) => c < num_classes,
                (TaskKind::Regression, Label::Score(v)) => v.is_finite(),
                _ => false,
            };
            if !ok {
                return Err(Error::invalid(format!(
                    "task `{}`: label {:?} does not fit {:?}",
                    self.id, s.label, self.kind
                )));
            }
        }
        Ok(())
    }

    fn all_samples(&self) -> impl Iterator<Item = &Sample> {
        self.support
            .iter()
            .chain(&self.query)
            .chain(&self.train)
            .chain(&self.eval)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    MetaTrain,
    MetaTest,
}

/// Tasks in continual order.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub phase: Phase,
    pub tasks: Vec<Task>,
}

impl TaskStream {
    pub fn new(phase: Phase, tasks: Vec<Task>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for t in &tasks {
            if !seen.insert(t.id.as_str()) {
                return Err(Error::invalid(format!("duplicate task id `{}`", t.id)));
            }
            t.validate()?;
        }
        Ok(Self { phase, tasks })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// The same tasks relabelled for another phase.
    pub fn with_phase(&self, phase: Phase) -> TaskStream {
        TaskStream {
            phase,
            tasks: self.tasks.clone(),
        }
    }
}
