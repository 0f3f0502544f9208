//! Experiment configuration files.
//!
//! ```toml
//! [run]
//! method = "maml_rep"      # maml_rep | oml | sequential
//! seed = 7
//! out_dir = "runs/maml"
//!
//! [meta]
//! inner_lr = 5e-3
//! outer_lr = 5e-5
//! meta_epochs = 10
//!
//! [encoder]
//! vocab_size = 4096
//! hidden_dims = [128, 64]
//!
//! [head]
//! hidden = 32
//!
//! [data]
//! source = "synthetic"
//! [data.synthetic]
//! n_tasks = 4
//! ```
//!
//! Every section is optional and every key has a default. Unknown keys are
//! rejected.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use metacl::data::{
    gen_synthetic_stream, load_jsonl, load_tsv, JsonlSchema, LabelMap, Metric, Phase, Sample, SplitSizes,
    SyntheticSpec, Task, TaskStream, TsvColumns,
};
use metacl::metaobj::{Config, Method, ModelSpec};
use metacl::nn::{EncoderSpec, HeadSpec, TaskKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub method: Method,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            method: Method::MamlRep,
            seed: None,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadSection {
    pub hidden: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileFormat {
    Jsonl,
    Tsv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindName {
    Classification,
    Regression,
}

/// One task read from disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetTask {
    pub id: String,
    pub path: PathBuf,
    pub format: FileFormat,
    pub kind: KindName,
    #[serde(default)]
    pub num_classes: Option<usize>,
    pub metric: Metric,
    #[serde(default)]
    pub label_map: Option<LabelMap>,
    /// Separate evaluation file; otherwise the eval split is dealt from `path`.
    #[serde(default)]
    pub eval_path: Option<PathBuf>,
    #[serde(default)]
    pub text_col: usize,
    #[serde(default)]
    pub text_pair_col: Option<usize>,
    #[serde(default = "default_label_col")]
    pub label_col: usize,
    #[serde(default)]
    pub has_header: bool,
}

fn default_label_col() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "source", rename_all = "snake_case")]
pub enum DataSection {
    Synthetic {
        #[serde(default)]
        synthetic: SyntheticSpec,
    },
    Files {
        tasks: Vec<DatasetTask>,
    },
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection::Synthetic {
            synthetic: SyntheticSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub meta: Config,
    pub encoder: EncoderSpec,
    pub head: HeadSection,
    pub data: DataSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text)?;
        if let Some(seed) = cfg.run.seed {
            cfg.meta.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(seed) = seed {
            self.run.seed = Some(seed);
            self.meta.seed = seed;
        }
        self
    }

    pub fn seed(&self) -> u64 {
        self.meta.seed
    }

    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        self.encoder.validate()?;
        if let Some(h) = self.head.hidden {
            ensure!(h > 0, "head.hidden must be positive");
        }
        match &self.data {
            DataSection::Synthetic { synthetic } => synthetic.validate()?,
            DataSection::Files { tasks } => {
                ensure!(!tasks.is_empty(), "data.tasks is empty");
                let mut ids = HashSet::new();
                for t in tasks {
                    ensure!(ids.insert(&t.id), "duplicate task id `{}`", t.id);
                    task_kind(t)?;
                }
            }
        }
        for kind in self.task_kinds() {
            HeadSpec::new(kind, &self.encoder, self.head.hidden).validate()?;
        }
        Ok(())
    }

    fn task_kinds(&self) -> Vec<TaskKind> {
        match &self.data {
            DataSection::Synthetic { .. } => vec![TaskKind::Classification { num_classes: 2 }, TaskKind::Regression],
            DataSection::Files { tasks } => tasks.iter().filter_map(|t| task_kind(t).ok()).collect(),
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            encoder: self.encoder.clone(),
            head_hidden: self.head.hidden,
        }
    }

    pub fn split_sizes(&self) -> SplitSizes {
        SplitSizes {
            support: self.meta.support_size,
            query: self.meta.query_size,
            train: self.meta.test_train_size,
            eval: self.meta.test_eval_size,
        }
    }

    /// The task stream described by the `[data]` section.
    pub fn stream(&self) -> Result<TaskStream> {
        let sizes = self.split_sizes();
        match &self.data {
            DataSection::Synthetic { synthetic } => Ok(gen_synthetic_stream(synthetic, &sizes, self.seed())?.stream),
            DataSection::Files { tasks } => {
                let tasks = tasks
                    .iter()
                    .enumerate()
                    .map(|(i, t)| load_task(t, &sizes, self.seed().wrapping_add(i as u64)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(TaskStream::new(Phase::MetaTrain, tasks)?)
            }
        }
    }
}

fn task_kind(t: &DatasetTask) -> Result<TaskKind> {
    match (t.kind, t.num_classes) {
        (KindName::Classification, Some(n)) => Ok(TaskKind::Classification { num_classes: n }),
        (KindName::Classification, None) => match &t.label_map {
            Some(m) if !m.is_empty() => Ok(TaskKind::Classification {
                num_classes: m.values().max().map_or(0, |v| v + 1),
            }),
            _ => bail!("task `{}`: classification needs num_classes or a label_map", t.id),
        },
        (KindName::Regression, None) => Ok(TaskKind::Regression),
        (KindName::Regression, Some(_)) => bail!("task `{}`: regression takes no num_classes", t.id),
    }
}

fn read_samples(t: &DatasetTask, path: &Path, kind: TaskKind) -> Result<Vec<Sample>> {
    let samples = match t.format {
        FileFormat::Jsonl => load_jsonl(
            path,
            &JsonlSchema {
                kind,
                label_map: t.label_map.clone(),
            },
        )?,
        FileFormat::Tsv => load_tsv(
            path,
            &TsvColumns {
                text: t.text_col,
                text_pair: t.text_pair_col,
                label: t.label_col,
                kind,
                label_map: t.label_map.clone(),
            },
            t.has_header,
        )?,
    };
    Ok(samples)
}

fn load_task(t: &DatasetTask, sizes: &SplitSizes, seed: u64) -> Result<Task> {
    let kind = task_kind(t)?;
    let pool = read_samples(t, &t.path, kind)?;
    match &t.eval_path {
        None => Ok(Task::from_pool(t.id.clone(), kind, t.metric, pool, sizes, seed)?),
        Some(eval_path) => {
            let fixed = SplitSizes {
                eval: Some(0),
                ..sizes.clone()
            };
            let mut task = Task::from_pool(t.id.clone(), kind, t.metric, pool, &fixed, seed)?;
            task.eval = read_samples(t, eval_path, kind)?;
            task.validate()?;
            Ok(task)
        }
    }
}
