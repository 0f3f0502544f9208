//! Meta-testing and forgetting measurement.
//!
//! Target tasks are fine-tuned in order, each with its own head and the
//! shared θ carried over. Every task is scored right after its own
//! fine-tuning (immediate) and again with the final θ and its retained head
//! (final).

mod metrics;

pub use metrics::{accuracy, matthews_corr, pearson_corr};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label, Metric, TaskStream};
use crate::error::{Error, Result};
use crate::metaobj::{finetune, Config, Finetune, ModelSpec, RunSeeds};
use crate::nn::{Model, TaskKind};
use crate::params::ParamSet;
use crate::tensor::{DropoutKey, Graph, Mode};

/// Per-task metric right after fine-tuning and at the end of the stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingMatrix {
    pub task_ids: Vec<String>,
    pub metrics: Vec<Metric>,
    pub immediate: Vec<f64>,
    pub final_scores: Vec<f64>,
}

impl ForgettingMatrix {
    pub fn len(&self) -> usize {
        self.task_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.task_ids.is_empty()
    }

    /// `immediate − final` per task; positive means forgotten.
    pub fn deltas(&self) -> Vec<f64> {
        self.immediate
            .iter()
            .zip(&self.final_scores)
            .map(|(i, f)| i - f)
            .collect()
    }

    pub fn mean_final(&self) -> f64 {
        mean(&self.final_scores)
    }

    pub fn mean_immediate(&self) -> f64 {
        mean(&self.immediate)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean forgetting over every task but the last; `None` with fewer than two.
pub fn forgetting_delta(matrix: &ForgettingMatrix) -> Option<f64> {
    if matrix.len() < 2 {
        return None;
    }
    let d = matrix.deltas();
    Some(mean(&d[..d.len() - 1]))
}

#[derive(Debug, Clone)]
pub struct MetaTestOutcome {
    pub matrix: ForgettingMatrix,
    pub theta: ParamSet,
    pub heads: Vec<ParamSet>,
    /// Last-pass training loss of every task.
    pub train_losses: Vec<f64>,
}

/// Everything a meta-test run reports, with the settings that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub matrix: ForgettingMatrix,
    pub deltas: Vec<f64>,
    pub mean_delta: Option<f64>,
    pub train_losses: Vec<f64>,
    pub config: Config,
    pub seed: u64,
    pub duration_secs: f64,
}

impl EvalReport {
    pub fn new(outcome: &MetaTestOutcome, config: &Config, duration_secs: f64) -> Self {
        Self {
            deltas: outcome.matrix.deltas(),
            mean_delta: forgetting_delta(&outcome.matrix),
            matrix: outcome.matrix.clone(),
            train_losses: outcome.train_losses.clone(),
            config: config.clone(),
            seed: config.seed,
            duration_secs,
        }
    }
}

/// Metric of `(θ, W)` on `data`, dropout off.
pub fn evaluate<M: Model>(model: &M, theta: &ParamSet, w: &ParamSet, data: &Dataset, metric: Metric) -> Result<f64> {
    let batch = data.full_batch()?;
    let mut g = Graph::new();
    let tb = theta.bind(&mut g, false)?;
    let wb = w.bind(&mut g, false)?;
    let out = model.forward(&mut g, &tb, &wb, &batch, Mode::Eval, DropoutKey::new(0, 0, 0))?;
    let out = g.value(out);
    let labels = data.examples().iter().map(|e| e.label);
    match model.kind() {
        TaskKind::Classification { .. } => {
            let (rows, _) = out.dims2("evaluate")?;
            let preds: Vec<usize> = (0..rows).map(|r| argmax(out.row(r))).collect();
            let gold: Vec<usize> = labels
                .map(|l| l.class().ok_or_else(|| Error::invalid("classification task with a score label")))
                .collect::<Result<_>>()?;
            match metric {
                Metric::Accuracy => accuracy(&preds, &gold),
                Metric::Matthews => matthews_corr(&preds, &gold),
                Metric::Pearson => Err(Error::invalid("pearson metric on a classification task")),
            }
        }
        TaskKind::Regression => {
            let gold: Vec<f64> = labels.map(|l: Label| l.score().unwrap_or(f64::NAN)).collect();
            if metric != Metric::Pearson {
                return Err(Error::invalid(format!("{} metric on a regression task", metric.name())));
            }
            pearson_corr(out.data(), &gold)
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fine-tunes θ and a fresh head on each target task in order, then scores
/// every task with the final θ and its own retained head.
pub fn meta_test(theta: &ParamSet, stream: &TaskStream, spec: &ModelSpec, cfg: &Config) -> Result<MetaTestOutcome> {
    cfg.validate()?;
    if stream.is_empty() {
        return Err(Error::EmptyStream);
    }
    let enc = &spec.encoder;
    let seeds = RunSeeds::new(cfg.seed);
    let (head_seed, dropout_seed) = (seeds.head_test, seeds.dropout_test);

    let mut theta = theta.clone();
    let mut heads = Vec::with_capacity(stream.len());
    let mut evals = Vec::with_capacity(stream.len());
    let mut immediate = Vec::with_capacity(stream.len());
    let mut train_losses = Vec::with_capacity(stream.len());
    for (i, task) in stream.tasks.iter().enumerate() {
        if task.train.len() < cfg.test_train_size {
            return Err(Error::InsufficientData {
                what: format!("train split of task `{}`", task.id),
                needed: cfg.test_train_size,
                available: task.train.len(),
            });
        }
        let n_eval = cfg.test_eval_size.unwrap_or(task.eval.len());
        if task.eval.is_empty() || task.eval.len() < n_eval {
            return Err(Error::InsufficientData {
                what: format!("eval split of task `{}`", task.id),
                needed: n_eval.max(1),
                available: task.eval.len(),
            });
        }
        let train = Dataset::encode(&task.train[..cfg.test_train_size], enc.vocab_size, enc.max_len);
        let eval = Dataset::encode(&task.eval[..n_eval], enc.vocab_size, enc.max_len);
        let model = spec.for_task(task.kind);
        let head = model.init_head(head_seed, i as u64)?;
        let ft = Finetune {
            passes: cfg.inner_steps_test,
            batch_size: cfg.batch_size,
            rln_lr: cfg.rln_finetune_lr(),
            pln_lr: cfg.pln_finetune_lr(),
            lr_min: cfg.lr_min,
            dropout_seed,
            key_step: (i as u64) << 20,
        };
        let out = finetune(&model, &theta, &head, &train, &ft)?;
        theta = out.theta;
        immediate.push(evaluate(&model, &theta, &out.head, &eval, task.metric)?);
        train_losses.push(out.last_pass_loss);
        heads.push(out.head);
        evals.push(eval);
    }

    let mut final_scores = Vec::with_capacity(stream.len());
    for ((task, head), eval) in stream.tasks.iter().zip(&heads).zip(&evals) {
        let model = spec.for_task(task.kind);
        final_scores.push(evaluate(&model, &theta, head, eval, task.metric)?);
    }

    Ok(MetaTestOutcome {
        matrix: ForgettingMatrix {
            task_ids: stream.tasks.iter().map(|t| t.id.clone()).collect(),
            metrics: stream.tasks.iter().map(|t| t.metric).collect(),
            immediate,
            final_scores,
        },
        theta,
        heads,
        train_losses,
    })
}
