//! Meta-training over an ordered task stream.
//!
//! MAML-Rep adapts a fresh head on the support split with the representation
//! frozen, then takes one outer step on the representation from the query
//! loss of the adapted head. OML runs the same loop but its inner updates
//! consume one sample at a time. The sequential baseline fine-tunes both
//! halves jointly on each task in turn without any outer loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TaskStream};
use crate::error::{Error, Result};
use crate::nn::{init_rln, EncoderSpec, Model, TaskKind, TwoPartModel};
use crate::optim::{adam_step, cosine_lr, sgd_step, AdamState, CosineSchedule, InnerOptimizer};
use crate::params::{Grads, ParamSet};
use crate::tensor::{finite_diff_grad, DropoutKey, Graph, Mode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradMode {
    /// Adapted head treated as a constant of θ.
    #[default]
    FirstOrder,
    /// Central differences through the whole adapt-then-evaluate pipeline.
    ExactFd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerMode {
    /// Step `j` trains on support samples `[j·B, (j+1)·B)`.
    Batched,
    /// Step `j` trains on support sample `j` alone.
    PerSample,
}

impl InnerMode {
    pub fn name(&self) -> &'static str {
        match self {
            InnerMode::Batched => "batched",
            InnerMode::PerSample => "per_sample",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MamlRep,
    Oml,
    Sequential,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::MamlRep => "maml_rep",
            Method::Oml => "oml",
            Method::Sequential => "sequential",
        }
    }

    /// Inner-loop mode of the meta-objectives; `None` for the baseline.
    pub fn inner_mode(&self) -> Option<InnerMode> {
        match self {
            Method::MamlRep => Some(InnerMode::Batched),
            Method::Oml => Some(InnerMode::PerSample),
            Method::Sequential => None,
        }
    }
}

/// Training hyperparameters shared by both meta-phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Head learning rate α.
    pub inner_lr: f64,
    /// Representation learning rate β.
    pub outer_lr: f64,
    /// Floor of every cosine schedule.
    pub lr_min: f64,
    pub inner_steps_train: usize,
    /// Fine-tuning passes over a target task's train split.
    pub inner_steps_test: usize,
    pub batch_size: usize,
    pub support_size: usize,
    pub query_size: usize,
    /// Samples of a target task used for fine-tuning.
    pub test_train_size: usize,
    /// Samples of a target task used for evaluation; all when unset.
    pub test_eval_size: Option<usize>,
    pub meta_epochs: usize,
    pub grad_mode: GradMode,
    pub fd_epsilon: f64,
    /// Largest θ (in coordinates) accepted by the exact meta-gradient.
    pub fd_budget: usize,
    pub seed: u64,
    pub inner_optimizer: InnerOptimizer,
    pub shuffle_tasks: bool,
    /// Re-deal a task's support and query samples at every visit.
    pub resample_episodes: bool,
    pub checkpoint_every: usize,
    /// Representation learning rate while fine-tuning; `outer_lr` if unset.
    pub finetune_rln_lr: Option<f64>,
    /// Head learning rate while fine-tuning; `inner_lr` if unset.
    pub finetune_pln_lr: Option<f64>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            inner_lr: 5e-3,
            outer_lr: 5e-5,
            lr_min: 0.0,
            inner_steps_train: 5,
            inner_steps_test: 7,
            batch_size: 16,
            support_size: 128,
            query_size: 112,
            test_train_size: 100,
            test_eval_size: None,
            meta_epochs: 10,
            grad_mode: GradMode::FirstOrder,
            fd_epsilon: 1e-5,
            fd_budget: 5_000,
            seed: 0,
            inner_optimizer: InnerOptimizer::Sgd,
            shuffle_tasks: false,
            resample_episodes: false,
            checkpoint_every: 5,
            finetune_rln_lr: None,
            finetune_pln_lr: None,
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("batch_size", self.batch_size),
            ("support_size", self.support_size),
            ("query_size", self.query_size),
            ("test_train_size", self.test_train_size),
            ("meta_epochs", self.meta_epochs),
            ("checkpoint_every", self.checkpoint_every),
            ("fd_budget", self.fd_budget),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.test_eval_size == Some(0) {
            return Err(Error::invalid("test_eval_size must be positive"));
        }
        let rates = [
            ("inner_lr", Some(self.inner_lr)),
            ("outer_lr", Some(self.outer_lr)),
            ("lr_min", Some(self.lr_min)),
            ("finetune_rln_lr", self.finetune_rln_lr),
            ("finetune_pln_lr", self.finetune_pln_lr),
        ];
        for (name, v) in rates {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::invalid(format!("{name} must be a finite non-negative number")));
                }
            }
        }
        if !(self.fd_epsilon > 0.0) {
            return Err(Error::invalid("fd_epsilon must be positive"));
        }
        Ok(())
    }

    pub fn rln_finetune_lr(&self) -> f64 {
        self.finetune_rln_lr.unwrap_or(self.outer_lr)
    }

    pub fn pln_finetune_lr(&self) -> f64 {
        self.finetune_pln_lr.unwrap_or(self.inner_lr)
    }
}

/// Independent generator seeds derived from one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeeds {
    pub rln: u64,
    pub head_train: u64,
    pub head_test: u64,
    pub dropout_train: u64,
    pub dropout_test: u64,
    pub shuffle: u64,
    pub episode: u64,
}

impl RunSeeds {
    pub fn new(seed: u64) -> Self {
        let derive = |tag: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(tag);
            rng.gen()
        };
        Self {
            rln: derive(6),
            head_train: derive(1),
            head_test: derive(2),
            dropout_train: derive(3),
            dropout_test: derive(4),
            shuffle: derive(5),
            episode: derive(7),
        }
    }
}

/// Dropout keys of consecutive steps are spaced this far apart per visit.
const KEY_STRIDE: u64 = 1 << 20;
/// Dropout layer id of the prediction network.
const HEAD_LAYER: u64 = 1;

/// The RLN a run starts from.
pub fn initial_theta(encoder: &EncoderSpec, seed: u64) -> Result<ParamSet> {
    init_rln(encoder, RunSeeds::new(seed).rln)
}

/// Encoder plus head options: builds the per-task [`TwoPartModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub encoder: EncoderSpec,
    pub head_hidden: Option<usize>,
}

impl ModelSpec {
    pub fn new(encoder: EncoderSpec) -> Self {
        Self {
            encoder,
            head_hidden: None,
        }
    }

    pub fn for_task(&self, kind: TaskKind) -> TwoPartModel {
        TwoPartModel::new(self.encoder.clone(), kind, self.head_hidden)
    }
}

/// How one inner adaptation runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerLoop {
    pub steps: usize,
    pub lr: f64,
    pub mode: InnerMode,
    pub batch_size: usize,
    pub optimizer: InnerOptimizer,
    /// `Eval` disables dropout (required for exact meta-gradients).
    pub forward_mode: Mode,
    pub dropout_seed: u64,
    /// Dropout key step of the first inner step.
    pub key_step: u64,
}

impl InnerLoop {
    pub fn new(steps: usize, lr: f64, mode: InnerMode, batch_size: usize) -> Self {
        Self {
            steps,
            lr,
            mode,
            batch_size,
            optimizer: InnerOptimizer::Sgd,
            forward_mode: Mode::Eval,
            dropout_seed: 0,
            key_step: 0,
        }
    }
}

/// Adapts the head `w0` on `support` with θ frozen and returns the adapted
/// head. θ only enters the graph as a constant.
pub fn inner_adapt<M: Model>(
    model: &M,
    theta: &ParamSet,
    w0: &ParamSet,
    support: &Dataset,
    inner: &InnerLoop,
) -> Result<ParamSet> {
    if support.is_empty() {
        return Err(Error::InsufficientData {
            what: "inner adaptation support set".into(),
            needed: 1,
            available: 0,
        });
    }
    let per_step = match inner.mode {
        InnerMode::Batched => inner.batch_size,
        InnerMode::PerSample => 1,
    };
    let needed = inner.steps * per_step;
    if needed > support.len() {
        return Err(Error::InsufficientData {
            what: format!("{} inner adaptation ({} steps)", inner.mode.name(), inner.steps),
            needed,
            available: support.len(),
        });
    }

    let mut w = w0.clone();
    let mut adam = AdamState::default();
    for j in 0..inner.steps {
        let batch = support.batch(j * per_step..(j + 1) * per_step)?;
        let mut g = Graph::new();
        let tb = theta.bind(&mut g, false)?;
        let wb = w.bind(&mut g, true)?;
        let key = DropoutKey::new(inner.dropout_seed, inner.key_step + j as u64, HEAD_LAYER);
        let loss = model.batch_loss(&mut g, &tb, &wb, &batch, inner.forward_mode, key)?;
        let grads = g.backward(loss)?;
        w = match inner.optimizer {
            InnerOptimizer::Sgd => sgd_step(&w, &grads, inner.lr)?,
            InnerOptimizer::Adam => {
                let (next, state) = adam_step(&adam, &w, &grads, inner.lr)?;
                adam = state;
                next
            }
        };
    }
    Ok(w)
}

/// Mean loss of `data` as one batch.
pub fn dataset_loss<M: Model>(
    model: &M,
    theta: &ParamSet,
    w: &ParamSet,
    data: &Dataset,
    mode: Mode,
    key: DropoutKey,
) -> Result<f64> {
    let batch = data.full_batch()?;
    let mut g = Graph::new();
    let tb = theta.bind(&mut g, false)?;
    let wb = w.bind(&mut g, false)?;
    let loss = model.batch_loss(&mut g, &tb, &wb, &batch, mode, key)?;
    Ok(g.value(loss).item())
}

/// Settings of [`outer_grad`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterSettings {
    pub inner: InnerLoop,
    pub grad_mode: GradMode,
    pub fd_epsilon: f64,
    pub fd_budget: usize,
}

#[derive(Debug, Clone)]
pub struct OuterGrad {
    /// Gradient of the query loss with respect to θ.
    pub grads: Grads,
    /// Query loss at (θ, adapted head).
    pub query_loss: f64,
    pub adapted: ParamSet,
}

/// Meta-gradient for θ of the query loss after inner adaptation.
///
/// `FirstOrder` differentiates the query loss at the adapted head, holding
/// that head fixed. `ExactFd` differentiates the full map
/// `θ ↦ L_query(θ, adapt(θ))` by central differences with dropout off.
pub fn outer_grad<M: Model>(
    model: &M,
    theta: &ParamSet,
    w0: &ParamSet,
    support: &Dataset,
    query: &Dataset,
    settings: &OuterSettings,
) -> Result<OuterGrad> {
    if query.is_empty() {
        return Err(Error::InsufficientData {
            what: "query set".into(),
            needed: 1,
            available: 0,
        });
    }
    let inner = &settings.inner;
    match settings.grad_mode {
        GradMode::FirstOrder => {
            let adapted = inner_adapt(model, theta, w0, support, inner)?;
            let batch = query.full_batch()?;
            let mut g = Graph::new();
            let tb = theta.bind(&mut g, true)?;
            let wb = adapted.bind(&mut g, false)?;
            let key = DropoutKey::new(
                inner.dropout_seed,
                inner.key_step + inner.steps as u64,
                HEAD_LAYER,
            );
            let loss = model.batch_loss(&mut g, &tb, &wb, &batch, inner.forward_mode, key)?;
            let query_loss = g.value(loss).item();
            let grads = g.backward(loss)?.select(theta)?;
            Ok(OuterGrad {
                grads,
                query_loss,
                adapted,
            })
        }
        GradMode::ExactFd => {
            let coords = theta.numel();
            if coords > settings.fd_budget {
                return Err(Error::FdBudget {
                    coords,
                    budget: settings.fd_budget,
                });
            }
            let frozen = InnerLoop {
                forward_mode: Mode::Eval,
                ..*inner
            };
            let key = DropoutKey::new(0, 0, HEAD_LAYER);
            let pipeline = |th: &ParamSet| -> Result<f64> {
                let w = inner_adapt(model, th, w0, support, &frozen)?;
                dataset_loss(model, th, &w, query, Mode::Eval, key)
            };
            let grads = finite_diff_grad(pipeline, theta, settings.fd_epsilon)?;
            let adapted = inner_adapt(model, theta, w0, support, &frozen)?;
            let query_loss = dataset_loss(model, theta, &adapted, query, Mode::Eval, key)?;
            Ok(OuterGrad {
                grads,
                query_loss,
                adapted,
            })
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub task: String,
    pub loss: f64,
    pub lr: f64,
    pub mode: String,
}

/// θ checksums taken around every inner adaptation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FreezeAudit {
    pub calls: usize,
    pub violations: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub theta: ParamSet,
    pub log: Vec<LogRecord>,
    /// `(epoch, θ)` after every `checkpoint_every` epochs.
    pub checkpoints: Vec<(usize, ParamSet)>,
    pub freeze: FreezeAudit,
}

struct EncodedTask {
    id: String,
    kind: TaskKind,
    support: Dataset,
    query: Dataset,
}

fn encode_meta_train(stream: &TaskStream, encoder: &EncoderSpec, cfg: &Config) -> Result<Vec<EncodedTask>> {
    if stream.is_empty() {
        return Err(Error::EmptyStream);
    }
    stream
        .tasks
        .iter()
        .map(|t| {
            for (split, have, want) in [
                ("support", t.support.len(), cfg.support_size),
                ("query", t.query.len(), cfg.query_size),
            ] {
                if have < want {
                    return Err(Error::InsufficientData {
                        what: format!("{split} split of task `{}`", t.id),
                        needed: want,
                        available: have,
                    });
                }
            }
            Ok(EncodedTask {
                id: t.id.clone(),
                kind: t.kind,
                support: Dataset::encode(&t.support[..cfg.support_size], encoder.vocab_size, encoder.max_len),
                query: Dataset::encode(&t.query[..cfg.query_size], encoder.vocab_size, encoder.max_len),
            })
        })
        .collect()
}

/// Support and query of one visit, drawn without replacement from their union.
fn redeal(task: &EncodedTask, seed: u64, visit: usize) -> Result<(Dataset, Dataset)> {
    let pool = task.support.concat(&task.query);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(RunSeeds::new(seed).episode);
    rng.set_stream(visit as u64);
    order.shuffle(&mut rng);
    let pick = |idx: &[usize]| Dataset::new(idx.iter().map(|&i| pool.examples()[i].clone()).collect());
    let (s, q) = order.split_at(task.support.len());
    Ok((pick(s), pick(q)))
}

/// Task visiting order of one epoch.
fn epoch_order(n: usize, epoch: usize, cfg: &Config) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if cfg.shuffle_tasks {
        let mut rng = ChaCha8Rng::seed_from_u64(RunSeeds::new(cfg.seed).shuffle);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
    }
    order
}

fn outer_schedule(lr: f64, cfg: &Config, total: usize) -> Result<Option<CosineSchedule>> {
    if lr == 0.0 {
        return Ok(None);
    }
    CosineSchedule::new(lr, cfg.lr_min.min(lr), total as u64).map(Some)
}

fn scheduled(schedule: &Option<CosineSchedule>, step: usize) -> Result<f64> {
    match schedule {
        Some(s) => cosine_lr(s, step as u64),
        None => Ok(0.0),
    }
}

/// Meta-trains θ from its run initialization. See [`meta_train_from`].
pub fn meta_train(stream: &TaskStream, spec: &ModelSpec, method: Method, cfg: &Config) -> Result<TrainOutcome> {
    let theta = initial_theta(&spec.encoder, cfg.seed)?;
    meta_train_from(theta, stream, spec, method, cfg)
}

/// MAML-Rep (`Method::MamlRep`) or OML (`Method::Oml`) meta-training.
///
/// For every epoch and every task in stream order: a fresh head is adapted
/// on the support split with θ frozen, then θ takes one Adam step on the
/// query-loss gradient with a cosine-annealed rate over all
/// `meta_epochs × tasks` outer steps.
pub fn meta_train_from(
    theta: ParamSet,
    stream: &TaskStream,
    spec: &ModelSpec,
    method: Method,
    cfg: &Config,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let Some(mode) = method.inner_mode() else {
        return sequential_baseline_from(theta, stream, spec, cfg);
    };
    let tasks = encode_meta_train(stream, &spec.encoder, cfg)?;
    let total = cfg.meta_epochs * tasks.len();
    let schedule = outer_schedule(cfg.outer_lr, cfg, total)?;
    let seeds = RunSeeds::new(cfg.seed);
    let (head_seed, dropout_seed) = (seeds.head_train, seeds.dropout_train);

    let mut theta = theta;
    let mut adam = AdamState::default();
    let mut log = Vec::with_capacity(total);
    let mut checkpoints = Vec::new();
    let mut freeze = FreezeAudit::default();
    let mut visit = 0usize;

    for epoch in 0..cfg.meta_epochs {
        for ti in epoch_order(tasks.len(), epoch, cfg) {
            let task = &tasks[ti];
            let model = spec.for_task(task.kind);
            let w0 = model.init_head(head_seed, visit as u64)?;
            let settings = OuterSettings {
                inner: InnerLoop {
                    steps: cfg.inner_steps_train,
                    lr: cfg.inner_lr,
                    mode,
                    batch_size: cfg.batch_size,
                    optimizer: cfg.inner_optimizer,
                    forward_mode: Mode::Train,
                    dropout_seed,
                    key_step: visit as u64 * KEY_STRIDE,
                },
                grad_mode: cfg.grad_mode,
                fd_epsilon: cfg.fd_epsilon,
                fd_budget: cfg.fd_budget,
            };

            let (support, query) = if cfg.resample_episodes {
                redeal(task, cfg.seed, visit)?
            } else {
                (task.support.clone(), task.query.clone())
            };
            let before = theta.checksum();
            let outer = outer_grad(&model, &theta, &w0, &support, &query, &settings)?;
            freeze.calls += 1;
            if theta.checksum() != before {
                freeze.violations += 1;
            }

            let lr = scheduled(&schedule, visit)?;
            let (next, state) = adam_step(&adam, &theta, &outer.grads, lr)?;
            theta = next;
            adam = state;
            log.push(LogRecord {
                epoch: epoch + 1,
                task: task.id.clone(),
                loss: outer.query_loss,
                lr,
                mode: mode.name().to_owned(),
            });
            visit += 1;
        }
        if (epoch + 1) % cfg.checkpoint_every == 0 {
            checkpoints.push((epoch + 1, theta.clone()));
        }
    }
    Ok(TrainOutcome {
        theta,
        log,
        checkpoints,
        freeze,
    })
}

/// Learning rates and randomness of a joint fine-tuning run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Finetune {
    pub passes: usize,
    pub batch_size: usize,
    pub rln_lr: f64,
    pub pln_lr: f64,
    pub lr_min: f64,
    pub dropout_seed: u64,
    pub key_step: u64,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub theta: ParamSet,
    pub head: ParamSet,
    /// Mean mini-batch loss of the last pass (NaN without any pass).
    pub last_pass_loss: f64,
}

/// Joint Adam fine-tuning of θ and the head over `passes` passes of `data`
/// in mini-batches, both rates cosine-annealed over all updates.
pub fn finetune<M: Model>(
    model: &M,
    theta: &ParamSet,
    head: &ParamSet,
    data: &Dataset,
    ft: &Finetune,
) -> Result<FinetuneOutcome> {
    if data.is_empty() {
        return Err(Error::InsufficientData {
            what: "fine-tuning data".into(),
            needed: 1,
            available: 0,
        });
    }
    let per_pass = data.len().div_ceil(ft.batch_size);
    let total = ft.passes * per_pass;
    let cfg_floor = |lr: f64| -> Result<Option<CosineSchedule>> {
        if lr == 0.0 || total == 0 {
            Ok(None)
        } else {
            CosineSchedule::new(lr, ft.lr_min.min(lr), total as u64).map(Some)
        }
    };
    let rln_schedule = cfg_floor(ft.rln_lr)?;
    let pln_schedule = cfg_floor(ft.pln_lr)?;

    let mut theta = theta.clone();
    let mut head = head.clone();
    let mut rln_adam = AdamState::default();
    let mut pln_adam = AdamState::default();
    let mut last_pass_loss = f64::NAN;
    let mut step = 0usize;
    for _ in 0..ft.passes {
        let mut pass_loss = 0.0;
        for b in 0..per_pass {
            let range = b * ft.batch_size..((b + 1) * ft.batch_size).min(data.len());
            let batch = data.batch(range)?;
            let mut g = Graph::new();
            let tb = theta.bind(&mut g, true)?;
            let wb = head.bind(&mut g, true)?;
            let key = DropoutKey::new(ft.dropout_seed, ft.key_step + step as u64, HEAD_LAYER);
            let loss = model.batch_loss(&mut g, &tb, &wb, &batch, Mode::Train, key)?;
            pass_loss += g.value(loss).item();
            let grads = g.backward(loss)?;
            let (t_next, t_state) = adam_step(&rln_adam, &theta, &grads, scheduled(&rln_schedule, step)?)?;
            let (w_next, w_state) = adam_step(&pln_adam, &head, &grads, scheduled(&pln_schedule, step)?)?;
            theta = t_next;
            head = w_next;
            rln_adam = t_state;
            pln_adam = w_state;
            step += 1;
        }
        last_pass_loss = pass_loss / per_pass as f64;
    }
    Ok(FinetuneOutcome {
        theta,
        head,
        last_pass_loss,
    })
}

/// Baseline from the run initialization. See [`sequential_baseline_from`].
pub fn sequential_baseline(stream: &TaskStream, spec: &ModelSpec, cfg: &Config) -> Result<TrainOutcome> {
    let theta = initial_theta(&spec.encoder, cfg.seed)?;
    sequential_baseline_from(theta, stream, spec, cfg)
}

/// One shared θ trained once through the tasks in order: each task gets a
/// fresh head and `inner_steps_test` joint fine-tuning passes over its
/// support and query samples. No freezing, no outer loop and no epochs.
pub fn sequential_baseline_from(
    theta: ParamSet,
    stream: &TaskStream,
    spec: &ModelSpec,
    cfg: &Config,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let tasks = encode_meta_train(stream, &spec.encoder, cfg)?;
    let seeds = RunSeeds::new(cfg.seed);
    let (head_seed, dropout_seed) = (seeds.head_train, seeds.dropout_train);

    let mut theta = theta;
    let mut log = Vec::with_capacity(tasks.len());
    for (visit, task) in tasks.iter().enumerate() {
        let model = spec.for_task(task.kind);
        let head = model.init_head(head_seed, visit as u64)?;
        let data = task.support.concat(&task.query);
        let ft = Finetune {
            passes: cfg.inner_steps_test,
            batch_size: cfg.batch_size,
            rln_lr: cfg.rln_finetune_lr(),
            pln_lr: cfg.pln_finetune_lr(),
            lr_min: cfg.lr_min,
            dropout_seed,
            key_step: visit as u64 * KEY_STRIDE,
        };
        let out = finetune(&model, &theta, &head, &data, &ft)?;
        theta = out.theta;
        log.push(LogRecord {
            epoch: 1,
            task: task.id.clone(),
            loss: out.last_pass_loss,
            lr: ft.rln_lr,
            mode: "joint".into(),
        });
    }
    Ok(TrainOutcome {
        theta,
        log,
        checkpoints: Vec::new(),
        freeze: FreezeAudit::default(),
    })
}

/// `k` consecutive samples of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub task_id: String,
    pub start: usize,
    pub samples: Dataset,
}

impl Trajectory {
    /// Uniformly placed window of `k` consecutive samples of `data`.
    pub fn sample(task_id: &str, data: &Dataset, k: usize, rng: &mut impl Rng) -> Result<Trajectory> {
        if k == 0 || k > data.len() {
            return Err(Error::InsufficientData {
                what: format!("trajectory of task `{task_id}`"),
                needed: k.max(1),
                available: data.len(),
            });
        }
        let start = rng.gen_range(0..=data.len() - k);
        Ok(Trajectory {
            task_id: task_id.to_owned(),
            start,
            samples: data.subset(start..start + k)?,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// OML objective: for every task, a fresh head adapted one sample at a time
/// along a sampled trajectory of length `k` from the support split, scored
/// by its loss on the held-out query split; summed over tasks. Dropout is
/// off, so the value is a deterministic function of its arguments.
pub fn oml_objective(
    theta: &ParamSet,
    spec: &ModelSpec,
    stream: &TaskStream,
    k: usize,
    alpha: f64,
    head_seed: u64,
    cfg: &Config,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("trajectory length must be at least 1"));
    }
    if stream.is_empty() {
        return Err(Error::EmptyStream);
    }
    let enc = &spec.encoder;
    let mut total = 0.0;
    for (i, task) in stream.tasks.iter().enumerate() {
        if task.support.len() < k || task.query.is_empty() {
            return Err(Error::InsufficientData {
                what: format!("OML objective on task `{}` (trajectory + held-out)", task.id),
                needed: k + 1,
                available: task.support.len() + task.query.len(),
            });
        }
        let support = Dataset::encode(&task.support, enc.vocab_size, enc.max_len);
        let held_out = Dataset::encode(&task.query, enc.vocab_size, enc.max_len);
        let model = spec.for_task(task.kind);
        let w0 = model.init_head(head_seed, i as u64)?;
        let mut rng = ChaCha8Rng::seed_from_u64(head_seed);
        rng.set_stream(i as u64);
        let trajectory = Trajectory::sample(&task.id, &support, k, &mut rng)?;
        let inner = InnerLoop {
            optimizer: cfg.inner_optimizer,
            ..InnerLoop::new(k, alpha, InnerMode::PerSample, 1)
        };
        let w = inner_adapt(&model, theta, &w0, &trajectory.samples, &inner)?;
        total += dataset_loss(&model, theta, &w, &held_out, Mode::Eval, DropoutKey::new(0, 0, HEAD_LAYER))?;
    }
    Ok(total)
}
