//! The two-part model: a representation network (RLN, parameters θ) that
//! maps token sequences to a fixed-size vector, and a per-task prediction
//! network (PLN, parameters W) that maps that vector to task outputs.
//!
//! The RLN is `embedding → masked mean-pool → tanh MLP`. The PLN is an
//! optional tanh hidden layer followed by a linear output layer, with
//! dropout on its input during training.
//!
//! Nothing in this module mutates a [`ParamSet`]; parameters enter a graph
//! through [`ParamSet::bind`] and all updates happen in [`crate::optim`].

use rand::distributions::Uniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, BatchInput, Targets, TokenBatch};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamSet, Role};
use crate::tensor::{DropoutKey, Graph, Mode, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum TaskKind {
    Classification { num_classes: usize },
    Regression,
}

impl TaskKind {
    pub fn output_dim(&self) -> usize {
        match *self {
            TaskKind::Classification { num_classes } => num_classes,
            TaskKind::Regression => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSpec {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub max_len: usize,
    /// Dropout applied to the prediction network's input.
    pub dropout_rate: f64,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self {
            vocab_size: 4096,
            embed_dim: 64,
            hidden_dims: vec![128, 64],
            max_len: 64,
            dropout_rate: 0.1,
        }
    }
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 3 {
            return Err(Error::invalid("vocab_size must be at least 3 (pad, separator, one word)"));
        }
        if self.embed_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::invalid("encoder dimensions must be positive"));
        }
        if self.max_len == 0 {
            return Err(Error::invalid("max_len must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!("dropout_rate {} not in [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    /// Width of the representation: the last hidden dim, or the embedding
    /// width without hidden layers.
    pub fn rep_dim(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(self.embed_dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadSpec {
    pub kind: TaskKind,
    pub input_dim: usize,
    /// Width of an optional tanh hidden layer.
    pub hidden: Option<usize>,
    pub dropout_rate: f64,
}

impl HeadSpec {
    pub fn new(kind: TaskKind, encoder: &EncoderSpec, hidden: Option<usize>) -> Self {
        Self {
            kind,
            input_dim: encoder.rep_dim(),
            hidden,
            dropout_rate: encoder.dropout_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let TaskKind::Classification { num_classes } = self.kind {
            if num_classes < 2 {
                return Err(Error::invalid("classification needs at least 2 classes"));
            }
        }
        if self.input_dim == 0 || self.hidden == Some(0) {
            return Err(Error::invalid("head dimensions must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!("dropout_rate {} not in [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }
}

const EMBED: &str = "rln.embed";
const HEAD_HIDDEN_W: &str = "pln.hidden.weight";
const HEAD_HIDDEN_B: &str = "pln.hidden.bias";
const HEAD_OUT_W: &str = "pln.out.weight";
const HEAD_OUT_B: &str = "pln.out.bias";

fn rln_layer(i: usize) -> (String, String) {
    (format!("rln.fc{i}.weight"), format!("rln.fc{i}.bias"))
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    let data = (0..fan_in * fan_out).map(|_| rng.sample(dist)).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("positive dims")
}

/// Fresh RLN parameters: uniform weights with bound
/// `sqrt(6 / (fan_in + fan_out))`, zero biases.
pub fn init_rln(spec: &EncoderSpec, seed: u64) -> Result<ParamSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new(Role::Rln);
    p.insert(EMBED, glorot(&mut rng, spec.vocab_size, spec.embed_dim))?;
    let mut fan_in = spec.embed_dim;
    for (i, &width) in spec.hidden_dims.iter().enumerate() {
        let (w, b) = rln_layer(i);
        p.insert(w, glorot(&mut rng, fan_in, width))?;
        p.insert(b, Tensor::zeros(&[width]))?;
        fan_in = width;
    }
    Ok(p)
}

/// Fresh PLN parameters. Each `stream` (one per task visit) draws from an
/// independent generator stream of `seed`.
pub fn init_pln(spec: &HeadSpec, seed: u64, stream: u64) -> Result<ParamSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut p = ParamSet::new(Role::Pln);
    let mut fan_in = spec.input_dim;
    if let Some(h) = spec.hidden {
        p.insert(HEAD_HIDDEN_W, glorot(&mut rng, fan_in, h))?;
        p.insert(HEAD_HIDDEN_B, Tensor::zeros(&[h]))?;
        fan_in = h;
    }
    let out = spec.kind.output_dim();
    p.insert(HEAD_OUT_W, glorot(&mut rng, fan_in, out))?;
    p.insert(HEAD_OUT_B, Tensor::zeros(&[out]))?;
    Ok(p)
}

/// RLN forward pass: `[batch × max_len]` tokens to `[batch × rep_dim]`.
pub fn encode(g: &mut Graph, theta: &Bound, spec: &EncoderSpec, tokens: &TokenBatch) -> Result<Var> {
    let shape = [tokens.batch_size(), tokens.len()];
    let embedded = g.embedding(theta.get(EMBED)?, &tokens.ids, &shape)?;
    let mut h = g.masked_mean_pool(embedded, &tokens.mask)?;
    for i in 0..spec.hidden_dims.len() {
        let (w, b) = rln_layer(i);
        let z = g.matmul(h, theta.get(&w)?)?;
        let z = g.add(z, theta.get(&b)?)?;
        h = g.tanh(z)?;
    }
    Ok(h)
}

/// PLN forward pass: logits `[batch × classes]` or scores `[batch × 1]`.
pub fn predict(g: &mut Graph, w: &Bound, spec: &HeadSpec, rep: Var, mode: Mode, key: DropoutKey) -> Result<Var> {
    let shape = g.shape(rep).to_vec();
    if shape.len() != 2 || shape[1] != spec.input_dim {
        return Err(Error::Shape {
            op: "predict",
            left: shape,
            right: vec![spec.input_dim],
        });
    }
    let mut h = g.dropout(rep, spec.dropout_rate, mode, key)?;
    if spec.hidden.is_some() {
        let z = g.matmul(h, w.get(HEAD_HIDDEN_W)?)?;
        let z = g.add(z, w.get(HEAD_HIDDEN_B)?)?;
        h = g.tanh(z)?;
    }
    let z = g.matmul(h, w.get(HEAD_OUT_W)?)?;
    g.add(z, w.get(HEAD_OUT_B)?)
}

/// Mean batch loss: softmax cross-entropy for classification, squared error
/// for regression.
pub fn loss(g: &mut Graph, output: Var, targets: &Targets, kind: TaskKind) -> Result<Var> {
    match (kind, targets) {
        (TaskKind::Classification { .. }, Targets::Classes(c)) => g.softmax_cross_entropy(output, c),
        (TaskKind::Regression, Targets::Scores(s)) => {
            let target = Tensor::new(vec![s.len(), 1], s.clone())?;
            g.mse(output, &target)
        }
        (kind, _) => Err(Error::invalid(format!("targets do not match task kind {kind:?}"))),
    }
}

/// Anything trainable by the meta-learning loops: a shared representation
/// θ and a per-task head W evaluated on a batch.
pub trait Model {
    fn kind(&self) -> TaskKind;

    /// A freshly initialized head for generator stream `stream`.
    fn init_head(&self, seed: u64, stream: u64) -> Result<ParamSet>;

    /// Task output for `batch` (before the loss).
    fn forward(&self, g: &mut Graph, theta: &Bound, w: &Bound, batch: &Batch, mode: Mode, key: DropoutKey)
        -> Result<Var>;

    /// Mean loss of `batch`.
    fn batch_loss(
        &self,
        g: &mut Graph,
        theta: &Bound,
        w: &Bound,
        batch: &Batch,
        mode: Mode,
        key: DropoutKey,
    ) -> Result<Var> {
        let out = self.forward(g, theta, w, batch, mode, key)?;
        loss(g, out, &batch.targets, self.kind())
    }
}

/// RLN + PLN for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPartModel {
    pub encoder: EncoderSpec,
    pub head: HeadSpec,
}

impl TwoPartModel {
    pub fn new(encoder: EncoderSpec, kind: TaskKind, head_hidden: Option<usize>) -> Self {
        let head = HeadSpec::new(kind, &encoder, head_hidden);
        Self { encoder, head }
    }
}

impl Model for TwoPartModel {
    fn kind(&self) -> TaskKind {
        self.head.kind
    }

    fn init_head(&self, seed: u64, stream: u64) -> Result<ParamSet> {
        init_pln(&self.head, seed, stream)
    }

    fn forward(
        &self,
        g: &mut Graph,
        theta: &Bound,
        w: &Bound,
        batch: &Batch,
        mode: Mode,
        key: DropoutKey,
    ) -> Result<Var> {
        let BatchInput::Tokens(tokens) = &batch.input else {
            return Err(Error::invalid("text model expects token inputs"));
        };
        let rep = encode(g, theta, &self.encoder, tokens)?;
        predict(g, w, &self.head, rep, mode, key)
    }
}
