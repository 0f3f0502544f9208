use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};
use crate::params::Grads;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Whether stochastic layers are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Key of the counter-based generator behind dropout masks. Identical keys
/// always produce identical masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DropoutKey {
    pub seed: u64,
    pub step: u64,
    pub layer: u64,
}

impl DropoutKey {
    pub fn new(seed: u64, step: u64, layer: u64) -> Self {
        Self { seed, step, layer }
    }

    fn rng(&self) -> ChaCha8Rng {
        let mut bytes = [0u8; 32];
        bytes[..8].copy_from_slice(&self.seed.to_le_bytes());
        bytes[8..16].copy_from_slice(&self.step.to_le_bytes());
        bytes[16..24].copy_from_slice(&self.layer.to_le_bytes());
        bytes[24..].copy_from_slice(b"dropout\0");
        ChaCha8Rng::from_seed(bytes)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    /// Right operand broadcast over the leading axis of the left one.
    AddBroadcast(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Mean {
        input: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Sum(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    MaskedMeanPool {
        input: Var,
        weights: Vec<f64>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        targets: Vec<usize>,
    },
    Mse {
        pred: Var,
        target: Vec<f64>,
    },
    Dropout {
        input: Var,
        multiplier: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    param: Option<String>,
}

/// Append-only record of one forward pass.
///
/// Parents always precede their children, so the node order is a valid
/// topological order and the backward sweep is a single reverse scan.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push("constant", value, Op::Leaf, None)
    }

    /// A named leaf whose gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, name: &str, value: Tensor) -> Result<Var> {
        if self
            .nodes
            .iter()
            .any(|n| n.param.as_deref() == Some(name))
        {
            return Err(Error::invalid(format!(
                "parameter `{name}` registered twice in one graph"
            )));
        }
        self.push("param", value, Op::Leaf, Some(name.to_owned()))
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, param: Option<String>) -> Result<Var> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, op, param });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (k2, n) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(self.shape_err("matmul", a, b));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        self.push("matmul", t, Op::MatMul(a, b), None)
    }

    /// Elementwise sum. When shapes differ, `b` must match `a` with its
    /// leading axis removed (or set to 1) and is broadcast over that axis.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b);
        if sa == sb {
            let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
            let t = Tensor::new(sa, data)?;
            return self.push("add", t, Op::Add(a, b), None);
        }
        let rest = &sa[1..];
        let broadcastable = sb == rest || (sb.len() == sa.len() && sb[0] == 1 && &sb[1..] == rest);
        if !broadcastable || rest.is_empty() {
            return Err(self.shape_err("add", a, b));
        }
        let bd = self.value(b).data();
        let data: Vec<f64> = self
            .value(a)
            .data()
            .chunks(bd.len())
            .flat_map(|row| row.iter().zip(bd).map(|(x, y)| x + y))
            .collect();
        let t = Tensor::new(sa, data)?;
        self.push("add", t, Op::AddBroadcast(a, b), None)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err("mul", a, b));
        }
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push("mul", t, Op::Mul(a, b), None)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.map(a, |x| x * c);
        self.push("scale", t, Op::Scale(a, c), None)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.map(a, |x| x.max(0.0));
        self.push("relu", t, Op::Relu(a), None)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let t = self.map(a, f64::tanh);
        self.push("tanh", t, Op::Tanh(a), None)
    }

    /// Mean over `axis`; the axis is removed from the shape.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape {
                op: "mean",
                left: shape,
                right: vec![axis],
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] += x[base + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= len as f64);
        let mut out_shape: Vec<usize> = shape[..axis].iter().chain(&shape[axis + 1..]).copied().collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let t = Tensor::new(out_shape, out)?;
        self.push("mean", t, Op::Mean { input: a, outer, len, inner }, None)
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), None)
    }

    /// Gathers rows of `table` (`[vocab × dim]`). The output shape is
    /// `ids_shape` followed by `dim`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], ids_shape: &[usize]) -> Result<Var> {
        let (vocab, dim) = self.value(table).dims2("embedding_lookup")?;
        if ids_shape.iter().product::<usize>() != ids.len() {
            return Err(Error::Shape {
                op: "embedding_lookup",
                left: ids_shape.to_vec(),
                right: vec![ids.len()],
            });
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::invalid(format!(
                "embedding_lookup: token id {bad} outside vocabulary of size {vocab}"
            )));
        }
        let tab = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            out.extend_from_slice(&tab[id * dim..(id + 1) * dim]);
        }
        let mut shape = ids_shape.to_vec();
        shape.push(dim);
        let t = Tensor::new(shape, out)?;
        self.push(
            "embedding_lookup",
            t,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            None,
        )
    }

    /// Mean over the token axis of `x` (`[batch × len × dim]`) restricted to
    /// positions where `mask` (`[batch × len]`, entries 0 or 1) is 1. Rows
    /// without any real token pool to zero.
    pub fn masked_mean_pool(&mut self, x: Var, mask: &Tensor) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let [batch, len, dim] = shape[..] else {
            return Err(Error::Shape {
                op: "masked_mean_pool",
                left: shape,
                right: mask.shape().to_vec(),
            });
        };
        if mask.shape() != [batch, len] {
            return Err(Error::Shape {
                op: "masked_mean_pool",
                left: shape,
                right: mask.shape().to_vec(),
            });
        }
        if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::invalid("masked_mean_pool: mask entries must be 0 or 1"));
        }
        let mut weights = mask.data().to_vec();
        for row in weights.chunks_mut(len) {
            let count: f64 = row.iter().sum();
            if count > 0.0 {
                row.iter_mut().for_each(|w| *w /= count);
            }
        }
        let xd = self.value(x).data();
        let mut out = vec![0.0; batch * dim];
        for b in 0..batch {
            for l in 0..len {
                let w = weights[b * len + l];
                if w == 0.0 {
                    continue;
                }
                let src = &xd[(b * len + l) * dim..(b * len + l + 1) * dim];
                for (o, s) in out[b * dim..(b + 1) * dim].iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        let t = Tensor::new(vec![batch, dim], out)?;
        self.push("masked_mean_pool", t, Op::MaskedMeanPool { input: x, weights }, None)
    }

    /// Mean softmax cross-entropy of `logits` (`[batch × classes]`) against
    /// class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (batch, classes) = self.value(logits).dims2("softmax_cross_entropy")?;
        if targets.len() != batch {
            return Err(Error::Shape {
                op: "softmax_cross_entropy",
                left: vec![batch, classes],
                right: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
            return Err(Error::invalid(format!(
                "softmax_cross_entropy: class index {bad} not in [0, {classes})"
            )));
        }
        let x = self.value(logits).data();
        let mut probs = vec![0.0; x.len()];
        let mut total = 0.0;
        for b in 0..batch {
            let row = &x[b * classes..(b + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + sum_exp.ln();
            for c in 0..classes {
                probs[b * classes + c] = (row[c] - log_z).exp();
            }
            total += log_z - row[targets[b]];
        }
        let t = Tensor::scalar(total / batch as f64);
        self.push(
            "softmax_cross_entropy",
            t,
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                targets: targets.to_vec(),
            },
            None,
        )
    }

    /// Mean squared error against a constant target of the same shape.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return Err(Error::Shape {
                op: "mse",
                left: self.shape(pred).to_vec(),
                right: target.shape().to_vec(),
            });
        }
        if !target.is_finite() {
            return Err(Error::NonFinite { op: "mse" });
        }
        let p = self.value(pred).data();
        let n = p.len() as f64;
        let loss = p
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        self.push(
            "mse",
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.data().to_vec(),
            },
            None,
        )
    }

    /// Inverted dropout. In [`Mode::Eval`], or with `rate == 0`, this returns
    /// `x` itself.
    pub fn dropout(&mut self, x: Var, rate: f64, mode: Mode, key: DropoutKey) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} not in [0, 1)")));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let mut rng = key.rng();
        let keep = 1.0 / (1.0 - rate);
        let multiplier: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = zip_map(self.value(x).data(), &multiplier, |a, m| a * m);
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push("dropout", t, Op::Dropout { input: x, multiplier }, None)
    }

    /// Reverse sweep from a scalar `root`. Returns one gradient per
    /// registered parameter, in registration order; parameters that do not
    /// influence `root` receive zeros. A graph supports a single backward
    /// pass.
    pub fn backward(&mut self, root: Var) -> Result<Grads> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        if !self.value(root).is_scalar() {
            return Err(Error::NonScalarRoot(self.shape(root).to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.value(*a).dims2("matmul")?;
                    let n = self.value(*b).shape()[1];
                    let ad = self.value(*a).data();
                    let bd = self.value(*b).data();
                    let mut da = vec![0.0; m * k];
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                da[i * k + p] += gij * bd[p * n + j];
                                db[p * n + j] += gij * ad[i * k + p];
                            }
                        }
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddBroadcast(a, b) => {
                    let width = self.value(*b).numel();
                    let mut db = vec![0.0; width];
                    for row in g.chunks(width) {
                        db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                    }
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *b, db);
                }
                Op::Mul(a, b) => {
                    let da = zip_map(&g, self.value(*b).data(), |x, y| x * y);
                    let db = zip_map(&g, self.value(*a).data(), |x, y| x * y);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(a, c) => {
                    let da = g.iter().map(|x| x * c).collect();
                    accumulate(&mut grads, *a, da);
                }
                Op::Relu(a) => {
                    let da = zip_map(&g, self.value(*a).data(), |x, v| if v > 0.0 { x } else { 0.0 });
                    accumulate(&mut grads, *a, da);
                }
                Op::Tanh(a) => {
                    let da = zip_map(&g, node.value.data(), |x, y| x * (1.0 - y * y));
                    accumulate(&mut grads, *a, da);
                }
                Op::Mean {
                    input,
                    outer,
                    len,
                    inner,
                } => {
                    let mut da = vec![0.0; outer * len * inner];
                    let scale = 1.0 / *len as f64;
                    for o in 0..*outer {
                        for l in 0..*len {
                            for i in 0..*inner {
                                da[(o * len + l) * inner + i] = g[o * inner + i] * scale;
                            }
                        }
                    }
                    accumulate(&mut grads, *input, da);
                }
                Op::Sum(a) => {
                    let da = vec![g[0]; self.value(*a).numel()];
                    accumulate(&mut grads, *a, da);
                }
                Op::Embedding { table, ids } => {
                    let (vocab, dim) = self.value(*table).dims2("embedding_lookup")?;
                    let mut dt = vec![0.0; vocab * dim];
                    for (pos, &id) in ids.iter().enumerate() {
                        let src = &g[pos * dim..(pos + 1) * dim];
                        dt[id * dim..(id + 1) * dim]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, s)| *d += s);
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::MaskedMeanPool { input, weights } => {
                    let shape = self.shape(*input);
                    let (batch, len, dim) = (shape[0], shape[1], shape[2]);
                    let mut dx = vec![0.0; batch * len * dim];
                    for b in 0..batch {
                        for l in 0..len {
                            let w = weights[b * len + l];
                            if w == 0.0 {
                                continue;
                            }
                            let dst = &mut dx[(b * len + l) * dim..(b * len + l + 1) * dim];
                            dst.iter_mut()
                                .zip(&g[b * dim..(b + 1) * dim])
                                .for_each(|(d, s)| *d = w * s);
                        }
                    }
                    accumulate(&mut grads, *input, dx);
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    probs,
                    targets,
                } => {
                    let batch = targets.len();
                    let classes = probs.len() / batch;
                    let scale = g[0] / batch as f64;
                    let mut dl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (b, &t) in targets.iter().enumerate() {
                        dl[b * classes + t] -= scale;
                    }
                    accumulate(&mut grads, *logits, dl);
                }
                Op::Mse { pred, target } => {
                    let n = target.len() as f64;
                    let dp = zip_map(self.value(*pred).data(), target, |p, t| 2.0 * (p - t) / n * g[0]);
                    accumulate(&mut grads, *pred, dp);
                }
                Op::Dropout { input, multiplier } => {
                    let dx = zip_map(&g, multiplier, |x, m| x * m);
                    accumulate(&mut grads, *input, dx);
                }
            }
        }

        let mut out = Grads::default();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Some(name) = &node.param {
                let shape = node.value.shape().to_vec();
                let grad = match grads.get_mut(idx).and_then(Option::take) {
                    Some(data) => Tensor::new(shape, data)?,
                    None => Tensor::zeros(&shape),
                };
                if !grad.is_finite() {
                    return Err(Error::NonFinite { op: "backward" });
                }
                out.insert(name.clone(), grad);
            }
        }
        Ok(out)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| f(x)).collect();
        Tensor::new(v.shape().to_vec(), data).expect("shape preserved")
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Shape {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, contribution: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => existing
            .iter_mut()
            .zip(contribution)
            .for_each(|(e, c)| *e += c),
        slot @ None => *slot = Some(contribution),
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln_c() {
        let mut g = Graph::new();
        let logits = g.constant(Tensor::zeros(&[1, 4])).unwrap();
        let loss = g.softmax_cross_entropy(logits, &[2]).unwrap();
        assert!((g.value(loss).item() - 4f64.ln()).abs() < 1e-12);
        assert!((g.value(loss).item() - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn mse_of_identical_is_zero() {
        let x = t(&[2, 3], &[1.0, -2.0, 3.5, 0.0, 7.0, 1e-3]);
        let mut g = Graph::new();
        let p = g.constant(x.clone()).unwrap();
        let l = g.mse(p, &x).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let i = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0])).unwrap();
        let c = g.matmul(a, i).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn product_gradient() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::scalar(3.0)).unwrap();
        let y = g.param("y", Tensor::scalar(5.0)).unwrap();
        let f = g.mul(x, y).unwrap();
        let grads = g.backward(f).unwrap();
        assert_eq!(grads.get("x").unwrap().item(), 5.0);
        assert_eq!(grads.get("y").unwrap().item(), 3.0);
    }

    #[test]
    fn second_backward_is_an_error() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::scalar(3.0)).unwrap();
        let f = g.mul(x, x).unwrap();
        g.backward(f).unwrap();
        assert!(matches!(g.backward(f), Err(Error::GraphConsumed)));
        assert!(matches!(g.constant(Tensor::scalar(1.0)), Err(Error::GraphConsumed)));
    }

    #[test]
    fn non_scalar_root_is_an_error() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::zeros(&[2])).unwrap();
        assert!(matches!(g.backward(x), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn unused_param_gets_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::scalar(2.0)).unwrap();
        g.param("unused", Tensor::zeros(&[2, 3])).unwrap();
        let f = g.mul(x, x).unwrap();
        let grads = g.backward(f).unwrap();
        assert_eq!(grads.get("unused").unwrap(), &Tensor::zeros(&[2, 3]));
        assert_eq!(grads.get("x").unwrap().item(), 4.0);
    }

    #[test]
    fn shape_errors_name_primitive_and_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
        let c = g.constant(Tensor::zeros(&[4])).unwrap();
        let err = g.add(a, c).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[4]"), "{err}");
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        let mut g = Graph::new();
        assert!(matches!(
            g.constant(Tensor::scalar(f64::NAN)),
            Err(Error::NonFinite { .. })
        ));
        let big = g.constant(Tensor::scalar(1e300)).unwrap();
        assert!(matches!(g.mul(big, big), Err(Error::NonFinite { op: "mul" })));
    }

    #[test]
    fn class_index_out_of_range() {
        let mut g = Graph::new();
        let logits = g.constant(Tensor::zeros(&[1, 3])).unwrap();
        assert!(g.softmax_cross_entropy(logits, &[3]).is_err());
    }

    #[test]
    fn broadcast_add_over_leading_axis() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let b = g.param("b", t(&[2], &[10.0, 20.0])).unwrap();
        let c = g.add(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[11.0, 22.0, 13.0, 24.0]);
        let s = g.sum(c).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get("b").unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 3], &[1.0, 2.0, 3.0])).unwrap();
        let y = g.dropout(x, 0.5, Mode::Eval, DropoutKey::new(1, 2, 3)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_mask_depends_only_on_key() {
        let run = |key| {
            let mut g = Graph::new();
            let x = g.constant(Tensor::full(&[8, 8], 1.0)).unwrap();
            let y = g.dropout(x, 0.5, Mode::Train, key).unwrap();
            g.value(y).clone()
        };
        let k = DropoutKey::new(7, 3, 1);
        assert_eq!(run(k), run(k));
        assert_ne!(run(k), run(DropoutKey::new(7, 4, 1)));
        let kept = run(k).data().iter().filter(|&&v| v != 0.0).count();
        assert!(kept > 16 && kept < 48, "kept {kept} of 64");
        assert!(run(k).data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn mean_over_axes() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0])).unwrap();
        let m0 = g.mean(a, 0).unwrap();
        let m1 = g.mean(a, 1).unwrap();
        assert_eq!(g.value(m0).data(), &[2.5, 3.5, 4.5]);
        assert_eq!(g.value(m1).data(), &[2.0, 5.0]);
    }

    #[test]
    fn embedding_rejects_out_of_range_ids() {
        let mut g = Graph::new();
        let table = g.param("e", Tensor::zeros(&[4, 2])).unwrap();
        assert!(g.embedding(table, &[0, 4], &[1, 2]).is_err());
        let e = g.embedding(table, &[3, 3], &[1, 2]).unwrap();
        assert_eq!(g.shape(e), &[1, 2, 2]);
    }
}
