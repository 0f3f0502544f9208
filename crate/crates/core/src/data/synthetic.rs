use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Label, Metric, Phase, Sample, SplitSizes, Task, TaskStream};
use crate::error::{Error, Result};
use crate::nn::TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticTask {
    /// Binary label: does the text contain a word of the task's secret subset?
    Classification,
    /// Sentence pair scored by the overlap of its word sets, on a 0–5 scale.
    Regression,
}

/// Parameters of a generated task stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_tasks: usize,
    pub samples_per_task: usize,
    /// Number of distinct generator words (`w0`, `w1`, ...).
    pub vocab: usize,
    /// Task kinds, cycled over the task index.
    pub kinds: Vec<SyntheticTask>,
    /// Fraction of flipped labels in every classification split; chance of
    /// a uniform replacement score for regression samples.
    pub noise_rate: f64,
    pub secret_size: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub classification_metric: Metric,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_tasks: 4,
            samples_per_task: 400,
            vocab: 200,
            kinds: vec![SyntheticTask::Classification],
            noise_rate: 0.0,
            secret_size: 4,
            min_words: 6,
            max_words: 12,
            classification_metric: Metric::Accuracy,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_tasks == 0 {
            return Err(Error::invalid("synthetic stream needs at least one task"));
        }
        if self.kinds.is_empty() {
            return Err(Error::invalid("synthetic stream needs at least one task kind"));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::invalid(format!("noise_rate {} not in [0, 1]", self.noise_rate)));
        }
        if self.secret_size == 0 || self.min_words == 0 || self.min_words > self.max_words {
            return Err(Error::invalid(
                "secret_size and min_words must be positive with min_words <= max_words",
            ));
        }
        if self.samples_per_task < 2 {
            return Err(Error::invalid("samples_per_task must be at least 2"));
        }
        let secrets = self.n_tasks * self.secret_size;
        if self.vocab < secrets + self.max_words {
            return Err(Error::invalid(format!(
                "vocab of {} words is too small for {} disjoint secret subsets of size {} plus filler",
                self.vocab, self.n_tasks, self.secret_size
            )));
        }
        if matches!(self.classification_metric, Metric::Pearson) {
            return Err(Error::invalid("classification tasks cannot use the pearson metric"));
        }
        Ok(())
    }

    fn kind_of(&self, task: usize) -> SyntheticTask {
        self.kinds[task % self.kinds.len()]
    }
}

/// A generated stream together with each task's secret words.
#[derive(Debug, Clone)]
pub struct SyntheticStream {
    pub stream: TaskStream,
    pub secrets: Vec<Vec<String>>,
}

/// Generates `spec.n_tasks` tasks and deals each into splits of `sizes`.
/// Fully determined by `(spec, sizes, seed)`.
pub fn gen_synthetic_stream(spec: &SyntheticSpec, sizes: &SplitSizes, seed: u64) -> Result<SyntheticStream> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut words: Vec<usize> = (0..spec.vocab).collect();
    words.shuffle(&mut rng);
    let (secret_pool, _) = words.split_at(spec.n_tasks * spec.secret_size);
    let secret_ids: Vec<Vec<usize>> = secret_pool
        .chunks(spec.secret_size)
        .map(<[usize]>::to_vec)
        .collect();

    let mut tasks = Vec::with_capacity(spec.n_tasks);
    for t in 0..spec.n_tasks {
        let mut task_rng = ChaCha8Rng::seed_from_u64(seed);
        task_rng.set_stream(t as u64 + 1);
        let (kind, metric, pool) = match spec.kind_of(t) {
            SyntheticTask::Classification => (
                TaskKind::Classification { num_classes: 2 },
                spec.classification_metric,
                classification_pool(spec, &secret_ids[t], &mut task_rng),
            ),
            SyntheticTask::Regression => (
                TaskKind::Regression,
                Metric::Pearson,
                regression_pool(spec, &mut task_rng),
            ),
        };
        let split_seed = task_rng.gen();
        let mut task = Task::from_pool(format!("task{t}"), kind, metric, pool, sizes, split_seed)?;
        if matches!(kind, TaskKind::Classification { .. }) {
            for split in [&mut task.support, &mut task.query, &mut task.train, &mut task.eval] {
                flip_labels(split, spec.noise_rate, &mut task_rng);
            }
        }
        tasks.push(task);
    }
    let secrets = secret_ids
        .iter()
        .map(|ids| ids.iter().map(|&i| word(i)).collect())
        .collect();
    Ok(SyntheticStream {
        stream: TaskStream::new(Phase::MetaTrain, tasks)?,
        secrets,
    })
}

fn word(i: usize) -> String {
    format!("w{i}")
}

fn classification_pool(spec: &SyntheticSpec, secret: &[usize], rng: &mut ChaCha8Rng) -> Vec<Sample> {
    let secret_set: HashSet<usize> = secret.iter().copied().collect();
    let filler: Vec<usize> = (0..spec.vocab).filter(|w| !secret_set.contains(w)).collect();

    let n = spec.samples_per_task;
    let mut labels: Vec<usize> = (0..n).map(|i| usize::from(i < n / 2)).collect();
    labels.shuffle(rng);

    labels
        .into_iter()
        .map(|clean| {
            let len = rng.gen_range(spec.min_words..=spec.max_words);
            let mut tokens: Vec<usize> = (0..len).map(|_| *filler.choose(rng).unwrap()).collect();
            if clean == 1 {
                let planted = rng.gen_range(1..=2.min(len));
                for _ in 0..planted {
                    let pos = rng.gen_range(0..len);
                    tokens[pos] = *secret.choose(rng).unwrap();
                }
            }
            let text = tokens.iter().map(|&i| word(i)).collect::<Vec<_>>().join(" ");
            Sample::new(text, Label::Class(clean))
        })
        .collect()
}

/// Flips exactly `round(rate · len)` uniformly chosen binary labels.
fn flip_labels(split: &mut [Sample], rate: f64, rng: &mut ChaCha8Rng) {
    let n = (rate * split.len() as f64).round() as usize;
    let mut idx: Vec<usize> = (0..split.len()).collect();
    idx.shuffle(rng);
    for &i in &idx[..n] {
        if let Label::Class(c) = split[i].label {
            split[i].label = Label::Class(1 - c);
        }
    }
}

fn regression_pool(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<Sample> {
    let all: Vec<usize> = (0..spec.vocab).collect();
    (0..spec.samples_per_task)
        .map(|_| {
            let len = rng.gen_range(spec.min_words..=spec.max_words);
            let a: Vec<usize> = all.choose_multiple(rng, len).copied().collect();
            let shared = rng.gen_range(0..=len);
            let mut b: Vec<usize> = a.choose_multiple(rng, shared).copied().collect();
            let fresh: Vec<usize> = all.iter().copied().filter(|w| !a.contains(w)).collect();
            b.extend(fresh.choose_multiple(rng, len - shared));
            b.shuffle(rng);
            let mut score = 5.0 * jaccard(&a, &b);
            if rng.gen::<f64>() < spec.noise_rate {
                score = rng.gen_range(0.0..=5.0);
            }
            let join = |ws: &[usize]| ws.iter().map(|&i| word(i)).collect::<Vec<_>>().join(" ");
            Sample::pair(join(&a), join(&b), Label::Score(score))
        })
        .collect()
}

fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let sa: HashSet<_> = a.iter().collect();
    let sb: HashSet<_> = b.iter().collect();
    let inter = sa.intersection(&sb).count() as f64;
    let union = sa.union(&sb).count() as f64;
    if union == 0.0 {
        0.0
    } else {
        inter / union
    }
}
