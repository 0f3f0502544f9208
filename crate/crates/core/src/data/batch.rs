use super::{tokenize, Label, Sample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Model input of a single example.
#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    /// Token ids and 0/1 mask, both of length `max_len`.
    Tokens { ids: Vec<usize>, mask: Vec<f64> },
    /// Dense feature vector.
    Features(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Input,
    pub label: Label,
}

/// Token ids (`[batch × len]`, row-major) with their mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    pub ids: Vec<usize>,
    pub mask: Tensor,
}

impl TokenBatch {
    pub fn batch_size(&self) -> usize {
        self.mask.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.mask.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BatchInput {
    Tokens(TokenBatch),
    Features(Tensor),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Scores(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Scores(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub input: BatchInput,
    pub targets: Targets,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// An ordered, encoded split ready to be cut into batches.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
}

impl Dataset {
    pub fn new(examples: Vec<Example>) -> Self {
        Self { examples }
    }

    /// Tokenizes `samples` in order.
    pub fn encode(samples: &[Sample], vocab_size: usize, max_len: usize) -> Dataset {
        let examples = samples
            .iter()
            .map(|s| {
                let (ids, mask) = tokenize(&s.text, s.text_pair.as_deref(), vocab_size, max_len);
                Example {
                    input: Input::Tokens { ids, mask },
                    label: s.label,
                }
            })
            .collect();
        Dataset { examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn subset(&self, range: std::ops::Range<usize>) -> Result<Dataset> {
        if range.end > self.len() || range.start > range.end {
            return Err(Error::InsufficientData {
                what: "dataset slice".into(),
                needed: range.end,
                available: self.len(),
            });
        }
        Ok(Dataset {
            examples: self.examples[range].to_vec(),
        })
    }

    /// Concatenation of `self` followed by `other`.
    pub fn concat(&self, other: &Dataset) -> Dataset {
        Dataset {
            examples: self.examples.iter().chain(&other.examples).cloned().collect(),
        }
    }

    /// Batch of the examples in `range`.
    pub fn batch(&self, range: std::ops::Range<usize>) -> Result<Batch> {
        if range.is_empty() || range.end > self.len() {
            return Err(Error::InsufficientData {
                what: "batch".into(),
                needed: range.end.max(1),
                available: self.len(),
            });
        }
        batch_of(&self.examples[range])
    }

    pub fn full_batch(&self) -> Result<Batch> {
        self.batch(0..self.len())
    }
}

fn batch_of(examples: &[Example]) -> Result<Batch> {
    let n = examples.len();
    let input = match &examples[0].input {
        Input::Tokens { ids, .. } => {
            let len = ids.len();
            let mut all_ids = Vec::with_capacity(n * len);
            let mut mask = Vec::with_capacity(n * len);
            for e in examples {
                match &e.input {
                    Input::Tokens { ids, mask: m } if ids.len() == len && m.len() == len => {
                        all_ids.extend_from_slice(ids);
                        mask.extend_from_slice(m);
                    }
                    _ => return Err(Error::invalid("batch mixes input kinds or sequence lengths")),
                }
            }
            BatchInput::Tokens(TokenBatch {
                ids: all_ids,
                mask: Tensor::new(vec![n, len], mask)?,
            })
        }
        Input::Features(f) => {
            let dim = f.len();
            let mut data = Vec::with_capacity(n * dim);
            for e in examples {
                match &e.input {
                    Input::Features(x) if x.len() == dim => data.extend_from_slice(x),
                    _ => return Err(Error::invalid("batch mixes input kinds or feature widths")),
                }
            }
            BatchInput::Features(Tensor::new(vec![n, dim], data)?)
        }
    };
    let targets = match examples[0].label {
        Label::Class(_) => Targets::Classes(
            examples
                .iter()
                .map(|e| e.label.class().ok_or_else(|| Error::invalid("batch mixes label kinds")))
                .collect::<Result<_>>()?,
        ),
        Label::Score(_) => Targets::Scores(
            examples
                .iter()
                .map(|e| e.label.score().ok_or_else(|| Error::invalid("batch mixes label kinds")))
                .collect::<Result<_>>()?,
        ),
    };
    Ok(Batch { input, targets })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_batches_are_row_major() {
        let samples = vec![
            Sample::new("a b", Label::Class(0)),
            Sample::new("c", Label::Class(1)),
        ];
        let ds = Dataset::encode(&samples, 64, 3);
        let b = ds.full_batch().unwrap();
        let BatchInput::Tokens(tb) = &b.input else { panic!() };
        assert_eq!(tb.mask.shape(), &[2, 3]);
        assert_eq!(tb.mask.data(), &[1.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(b.targets, Targets::Classes(vec![0, 1]));
    }

    #[test]
    fn empty_batch_is_an_error() {
        let ds = Dataset::default();
        assert!(ds.full_batch().is_err());
    }

    #[test]
    fn mixed_labels_rejected() {
        let ds = Dataset::new(vec![
            Example {
                input: Input::Features(vec![1.0]),
                label: Label::Class(0),
            },
            Example {
                input: Input::Features(vec![1.0]),
                label: Label::Score(0.5),
            },
        ]);
        assert!(ds.full_batch().is_err());
    }
}
