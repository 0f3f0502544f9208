use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Sizes used to deal a task's samples into its four splits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSizes {
    pub support: usize,
    pub query: usize,
    pub train: usize,
    /// `None` takes every sample left over.
    pub eval: Option<usize>,
}

/// Seeded uniform sampling without replacement of two disjoint subsets.
pub fn split_support_query<T: Clone>(
    samples: &[T],
    n_support: usize,
    n_query: usize,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    let needed = n_support + n_query;
    if needed > samples.len() {
        return Err(Error::InsufficientData {
            what: "support/query split".into(),
            needed,
            available: samples.len(),
        });
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<T>>();
    Ok((pick(&order[..n_support]), pick(&order[n_support..needed])))
}
