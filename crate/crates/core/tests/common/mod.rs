#![allow(dead_code)]

use metacl::data::{gen_synthetic_stream, SplitSizes, SyntheticSpec, TaskStream};
use metacl::metaobj::{Config, ModelSpec};
use metacl::nn::EncoderSpec;

pub fn small_spec() -> ModelSpec {
    ModelSpec::new(EncoderSpec {
        vocab_size: 128,
        embed_dim: 12,
        hidden_dims: vec![12],
        max_len: 12,
        dropout_rate: 0.1,
    })
}

pub fn small_config(seed: u64) -> Config {
    Config {
        inner_lr: 0.5,
        outer_lr: 0.03,
        inner_steps_train: 3,
        inner_steps_test: 3,
        batch_size: 8,
        support_size: 24,
        query_size: 24,
        test_train_size: 40,
        test_eval_size: None,
        meta_epochs: 4,
        checkpoint_every: 2,
        seed,
        ..Config::default()
    }
}

pub fn stream(n_tasks: usize, cfg: &Config, seed: u64) -> TaskStream {
    let spec = SyntheticSpec {
        n_tasks,
        samples_per_task: 160,
        vocab: 60,
        ..SyntheticSpec::default()
    };
    let sizes = SplitSizes {
        support: cfg.support_size,
        query: cfg.query_size,
        train: cfg.test_train_size,
        eval: None,
    };
    gen_synthetic_stream(&spec, &sizes, seed).unwrap().stream
}
