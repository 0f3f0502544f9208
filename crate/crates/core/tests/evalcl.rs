mod common;

use common::{small_config, small_spec, stream};
use metacl::evalcl::{accuracy, forgetting_delta, matthews_corr, meta_test, pearson_corr};
use metacl::metaobj::initial_theta;
use metacl::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Single-pass textbook formula from raw sums.
fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sx += a;
        sy += b;
        sxx += a * a;
        syy += b * b;
        sxy += a * b;
    }
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

/// MCC is the Pearson correlation of the two 0/1 indicator vectors.
fn mcc_oracle(p: &[usize], l: &[usize]) -> f64 {
    let x: Vec<f64> = p.iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = l.iter().map(|&v| v as f64).collect();
    pearson_oracle(&x, &y)
}

#[test]
fn metrics_match_independent_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut checked = 0;
    while checked < 1000 {
        let n = rng.gen_range(3..40);
        let p: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let l: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v * rng.gen_range(-1.0..1.0) + rng.gen_range(-1.0..1.0)).collect();
        let hits = p.iter().zip(&l).filter(|(a, b)| a == b).count();
        assert_eq!(accuracy(&p, &l).unwrap(), hits as f64 / n as f64);
        assert!((pearson_corr(&x, &y).unwrap() - pearson_oracle(&x, &y)).abs() < 1e-10);
        let degenerate = p.iter().all(|&v| v == p[0]) || l.iter().all(|&v| v == l[0]);
        if !degenerate {
            assert!((matthews_corr(&p, &l).unwrap() - mcc_oracle(&p, &l)).abs() < 1e-10);
            checked += 1;
        }
    }
}

#[test]
fn degenerate_metric_inputs() {
    assert_eq!(matthews_corr(&[1, 1, 1], &[0, 1, 0]).unwrap(), 0.0);
    assert_eq!(matthews_corr(&[0, 1, 0], &[0, 1, 0]).unwrap(), 1.0);
    assert_eq!(matthews_corr(&[1, 0], &[0, 1]).unwrap(), -1.0);
    assert!(matches!(pearson_corr(&[1.0, 1.0], &[0.0, 2.0]), Err(Error::UndefinedMetric(_))));
    assert!(pearson_corr(&[], &[]).is_err());
    assert!(matthews_corr(&[2, 0], &[1, 0]).is_err());
}

proptest! {
    #[test]
    fn pearson_of_an_affine_map_is_plus_or_minus_one(
        x in proptest::collection::vec(-10.0f64..10.0, 2..30),
        a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
        b in -5.0f64..5.0,
    ) {
        prop_assume!(x.iter().any(|v| (v - x[0]).abs() > 1e-3));
        let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let r = pearson_corr(&x, &y).unwrap();
        prop_assert!((r - a.signum()).abs() < 1e-9);
        prop_assert!((pearson_corr(&y, &x).unwrap() - r).abs() < 1e-12);
    }

    #[test]
    fn mcc_flips_sign_when_predictions_flip(
        pl in proptest::collection::vec((0usize..2, 0usize..2), 1..40),
    ) {
        let (p, l): (Vec<usize>, Vec<usize>) = pl.into_iter().unzip();
        let flipped: Vec<usize> = p.iter().map(|v| 1 - v).collect();
        let m = matthews_corr(&p, &l).unwrap();
        prop_assert!((-1.0..=1.0).contains(&m));
        prop_assert!((matthews_corr(&flipped, &l).unwrap() + m).abs() < 1e-12);
        prop_assert!((matthews_corr(&l, &p).unwrap() - m).abs() < 1e-12);
    }
}

#[test]
fn a_single_task_has_no_forgetting() {
    let cfg = small_config(0);
    let spec = small_spec();
    let s = stream(1, &cfg, 0);
    let out = meta_test(&initial_theta(&spec.encoder, 0).unwrap(), &s, &spec, &cfg).unwrap();
    assert_eq!(out.matrix.deltas(), vec![0.0]);
    assert_eq!(forgetting_delta(&out.matrix), None);
}

#[test]
fn without_finetuning_scores_stay_in_range() {
    let mut cfg = small_config(1);
    cfg.inner_steps_test = 0;
    let spec = small_spec();
    let s = stream(3, &cfg, 1);
    let theta = initial_theta(&spec.encoder, 1).unwrap();
    let out = meta_test(&theta, &s, &spec, &cfg).unwrap();
    assert_eq!(out.theta, theta);
    for (&i, &f) in out.matrix.immediate.iter().zip(&out.matrix.final_scores) {
        assert!((0.0..=1.0).contains(&i));
        assert_eq!(i, f);
    }
}

#[test]
fn last_task_is_scored_identically_twice() {
    let cfg = small_config(2);
    let spec = small_spec();
    let s = stream(3, &cfg, 2);
    let out = meta_test(&initial_theta(&spec.encoder, 2).unwrap(), &s, &spec, &cfg).unwrap();
    let m = &out.matrix;
    assert_eq!(m.immediate[2].to_bits(), m.final_scores[2].to_bits());
    assert_eq!(m.task_ids, vec!["task0", "task1", "task2"]);
    assert_eq!(out.heads.len(), 3);
    assert_eq!(out.train_losses.len(), 3);
}

#[test]
fn meta_test_is_reproducible() {
    let cfg = small_config(3);
    let spec = small_spec();
    let s = stream(2, &cfg, 3);
    let theta = initial_theta(&spec.encoder, 3).unwrap();
    let a = meta_test(&theta, &s, &spec, &cfg).unwrap();
    let b = meta_test(&theta, &s, &spec, &cfg).unwrap();
    assert_eq!(a.matrix, b.matrix);
    assert_eq!(a.theta.checksum(), b.theta.checksum());
}

#[test]
fn sequential_finetuning_forgets_the_first_task() {
    let mut forgot = 0;
    for seed in 0..6 {
        let mut cfg = small_config(seed);
        cfg.inner_steps_test = 15;
        cfg.test_train_size = 80;
        cfg.finetune_rln_lr = Some(0.03);
        cfg.finetune_pln_lr = Some(0.03);
        let spec = small_spec();
        let s = stream(4, &cfg, seed);
        let out = meta_test(&initial_theta(&spec.encoder, seed).unwrap(), &s, &spec, &cfg).unwrap();
        let d = forgetting_delta(&out.matrix).unwrap();
        assert!(out.matrix.immediate[0] > 0.6, "seed {seed}: task 0 not learned");
        if d > 0.0 {
            forgot += 1;
        }
    }
    assert!(forgot >= 5, "forgetting in only {forgot} of 6 runs");
}

#[test]
fn meta_test_rejects_short_splits() {
    let mut cfg = small_config(4);
    let spec = small_spec();
    let s = stream(1, &cfg, 4);
    let theta = initial_theta(&spec.encoder, 4).unwrap();
    cfg.test_train_size = 1_000;
    assert!(matches!(
        meta_test(&theta, &s, &spec, &cfg),
        Err(Error::InsufficientData { .. })
    ));
}
