use metacl::optim::{adam_step, cosine_lr, sgd_step, AdamState, CosineSchedule};
use metacl::{Grads, ParamSet, Role, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn params(v: &[f64]) -> ParamSet {
    let mut p = ParamSet::new(Role::Rln);
    p.insert("p", Tensor::new(vec![v.len()], v.to_vec()).unwrap()).unwrap();
    p
}

fn grads(v: &[f64]) -> Grads {
    let mut g = Grads::default();
    g.insert("p".into(), Tensor::new(vec![v.len()], v.to_vec()).unwrap());
    g
}

/// Adam written out with explicit powers of the decay rates.
fn reference_adam(p0: &[f64], gs: &[Vec<f64>], lr: f64) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut p = p0.to_vec();
    let mut m = vec![0.0; p.len()];
    let mut v = vec![0.0; p.len()];
    for (t, g) in gs.iter().enumerate() {
        let t = t as i32 + 1;
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / (1.0 - b1.powi(t));
            let vh = v[i] / (1.0 - b2.powi(t));
            p[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    p
}

#[test]
fn adam_matches_reference_over_ten_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..20 {
        let n = rng.gen_range(1..8);
        let p0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let gs: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let lr = rng.gen_range(1e-4..1e-1);
        let mut p = params(&p0);
        let mut state = AdamState::default();
        for g in &gs {
            let (np, ns) = adam_step(&state, &p, &grads(g), lr).unwrap();
            p = np;
            state = ns;
        }
        assert_eq!(state.step(), 10);
        let want = reference_adam(&p0, &gs, lr);
        for (a, b) in p.flatten().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn first_adam_step_moves_by_the_learning_rate() {
    let (p, _) = adam_step(&AdamState::default(), &params(&[0.0, 0.0]), &grads(&[3.0, -0.5]), 0.01).unwrap();
    let d = p.flatten();
    assert!((d[0] + 0.01).abs() < 1e-9);
    assert!((d[1] - 0.01).abs() < 1e-9);
}

#[test]
fn zero_gradient_leaves_params_and_moments_at_rest() {
    let g = grads(&[0.0, 0.0, 0.0]);
    let (p, s) = adam_step(&AdamState::default(), &params(&[1.0, -2.0, 3.0]), &g, 0.1).unwrap();
    assert_eq!(p.flatten(), vec![1.0, -2.0, 3.0]);
    assert!(s.first_moment("p").unwrap().data().iter().all(|&m| m == 0.0));
    assert!(s.second_moment("p").unwrap().data().iter().all(|&v| v == 0.0));
    assert_eq!(g.get("p").unwrap().data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn cosine_midpoint_is_the_mean_rate() {
    let s = CosineSchedule::new(0.3, 0.1, 100).unwrap();
    assert!((cosine_lr(&s, 50).unwrap() - 0.2).abs() < 1e-15);
    assert!(CosineSchedule::new(0.1, 0.2, 10).is_err());
}

#[test]
fn stale_adam_state_is_detected() {
    let s0 = AdamState::default();
    let (p1, s1) = adam_step(&s0, &params(&[1.0]), &grads(&[1.0]), 0.1).unwrap();
    let (p2, _) = adam_step(&s1, &p1, &grads(&[1.0]), 0.1).unwrap();
    assert!(adam_step(&s1, &p2, &grads(&[1.0]), 0.1).is_err());
}

#[test]
fn sgd_step_closed_form() {
    let p = sgd_step(&params(&[1.0, -2.0]), &grads(&[0.5, 4.0]), 0.1).unwrap();
    assert_eq!(p.flatten(), vec![1.0 - 0.05, -2.0 - 0.4]);
}

proptest! {
    #[test]
    fn cosine_schedule_is_monotone_and_bounded(
        lr_max in 1e-5f64..1.0,
        frac in 0.0f64..1.0,
        total in 1u64..500,
    ) {
        let s = CosineSchedule::new(lr_max, lr_max * frac, total).unwrap();
        prop_assert_eq!(cosine_lr(&s, 0).unwrap(), lr_max);
        prop_assert_eq!(cosine_lr(&s, total).unwrap(), lr_max * frac);
        let mut prev = f64::INFINITY;
        for t in 0..=total {
            let lr = cosine_lr(&s, t).unwrap();
            prop_assert!(lr <= prev + 1e-15);
            prop_assert!(lr >= lr_max * frac - 1e-15 && lr <= lr_max + 1e-15);
            prev = lr;
        }
        prop_assert!(cosine_lr(&s, total + 1).is_err());
    }
}
