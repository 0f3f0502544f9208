//! Gradient descent, Adam, and cosine-annealed learning rates.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Grads, ParamSet};
use crate::tensor::Tensor;

/// Update rule for the inner (head) loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerOptimizer {
    #[default]
    Sgd,
    Adam,
}

/// `p ← p − lr·g` for every coordinate.
pub fn sgd_step(params: &ParamSet, grads: &Grads, lr: f64) -> Result<ParamSet> {
    let grads = grads.select(params)?;
    let mut out = params.clone();
    for ((_, p), (_, g)) in out.entries_mut().zip(grads.iter()) {
        p.data_mut()
            .iter_mut()
            .zip(g.data())
            .for_each(|(p, g)| *p -= lr * g);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

static NEXT_STATE_ID: AtomicU64 = AtomicU64::new(1);

/// Adam moments for one parameter set.
///
/// Parameters returned by [`adam_step`] remember which state produced them
/// and at which step, so feeding them back together with an older copy of
/// the state is detected.
#[derive(Debug, Clone)]
pub struct AdamState {
    id: u64,
    t: u64,
    pub hyper: AdamHyper,
    first: Grads,
    second: Grads,
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new(AdamHyper::default())
    }
}

impl AdamState {
    pub fn new(hyper: AdamHyper) -> Self {
        Self {
            id: NEXT_STATE_ID.fetch_add(1, Ordering::Relaxed),
            t: 0,
            hyper,
            first: Grads::default(),
            second: Grads::default(),
        }
    }

    pub fn step(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor> {
        self.first.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor> {
        self.second.get(name)
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(state: &AdamState, params: &ParamSet, grads: &Grads, lr: f64) -> Result<(ParamSet, AdamState)> {
    if let Some((id, params_step)) = params.lineage {
        if id == state.id && params_step != state.t {
            return Err(Error::StaleOptimizerState {
                params_step,
                state_step: state.t,
            });
        }
    }
    let grads = grads.select(params)?;
    let AdamHyper { beta1, beta2, eps } = state.hyper;
    let t = state.t + 1;
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);

    let mut next = AdamState {
        id: state.id,
        t,
        hyper: state.hyper,
        first: Grads::default(),
        second: Grads::default(),
    };
    let mut out = params.clone();
    for ((name, p), (_, g)) in out.entries_mut().zip(grads.iter()) {
        let zeros = Tensor::zeros(p.shape());
        let m_prev = state.first.get(name).unwrap_or(&zeros);
        let v_prev = state.second.get(name).unwrap_or(&zeros);
        if m_prev.shape() != p.shape() || v_prev.shape() != p.shape() {
            return Err(Error::Shape {
                op: "adam_step",
                left: p.shape().to_vec(),
                right: m_prev.shape().to_vec(),
            });
        }
        let mut m = m_prev.clone();
        let mut v = v_prev.clone();
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        next.first.insert(name.to_owned(), m);
        next.second.insert(name.to_owned(), v);
    }
    out.lineage = Some((next.id, t));
    Ok((out, next))
}

/// Cosine annealing from `lr_max` at step 0 to `lr_min` at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_steps: u64,
}

impl CosineSchedule {
    pub fn new(lr_max: f64, lr_min: f64, total_steps: u64) -> Result<Self> {
        if !(lr_max > 0.0) || !(lr_min >= 0.0) || lr_min > lr_max || total_steps == 0 {
            return Err(Error::invalid(format!(
                "invalid cosine schedule: lr_max={lr_max}, lr_min={lr_min}, total_steps={total_steps}"
            )));
        }
        Ok(Self {
            lr_max,
            lr_min,
            total_steps,
        })
    }
}

pub fn cosine_lr(schedule: &CosineSchedule, step: u64) -> Result<f64> {
    if step > schedule.total_steps {
        return Err(Error::invalid(format!(
            "schedule step {step} beyond total_steps {}",
            schedule.total_steps
        )));
    }
    let CosineSchedule {
        lr_max,
        lr_min,
        total_steps,
    } = *schedule;
    if step == 0 {
        return Ok(lr_max);
    }
    if step == total_steps {
        return Ok(lr_min);
    }
    let progress = step as f64 / total_steps as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * progress).cos()))
}
