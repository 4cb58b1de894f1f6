use super::{ParamGrads, ParamStore};
use crate::error::{Error, Result};

/// Epoch (1-based) after which the decoder learning rate is halved.
pub const ANNEAL_AFTER_EPOCH: usize = 3;
pub const ANNEAL_FACTOR: f64 = 0.5;

/// Decoder learning-rate schedule: `base_lr` for epochs 1..=3, then halved.
pub fn lr_schedule(epoch: usize, base_lr: f64) -> f64 {
    debug_assert!(epoch >= 1, "epochs are 1-based");
    if epoch > ANNEAL_AFTER_EPOCH {
        base_lr * ANNEAL_FACTOR
    } else {
        base_lr
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with per-parameter moment buffers.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.value(id).len()]).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads, lr: f64) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::shape("adam_step", &[self.m.len()], &[store.len()]));
        }
        self.step += 1;
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let g = grads.get(id);
            let p = store.value_mut(id).data_mut();
            if g.len() != p.len() || self.m[i].len() != p.len() {
                return Err(Error::shape("adam_step", &[p.len()], &[g.len()]));
            }
            adam_update(p, g, &mut self.m[i], &mut self.v[i], self.step, &self.config, lr);
        }
        Ok(())
    }
}

/// One Adam update of a flat parameter slice at (1-based) step `t`.
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    cfg: &AdamConfig,
    lr: f64,
) {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for j in 0..param.len() {
        let g = grad[j];
        m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
        v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
        let mhat = m[j] / bc1;
        let vhat = v[j] / bc2;
        param[j] -= lr * mhat / (vhat.sqrt() + cfg.eps);
    }
}

/// Plain gradient descent.
#[derive(Clone, Debug, Default)]
pub struct Sgd;

impl Sgd {
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads, lr: f64) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let g = grads.get(id);
            let p = store.value_mut(id).data_mut();
            if g.len() != p.len() {
                return Err(Error::shape("sgd_step", &[p.len()], &[g.len()]));
            }
            for (p, g) in p.iter_mut().zip(g) {
                *p -= lr * g;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

pub enum Optimizer {
    Adam(Adam),
    Sgd(Sgd),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, store: &ParamStore) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(store, AdamConfig::default())),
            OptimizerKind::Sgd => Optimizer::Sgd(Sgd),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads, lr: f64) -> Result<()> {
        match self {
            Optimizer::Adam(a) => a.step(store, grads, lr),
            Optimizer::Sgd(s) => s.step(store, grads, lr),
        }
    }
}
