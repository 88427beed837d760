use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ParamStore, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            ..Self::default()
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Applies an update rule to a [`ParamStore`] and clears its gradients.
pub struct Optimizer<T> {
    cfg: OptimizerConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(cfg: OptimizerConfig) -> Result<Self> {
        if cfg.lr.is_nan() || cfg.lr <= 0.0 {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", cfg.lr)));
        }
        if cfg.kind == OptimizerKind::Adam
            && !((0.0..1.0).contains(&cfg.beta1) && (0.0..1.0).contains(&cfg.beta2) && cfg.eps > 0.0)
        {
            return Err(Error::Config("adam betas must lie in [0,1) and eps > 0".into()));
        }
        Ok(Self {
            cfg,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore<T>) {
        self.step += 1;
        let lr = T::of(self.cfg.lr);
        match self.cfg.kind {
            OptimizerKind::Sgd => {
                for id in store.ids().collect::<Vec<_>>() {
                    let grad = store.grad(id).clone();
                    for (p, &g) in store.value_mut(id).data_mut().iter_mut().zip(grad.data()) {
                        *p -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != store.len() {
                    self.m = store.ids().map(|id| Tensor::zeros(store.value(id).shape())).collect();
                    self.v = self.m.clone();
                }
                let (b1, b2) = (T::of(self.cfg.beta1), T::of(self.cfg.beta2));
                let eps = T::of(self.cfg.eps);
                let bc1 = T::one() - b1.powi(self.step as i32);
                let bc2 = T::one() - b2.powi(self.step as i32);
                for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
                    let grad = store.grad(id).clone();
                    let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
                    let value = store.value_mut(id).data_mut();
                    for j in 0..value.len() {
                        let g = grad.data()[j];
                        m[j] = b1 * m[j] + (T::one() - b1) * g;
                        v[j] = b2 * v[j] + (T::one() - b2) * g * g;
                        let m_hat = m[j] / bc1;
                        let v_hat = v[j] / bc2;
                        value[j] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        store.zero_grads();
    }
}
