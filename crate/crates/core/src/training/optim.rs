use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::numerics::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-3, weight_decay: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with weight decay applied directly to the parameters.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|(_, t)| vec![T::zero(); t.numel()]).collect();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// `grads[i]` belongs to the `i`-th parameter; `None` leaves it untouched
    /// apart from decay.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Option<&[T]>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Dimension(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        self.step += 1;
        let cfg = self.config;
        let t = self.step as i32;
        let (b1, b2) = (T::from_f64_lossy(cfg.beta1), T::from_f64_lossy(cfg.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let corr1 = T::from_f64_lossy(1.0 - cfg.beta1.powi(t));
        let corr2 = T::from_f64_lossy(1.0 - cfg.beta2.powi(t));
        let lr = T::from_f64_lossy(cfg.lr);
        let eps = T::from_f64_lossy(cfg.eps);
        let decay = T::from_f64_lossy(1.0 - cfg.lr * cfg.weight_decay);
        for (i, grad) in grads.iter().enumerate() {
            let p = params.tensor_mut(i).data_mut();
            if let Some(g) = grad {
                if g.len() != p.len() {
                    return Err(Error::Dimension(format!("gradient {i} has {} entries for {}", g.len(), p.len())));
                }
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..p.len() {
                p[k] *= decay;
                let g = grad.map_or(T::zero(), |g| g[k]);
                m[k] = b1 * m[k] + one_b1 * g;
                v[k] = b2 * v[k] + one_b2 * g * g;
                let m_hat = m[k] / corr1;
                let v_hat = v[k] / corr2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
