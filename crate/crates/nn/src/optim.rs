use crate::error::{NnError, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Elementwise gradient clip; `None` disables clipping.
    pub clip: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-3,
            clip: Some(1.0),
        }
    }
}

/// Adam with decoupled weight decay. Moments are kept in f64.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new<T: Scalar>(store: &ParamStore<T>, config: AdamWConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store
            .iter()
            .map(|(_, p)| vec![0.0; p.value.numel()])
            .collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update with learning rate `lr`. `grads` are dense, in store order.
    pub fn step<T: Scalar>(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &[Vec<T>],
        lr: f64,
    ) -> Result<()> {
        if grads.len() != self.m.len() || store.len() != self.m.len() {
            return Err(NnError::InvalidArgument(format!(
                "optimizer tracks {} params, got {} grads for {} params",
                self.m.len(),
                grads.len(),
                store.len()
            )));
        }
        if let Some(bad) = grads.iter().flatten().find(|g| !g.as_f64().is_finite()) {
            return Err(NnError::NonFinite(format!("gradient value {bad}")));
        }
        self.t += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let ids: Vec<_> = store.ids().collect();
        for (idx, id) in ids.into_iter().enumerate() {
            let g = &grads[idx];
            let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
            if g.len() != m.len() {
                return Err(NnError::InvalidArgument(format!(
                    "gradient {idx} has {} values, expected {}",
                    g.len(),
                    m.len()
                )));
            }
            let theta = store.value_mut(id).data_mut();
            for j in 0..g.len() {
                let mut gj = g[j].as_f64();
                if let Some(limit) = c.clip {
                    gj = gj.clamp(-limit, limit);
                }
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                let p = theta[j].as_f64();
                let upd = mhat / (vhat.sqrt() + c.eps) + c.weight_decay * p;
                theta[j] = T::cast_f64(p - lr * upd);
            }
        }
        Ok(())
    }
}

/// Learning rate after `epoch` completed epochs of exponential decay.
pub fn exponential_lr(base: f64, gamma: f64, epoch: usize) -> f64 {
    base * gamma.powi(epoch as i32)
}
