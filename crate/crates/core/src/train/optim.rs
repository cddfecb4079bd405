use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ParameterStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-6,
            weight_decay: 1e-2,
        }
    }
}

/// AdamW with decoupled weight decay.
///
/// Each step first shrinks a parameter by `1 − lr·wd`, then applies the
/// bias-corrected adaptive update `lr · m̂ / (√v̂ + eps)`. Frozen parameters
/// are left untouched.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, store: &ParameterStore) -> Self {
        let zeros = |_| store.ids().map(|id| vec![0.0; store.value(id).len()]).collect::<Vec<_>>();
        Self {
            cfg,
            m: zeros(0),
            v: zeros(1),
            t: 0,
        }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from the gradients held in `store`, then zeroes them.
    pub fn step(&mut self, store: &mut ParameterStore, lr: f64) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        if ids.len() != self.m.len() {
            // Heads attached after the optimizer was built.
            for id in &ids[self.m.len()..] {
                let n = store.value(*id).len();
                self.m.push(vec![0.0; n]);
                self.v.push(vec![0.0; n]);
            }
        }
        for &id in &ids {
            if store.trainable(id) && store.grad(id).data().iter().any(|g| !g.is_finite()) {
                return Err(Error::Train {
                    param: store.name(id).to_string(),
                });
            }
        }
        self.t += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let decay = 1.0 - lr * weight_decay;
        for id in ids {
            if !store.trainable(id) {
                continue;
            }
            let g = store.grad(id).data().to_vec();
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let p = store.value_mut(id).data_mut();
            for i in 0..p.len() {
                p[i] *= decay;
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        store.zero_grad();
        Ok(())
    }
}
