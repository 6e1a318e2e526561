//! Adam optimizer over a [`ParamStore`].

use std::collections::BTreeMap;

use crate::params::ParamStore;
use crate::Arr;

/// First/second moment estimates for one parameter.
#[derive(Debug, Clone)]
pub struct Moments {
    pub m: Arr,
    pub v: Arr,
}

/// Adam with bias correction. State is keyed by parameter name so it can be
/// serialized alongside checkpoints and survive parameter re-registration.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Completed steps (used for bias correction).
    pub t: u64,
    pub state: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            t: 0,
            state: BTreeMap::new(),
        }
    }

    /// One update over every trainable parameter using its accumulated
    /// gradient; gradients are left untouched (callers zero them per step).
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, entry) in store.iter_mut() {
            if !entry.trainable {
                continue;
            }
            let mom = self.state.entry(name.clone()).or_insert_with(|| Moments {
                m: Arr::zeros(entry.value.raw_dim()),
                v: Arr::zeros(entry.value.raw_dim()),
            });
            ndarray::Zip::from(&mut entry.value)
                .and(&entry.grad)
                .and(&mut mom.m)
                .and(&mut mom.v)
                .for_each(|p, &g, m, v| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + self.eps);
                });
        }
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}
