//! Adam optimizer and gradient clipping.

use crate::param::{ParamKind, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update over every trainable parameter.
    ///
    /// A parameter whose gradient is identically zero is left untouched,
    /// moments included, so unreachable parameters never drift.
    pub fn step(&self, store: &mut ParamStore) {
        for p in store.iter_mut() {
            if !p.kind.is_trainable() || p.grad.data().iter().all(|&g| g == 0.0) {
                continue;
            }
            p.step_count += 1;
            let t = p.step_count as i32;
            let bc1 = 1.0 - self.beta1.powi(t);
            let bc2 = 1.0 - self.beta2.powi(t);
            let grads = p.grad.data();
            let values = p.value.data_mut();
            for i in 0..values.len() {
                let g = grads[i];
                let m = self.beta1 * p.adam_m[i] + (1.0 - self.beta1) * g;
                let v = self.beta2 * p.adam_v[i] + (1.0 - self.beta2) * g * g;
                p.adam_m[i] = m;
                p.adam_v[i] = v;
                values[i] -= self.lr * (m / bc1) / ((v / bc2).sqrt() + self.eps);
            }
        }
    }
}

/// Elementwise clamp of gradient values to `[-threshold, threshold]`.
pub fn clip_gradients(grads: &mut [f64], threshold: f64) {
    for g in grads {
        *g = g.clamp(-threshold, threshold);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClipScope {
    Recurrent,
    All,
}

/// Clamps stored gradients of the parameters selected by `scope`.
pub fn clip_store(store: &mut ParamStore, threshold: f64, scope: ClipScope) {
    for p in store.iter_mut() {
        let selected = match scope {
            ClipScope::Recurrent => p.kind == ParamKind::Recurrent,
            ClipScope::All => p.kind.is_trainable(),
        };
        if selected {
            clip_gradients(p.grad.data_mut(), threshold);
        }
    }
}
