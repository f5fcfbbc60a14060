//! Adam with global-norm gradient clipping.

use crate::encoder::{Checkpoint, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor<f64>>,
    v: Vec<Tensor<f64>>,
    t: u64,
}

/// L2 norm over every gradient tensor.
pub fn global_norm(grads: &[Tensor<f64>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

impl Adam {
    pub fn new(params: &ParamStore<f64>) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Clips `grads` to `clip_norm` (if positive) and applies one update.
    /// Returns the pre-clip gradient norm.
    pub fn step(
        &mut self,
        params: &mut ParamStore<f64>,
        grads: &[Tensor<f64>],
        lr: f64,
        clip_norm: f64,
    ) -> Result<f64> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} tensors, got {} gradients for {} parameters",
                self.m.len(),
                grads.len(),
                params.len()
            )));
        }
        let norm = global_norm(grads);
        let scale = if clip_norm > 0.0 && norm > clip_norm {
            clip_norm / norm
        } else {
            1.0
        };
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let ids: Vec<_> = params.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let g = grads[i].data();
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let p = params.get_mut(id).data_mut();
            for j in 0..p.len() {
                let gj = g[j] * scale;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(norm)
    }

    /// Appends moment tensors as `optim.m.<name>` / `optim.v.<name>`.
    pub fn save_into(&self, params: &ParamStore<f64>, ck: &mut Checkpoint) {
        for (i, (name, _)) in params.iter().enumerate() {
            ck.push(format!("optim.m.{name}"), &self.m[i]);
            ck.push(format!("optim.v.{name}"), &self.v[i]);
        }
    }

    /// Restores moments saved by [`Adam::save_into`]; `steps` is the number
    /// of updates already applied.
    pub fn load_from(params: &ParamStore<f64>, ck: &Checkpoint, steps: u64) -> Result<Self> {
        let mut adam = Self::new(params);
        for (i, (name, t)) in params.iter().enumerate() {
            for (slot, prefix) in [(&mut adam.m[i], "m"), (&mut adam.v[i], "v")] {
                let key = format!("optim.{prefix}.{name}");
                let saved = ck
                    .tensor(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer tensor {key}")))?;
                if saved.shape() != t.shape() {
                    return Err(Error::Checkpoint(format!("shape mismatch for {key}")));
                }
                *slot = saved.clone();
            }
        }
        adam.t = steps;
        Ok(adam)
    }
}
