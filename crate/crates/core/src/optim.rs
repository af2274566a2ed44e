//! Optimizers and learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{check_congruent, layout, Parameters, Scalar};

/// Linear warmup from 0 to `peak` over `warmup` steps, then cosine decay
/// from `peak` to `final_lr` at `total`.
pub fn lr_schedule(step: u64, total: u64, warmup: u64, peak: f64, final_lr: f64) -> f64 {
    if step < warmup {
        return peak * step as f64 / warmup as f64;
    }
    if total <= warmup {
        return peak;
    }
    let progress = (step.min(total) - warmup) as f64 / (total - warmup) as f64;
    final_lr + (peak - final_lr) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Only `Linear` weight matrices are decayed; biases, norms, position
/// embeddings and the mask token are not.
pub fn decays(name: &str) -> bool {
    name.ends_with(".weight") || name == "weight"
}

fn moments_like<F: Scalar, P: Parameters<F>>(params: &P) -> Vec<Vec<F>> {
    params
        .tensors()
        .iter()
        .map(|t| vec![F::zero(); t.data.len()])
        .collect()
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW<F> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
}

impl<F: Scalar> AdamW<F> {
    pub fn new<P: Parameters<F>>(params: &P, betas: (f64, f64), weight_decay: f64) -> Self {
        Self {
            beta1: betas.0,
            beta2: betas.1,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: moments_like(params),
            v: moments_like(params),
        }
    }

    pub fn step<P: Parameters<F>>(&mut self, params: &mut P, grads: &P, lr: f64) -> Result<()> {
        check_congruent(&layout(params), &layout(grads))?;
        if self.m.len() != grads.tensors().len() {
            return Err(Error::TreeMismatch("optimizer state does not match parameters".into()));
        }
        self.t += 1;
        let c = |x: f64| F::from_f64(x).expect("hyperparameter fits");
        let (b1, b2) = (c(self.beta1), c(self.beta2));
        let (one_m_b1, one_m_b2) = (c(1.0 - self.beta1), c(1.0 - self.beta2));
        let bc1 = c(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = c(1.0 - self.beta2.powi(self.t as i32));
        let eps = c(self.eps);
        let lr_f = c(lr);
        let decay = c(1.0 - lr * self.weight_decay);
        let g_all = grads.tensors();
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(g_all.iter())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            let wd = decays(&p.name) && self.weight_decay != 0.0;
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m[i] = b1 * m[i] + one_m_b1 * gi;
                v[i] = b2 * v[i] + one_m_b2 * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                if wd {
                    p.data[i] *= decay;
                }
                p.data[i] -= lr_f * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// SGD with heavy-ball momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<F> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<F>>,
}

impl<F: Scalar> Sgd<F> {
    pub fn new<P: Parameters<F>>(params: &P, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: moments_like(params),
        }
    }

    pub fn step<P: Parameters<F>>(&mut self, params: &mut P, grads: &P, lr: f64) -> Result<()> {
        check_congruent(&layout(params), &layout(grads))?;
        let mu = F::from_f64(self.momentum).expect("momentum fits");
        let wd = F::from_f64(self.weight_decay).expect("decay fits");
        let lr = F::from_f64(lr).expect("lr fits");
        let g_all = grads.tensors();
        for ((p, g), vel) in params
            .tensors_mut()
            .into_iter()
            .zip(g_all.iter())
            .zip(self.velocity.iter_mut())
        {
            let decayed = decays(&p.name);
            for i in 0..p.data.len() {
                let mut gi = g.data[i];
                if decayed {
                    gi += wd * p.data[i];
                }
                vel[i] = mu * vel[i] + gi;
                p.data[i] -= lr * vel[i];
            }
        }
        Ok(())
    }
}

/// Scales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm<F: Scalar, P: Parameters<F>>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = grads
        .tensors()
        .iter()
        .flat_map(|t| t.data.iter())
        .map(|x| {
            let v = x.to_f64().unwrap_or(f64::NAN);
            v * v
        })
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = F::from_f64(max_norm / norm).expect("scale fits");
        for t in grads.tensors_mut() {
            for x in t.data.iter_mut() {
                *x *= s;
            }
        }
    }
    norm
}
