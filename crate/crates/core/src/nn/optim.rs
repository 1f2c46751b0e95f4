use crate::error::{Error, Result};
use crate::nn::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Moment estimates for bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct AdamState<S> {
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &[Tensor<S>], lr: f64) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub struct Adam;

impl Adam {
    /// One in-place update of `params` from `grads`.
    pub fn step<S: Scalar>(params: &mut [Tensor<S>], grads: &[Tensor<S>], state: &mut AdamState<S>) -> Result<()> {
        if params.len() != grads.len() || params.len() != state.m.len() {
            return Err(Error::Dimension {
                op: "adam_step",
                lhs: vec![params.len()],
                rhs: vec![grads.len()],
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::Dimension {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        state.step += 1;
        let t = state.step as i32;
        let (b1, b2) = (S::lit(state.beta1), S::lit(state.beta2));
        let c1 = S::one() - b1.powi(t);
        let c2 = S::one() - b2.powi(t);
        let lr = S::lit(state.lr);
        let eps = S::lit(state.eps);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(state.m.iter_mut().zip(state.v.iter_mut()))
        {
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (S::one() - b1) * gi;
                *vi = b2 * *vi + (S::one() - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn step_store<S: Scalar>(store: &mut ParamStore<S>, grads: &[Tensor<S>], state: &mut AdamState<S>) -> Result<()> {
        Self::step(store.tensors_mut(), grads, state)
    }
}

/// Step decay: `base_lr · 0.1^k`, where `k` counts passed milestones at
/// 140/180 and 170/180 of `total_epochs`.
pub fn lr_schedule(epoch: usize, total_epochs: usize, base_lr: f64) -> f64 {
    let passed = [140usize, 170]
        .iter()
        .filter(|&&m| epoch * 180 >= m * total_epochs)
        .count();
    base_lr * 0.1f64.powi(passed as i32)
}
