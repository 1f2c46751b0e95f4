//! Keypoint attention refinement.
//!
//! The keypoint→keypoint logit block `A` is passed through `n` attention
//! filters `AF_i(A) = MLP_i(ReLU(A))`, applied row by row, and mixed with
//! per-keypoint weights `Assign(F_s) = softmax(layernorm(dropout(F_s·W)))`.
//! The refinement `Σ_i Assign_i(F_s) ⊙ AF_i(A)` is added back onto `A`
//! before the attention softmax.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::nn::{dropout, Binding, LayerNorm, Mlp, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct KarLayer {
    pub filters: Vec<Mlp>,
    pub assign_w: ParamId,
    pub assign_norm: LayerNorm,
    pub k_max: usize,
    pub dropout_p: f64,
}

impl KarLayer {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        d_model: usize,
        k_max: usize,
        n_filters: usize,
        af_hidden: usize,
        dropout_p: f64,
    ) -> Self {
        let filters = (0..n_filters)
            .map(|i| Mlp::new(store, &format!("{name}.af{i}"), k_max, af_hidden, k_max))
            .collect();
        let bound = (1.0 / d_model as f64).sqrt();
        let assign_w = store.add_uniform(format!("{name}.assign.w"), &[d_model, n_filters], bound);
        let assign_norm = LayerNorm::new(store, &format!("{name}.assign.norm"), n_filters);
        Self {
            filters,
            assign_w,
            assign_norm,
            k_max,
            dropout_p,
        }
    }

    /// Filter weights per keypoint, `K_max×n_filters`; each row sums to 1.
    pub fn assign<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        p: &Binding,
        f_s: Var,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let z = tape.matmul(f_s, p.var(self.assign_w))?;
        let z = dropout(tape, z, self.dropout_p, rng)?;
        let z = self.assign_norm.forward(tape, p, z)?;
        tape.softmax_rows(z, None)
    }

    /// Mask with ones where both the row and column keypoint are valid.
    pub fn valid_block<S: Scalar>(valid: &[bool]) -> Tensor<S> {
        let k = valid.len();
        let mut t = Tensor::zeros(&[k, k]);
        for i in 0..k {
            for j in 0..k {
                if valid[i] && valid[j] {
                    t.data_mut()[i * k + j] = S::one();
                }
            }
        }
        t
    }

    /// `KAR(A)` for one head's `K_max×K_max` logit block. `valid_block`
    /// zeroes padded rows and columns both before and after the filters.
    pub fn delta<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        p: &Binding,
        logits_kk: Var,
        assign: Var,
        valid_block: Var,
    ) -> Result<Var> {
        let k = self.k_max;
        if tape.shape(logits_kk) != [k, k] || tape.shape(valid_block) != [k, k] {
            return Err(Error::InvalidMask(format!(
                "keypoint block {:?} / mask {:?}, expected {k}x{k}",
                tape.shape(logits_kk),
                tape.shape(valid_block)
            )));
        }
        let a = tape.mul(logits_kk, valid_block)?;
        let a = tape.relu(a);
        let mut total: Option<Var> = None;
        for (i, filter) in self.filters.iter().enumerate() {
            let f = filter.forward(tape, p, a)?;
            let f = tape.mul(f, valid_block)?;
            let w = tape.slice_cols(assign, i..i + 1)?;
            let weighted = tape.mul_col(f, w)?;
            total = Some(match total {
                None => weighted,
                Some(t) => tape.add(t, weighted)?,
            });
        }
        Ok(total.expect("at least one filter"))
    }

    /// Refined logits `A + KAR(A)`; the caller's softmax turns them into the
    /// refined attention.
    pub fn refine<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        p: &Binding,
        logits_kk: Var,
        f_s: Var,
        valid: &[bool],
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        if valid.len() != self.k_max {
            return Err(Error::InvalidMask(format!(
                "valid mask has {} entries, expected {}",
                valid.len(),
                self.k_max
            )));
        }
        let assign = self.assign(tape, p, f_s, rng)?;
        let mask = tape.constant(Self::valid_block(valid));
        let d = self.delta(tape, p, logits_kk, assign, mask)?;
        tape.add(logits_kk, d)
    }
}
