//! Scaled dot-product multi-head attention with optional per-segment Q/K
//! projections and a pre-softmax logit hook.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::nn::linear::{dropout, Linear};
use crate::nn::params::{Binding, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KvSource {
    /// Keys and values come from the query tokens themselves.
    SelfTokens,
    /// Keys and values come from a separate token set.
    Cross,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub n_heads: usize,
    /// Separate Q/K projections for the two segments `[0, split)` and
    /// `[split, n)` of a self-attention input.
    pub unshared_qk: bool,
    pub kv_source: KvSource,
    /// Dropout on attention probabilities (training only).
    pub dropout_p: f64,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p {} outside [0,1)", self.dropout_p)));
        }
        if self.unshared_qk && self.kv_source == KvSource::Cross {
            return Err(Error::Config("unshared Q/K requires self-attention".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Maps the pre-softmax logits of one head (`a×b`) to new logits.
pub type LogitHook<'a, S> = dyn FnMut(&mut Tape<S>, usize, Var) -> Result<Var> + 'a;

pub struct AttentionOutput<S> {
    pub out: Var,
    /// Post-softmax maps, `n_heads×a×b`.
    pub attn: Tensor<S>,
}

#[derive(Clone, Debug)]
pub struct Attention {
    pub cfg: AttentionConfig,
    pub q: Linear,
    pub k: Linear,
    /// Second-segment projections, present when `unshared_qk`.
    pub q2: Option<Linear>,
    pub k2: Option<Linear>,
    pub v: Linear,
    pub o: Linear,
}

impl Attention {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, cfg: AttentionConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let q = Linear::new(store, &format!("{name}.q"), d, d);
        let k = Linear::new(store, &format!("{name}.k"), d, d);
        let (q2, k2) = if cfg.unshared_qk {
            (
                Some(Linear::new(store, &format!("{name}.q2"), d, d)),
                Some(Linear::new(store, &format!("{name}.k2"), d, d)),
            )
        } else {
            (None, None)
        };
        let v = Linear::new(store, &format!("{name}.v"), d, d);
        let o = Linear::new(store, &format!("{name}.o"), d, d);
        Ok(Self { cfg, q, k, q2, k2, v, o })
    }

    fn project<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        p: &Binding,
        x: Var,
        first: &Linear,
        second: Option<&Linear>,
        split: Option<usize>,
    ) -> Result<Var> {
        let (Some(second), Some(split)) = (second, split) else {
            return first.forward(tape, p, x);
        };
        let rows = tape.shape(x)[0];
        if split == 0 {
            return second.forward(tape, p, x);
        }
        if split == rows {
            return first.forward(tape, p, x);
        }
        let a = tape.slice_rows(x, 0..split)?;
        let b = tape.slice_rows(x, split..rows)?;
        let ya = first.forward(tape, p, a)?;
        let yb = second.forward(tape, p, b)?;
        tape.concat_rows(&[ya, yb])
    }

    /// `q_tokens: a×d`, `kv_tokens: b×d`. `split` marks the segment boundary
    /// for unshared Q/K and is required in that mode. `mask` is a row-major
    /// `a×b` keep-mask shared by all heads.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        p: &Binding,
        q_tokens: Var,
        kv_tokens: Var,
        split: Option<usize>,
        mut hook: Option<&mut LogitHook<'_, S>>,
        mask: Option<&[bool]>,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<AttentionOutput<S>> {
        let d = self.cfg.d_model;
        let (a, dq) = tape.value(q_tokens).dims2("attention")?;
        let (b, dk) = tape.value(kv_tokens).dims2("attention")?;
        if dq != d || dk != d {
            return Err(Error::Dimension {
                op: "attention",
                lhs: vec![a, dq],
                rhs: vec![b, dk],
            });
        }
        if self.cfg.unshared_qk {
            match split {
                None => return Err(Error::Input("unshared Q/K needs a split index".into())),
                Some(s) if s > a || a != b => {
                    return Err(Error::Input(format!("split index {s} out of range for {a} tokens")))
                }
                _ => {}
            }
        }
        let split = if self.cfg.unshared_qk { split } else { None };
        let q = self.project(tape, p, q_tokens, &self.q, self.q2.as_ref(), split)?;
        let k = self.project(tape, p, kv_tokens, &self.k, self.k2.as_ref(), split)?;
        let v = self.v.forward(tape, p, kv_tokens)?;

        let h = self.cfg.n_heads;
        let dh = self.cfg.head_dim();
        let scale = S::one() / S::lit(dh as f64).sqrt();
        let mut heads = Vec::with_capacity(h);
        let mut attn = Vec::with_capacity(h * a * b);
        for head in 0..h {
            let cols = head * dh..(head + 1) * dh;
            let (qh, kh, vh) = if h == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, cols.clone())?,
                    tape.slice_cols(k, cols.clone())?,
                    tape.slice_cols(v, cols)?,
                )
            };
            let kt = tape.transpose(kh)?;
            let logits = tape.matmul(qh, kt)?;
            let mut logits = tape.scale(logits, scale);
            if let Some(hook) = hook.as_deref_mut() {
                logits = hook(tape, head, logits)?;
            }
            let probs = tape.softmax_rows(logits, mask)?;
            attn.extend_from_slice(tape.value(probs).data());
            let probs = dropout(tape, probs, self.cfg.dropout_p, rng.as_deref_mut())?;
            heads.push(tape.matmul(probs, vh)?);
        }
        let merged = if h == 1 { heads[0] } else { tape.concat_cols(&heads)? };
        let out = self.o.forward(tape, p, merged)?;
        Ok(AttentionOutput {
            out,
            attn: Tensor::new(vec![h, a, b], attn)?,
        })
    }
}
