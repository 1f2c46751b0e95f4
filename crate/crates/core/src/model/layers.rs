use rand::RngCore;

use super::kar::KarLayer;
use super::record::{LayerRecord, Stage};
use crate::error::Result;
use crate::nn::{Attention, AttentionConfig, Binding, KvSource, LayerNorm, LogitHook, Mlp, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{softmax_data, Tape, Var};
use crate::tensor::Tensor;

/// Keypoint tokens plus query-image tokens.
#[derive(Clone, Debug)]
pub struct TokenSet {
    /// `K_max×d` support keypoint tokens.
    pub f_s: Var,
    /// `n_q×d` query image tokens.
    pub f_q: Var,
    pub valid: Vec<bool>,
}

/// Cross-attention block: keypoint tokens read global context.
#[derive(Clone, Debug)]
pub struct GkpLayer {
    pub attn: Attention,
    pub norm1: LayerNorm,
    pub ffn: Mlp,
    pub norm2: LayerNorm,
    pub include_query_ctx: bool,
}

impl GkpLayer {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        d: usize,
        heads: usize,
        ffn_hidden: usize,
        include_query_ctx: bool,
    ) -> Result<Self> {
        let cfg = AttentionConfig {
            d_model: d,
            n_heads: heads,
            unshared_qk: false,
            kv_source: KvSource::Cross,
            dropout_p: 0.0,
        };
        Ok(Self {
            attn: Attention::new(store, &format!("{name}.attn"), cfg)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d),
            ffn: Mlp::new(store, &format!("{name}.ffn"), d, ffn_hidden, d),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d),
            include_query_ctx,
        })
    }

    /// Updates `F_s` only; `F_q` passes through untouched.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        p: &Binding,
        tokens: &TokenSet,
        support_ctx: Var,
        n_image_cols: usize,
        record: Option<&mut Vec<LayerRecord<S>>>,
    ) -> Result<TokenSet> {
        let ctx = if self.include_query_ctx {
            tape.concat_rows(&[support_ctx, tokens.f_q])?
        } else {
            support_ctx
        };
        let out = self.attn.forward(tape, p, tokens.f_s, ctx, None, None, None, None)?;
        let x = tape.add(tokens.f_s, out.out)?;
        let x = self.norm1.forward(tape, p, x)?;
        let h = self.ffn.forward(tape, p, x)?;
        let x = tape.add(x, h)?;
        let f_s = self.norm2.forward(tape, p, x)?;
        if let Some(rec) = record {
            rec.push(LayerRecord {
                stage: Stage::Gkp,
                attn: out.attn,
                base_attn: None,
                kk_before: None,
                kk_after: None,
                assign: None,
                image_cols: 0..n_image_cols,
            });
        }
        Ok(TokenSet {
            f_s,
            f_q: tokens.f_q,
            valid: tokens.valid.clone(),
        })
    }
}

/// How the keypoint→keypoint logit block is treated in an interactor layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KeypointBlock {
    Plain,
    Refined,
    Masked,
}

/// Self-attention over `[F_s ‖ F_q]` with segment-specific Q/K projections.
#[derive(Clone, Debug)]
pub struct InteractorLayer {
    pub attn: Attention,
    pub norm1: LayerNorm,
    pub ffn: Mlp,
    pub norm2: LayerNorm,
    pub kar: Option<KarLayer>,
    pub block: KeypointBlock,
}

impl InteractorLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        d: usize,
        heads: usize,
        ffn_hidden: usize,
        unshared_qk: bool,
        block: KeypointBlock,
        kar: Option<(usize, usize, usize, f64)>,
    ) -> Result<Self> {
        let cfg = AttentionConfig {
            d_model: d,
            n_heads: heads,
            unshared_qk,
            kv_source: KvSource::SelfTokens,
            dropout_p: 0.0,
        };
        let attn = Attention::new(store, &format!("{name}.attn"), cfg)?;
        let norm1 = LayerNorm::new(store, &format!("{name}.norm1"), d);
        let ffn = Mlp::new(store, &format!("{name}.ffn"), d, ffn_hidden, d);
        let norm2 = LayerNorm::new(store, &format!("{name}.norm2"), d);
        let kar = match (block, kar) {
            (KeypointBlock::Refined, Some((k_max, n_filters, hidden, p))) => Some(KarLayer::new(
                store,
                &format!("{name}.kar"),
                d,
                k_max,
                n_filters,
                hidden,
                p,
            )),
            _ => None,
        };
        Ok(Self {
            attn,
            norm1,
            ffn,
            norm2,
            kar,
            block,
        })
    }

    /// Row-major keep-mask over the concatenated tokens.
    pub fn attention_mask(&self, valid: &[bool], n_q: usize) -> Vec<bool> {
        let k = valid.len();
        let a = k + n_q;
        let mut m = vec![true; a * a];
        for i in 0..a {
            for j in 0..k {
                let masked_kk = self.block == KeypointBlock::Masked && i < k;
                if !valid[j] || masked_kk {
                    m[i * a + j] = false;
                }
            }
        }
        m
    }

    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        p: &Binding,
        tokens: &TokenSet,
        record: Option<&mut Vec<LayerRecord<S>>>,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<TokenSet> {
        let k = tokens.valid.len();
        let n_q = tape.shape(tokens.f_q)[0];
        let a = k + n_q;
        let x = tape.concat_rows(&[tokens.f_s, tokens.f_q])?;
        let mask = self.attention_mask(&tokens.valid, n_q);
        let recording = record.is_some();

        let refine = match &self.kar {
            Some(kar) => {
                let assign = kar.assign(tape, p, tokens.f_s, rng.as_mut().map(|r| &mut **r as &mut dyn RngCore))?;
                let valid_block = tape.constant(KarLayer::valid_block(&tokens.valid));
                Some((kar, assign, valid_block))
            }
            None => None,
        };

        let mut before = Vec::new();
        let mut after = Vec::new();
        let mut base = Vec::new();
        let mut hook = |tape: &mut Tape<S>, _head: usize, logits: Var| -> Result<Var> {
            let mut out = logits;
            let block = if recording || refine.is_some() {
                Some(tape.slice_block(logits, 0..k, 0..k)?)
            } else {
                None
            };
            if let (Some((kar, assign, valid_block)), Some(block)) = (&refine, block) {
                let d = kar.delta(tape, p, block, *assign, *valid_block)?;
                let d = tape.pad_block(d, a, a, 0, 0)?;
                out = tape.add(logits, d)?;
            }
            if recording {
                before.extend_from_slice(tape.value(block.unwrap()).data());
                let refined = tape.slice_block(out, 0..k, 0..k)?;
                after.extend_from_slice(tape.value(refined).data());
                base.extend(softmax_data(tape.value(logits).data(), a, a, Some(&mask))?);
            }
            Ok(out)
        };
        let use_hook = recording || refine.is_some();
        let hook_ref: Option<&mut LogitHook<'_, S>> = if use_hook { Some(&mut hook) } else { None };
        let out = self
            .attn
            .forward(tape, p, x, x, Some(k), hook_ref, Some(&mask), None)?;

        let y = tape.add(x, out.out)?;
        let y = self.norm1.forward(tape, p, y)?;
        let h = self.ffn.forward(tape, p, y)?;
        let y = tape.add(y, h)?;
        let y = self.norm2.forward(tape, p, y)?;
        let f_s = tape.slice_rows(y, 0..k)?;
        let f_q = tape.slice_rows(y, k..a)?;

        if let Some(rec) = record {
            let heads = out.attn.shape()[0];
            let assign = match &refine {
                Some((_, assign, _)) => Some(tape.value(*assign).clone()),
                None => None,
            };
            rec.push(LayerRecord {
                stage: Stage::Interactor,
                attn: out.attn,
                base_attn: Some(Tensor::new(vec![heads, a, a], base)?),
                kk_before: Some(Tensor::new(vec![heads, k, k], before)?),
                kk_after: Some(Tensor::new(vec![heads, k, k], after)?),
                assign,
                image_cols: k..a,
            });
        }
        Ok(TokenSet {
            f_s,
            f_q,
            valid: tokens.valid.clone(),
        })
    }
}
