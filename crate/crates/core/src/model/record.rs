use std::ops::Range;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Gkp,
    Interactor,
}

/// Attention captured for one block.
#[derive(Clone, Debug)]
pub struct LayerRecord<S> {
    pub stage: Stage,
    /// Post-softmax maps actually used, `heads×rows×cols` (refined when
    /// refinement is active).
    pub attn: Tensor<S>,
    /// Post-softmax maps of the unrefined logits (interactor only).
    pub base_attn: Option<Tensor<S>>,
    /// Keypoint→keypoint logits before/after refinement, `heads×K×K`.
    pub kk_before: Option<Tensor<S>>,
    pub kk_after: Option<Tensor<S>>,
    /// Filter weights per keypoint, `K×n_filters`.
    pub assign: Option<Tensor<S>>,
    /// Columns of `attn` that hold image tokens (query image for the
    /// interactor, first support image for GKP).
    pub image_cols: Range<usize>,
}

#[derive(Clone, Debug)]
pub struct AttentionRecord<S> {
    pub k_max: usize,
    pub k_valid: usize,
    pub grid: usize,
    pub layers: Vec<LayerRecord<S>>,
}

impl<S: Scalar> LayerRecord<S> {
    pub fn heads(&self) -> usize {
        self.attn.shape()[0]
    }

    /// Row `r` of head `h`.
    pub fn attn_row(&self, h: usize, r: usize) -> &[S] {
        let (rows, cols) = (self.attn.shape()[1], self.attn.shape()[2]);
        let off = (h * rows + r) * cols;
        &self.attn.data()[off..off + cols]
    }
}
