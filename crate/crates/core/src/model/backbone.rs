use crate::error::{Error, Result};
use crate::nn::{Binding, LayerNorm, Linear, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Non-overlapping patch flattening, a shared linear projection and a
/// layernorm. The same weights embed support and query images.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub proj: Linear,
    pub norm: LayerNorm,
    pub image_size: usize,
    pub patch_size: usize,
}

impl Backbone {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, image_size: usize, patch_size: usize, d_model: usize) -> Self {
        Self {
            proj: Linear::new(store, "backbone.proj", patch_size * patch_size, d_model),
            norm: LayerNorm::new(store, "backbone.norm", d_model),
            image_size,
            patch_size,
        }
    }

    /// `(size/patch)² × patch²` rows, patches in row-major grid order.
    pub fn patchify<S: Scalar>(&self, image: &Tensor<f64>) -> Result<Tensor<S>> {
        let n = self.image_size;
        let expect = [n, n, 1];
        if image.shape() != expect {
            return Err(Error::Dimension {
                op: "backbone_embed",
                lhs: image.shape().to_vec(),
                rhs: expect.to_vec(),
            });
        }
        let p = self.patch_size;
        let g = n / p;
        let px = image.data();
        let mut out = Vec::with_capacity(n * n);
        for gr in 0..g {
            for gc in 0..g {
                for r in 0..p {
                    let row = (gr * p + r) * n + gc * p;
                    out.extend(px[row..row + p].iter().map(|&v| S::lit(v)));
                }
            }
        }
        Tensor::new(vec![g * g, p * p], out)
    }

    pub fn embed<S: Scalar>(&self, tape: &mut Tape<S>, params: &Binding, image: &Tensor<f64>) -> Result<Var> {
        let patches = tape.constant(self.patchify(image)?);
        let x = self.proj.forward(tape, params, patches)?;
        self.norm.forward(tape, params, x)
    }
}
