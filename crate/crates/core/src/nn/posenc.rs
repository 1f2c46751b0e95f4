use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Fixed 2-D sinusoidal encoding for an `h×w` grid, one row per cell in
/// row-major order. The first `d/2` channels encode the row index, the rest
/// the column index; each half interleaves `sin`/`cos` over the frequency
/// ladder `1 / 10000^(2i / (d/2))`.
pub fn positional_encoding_2d<S: Scalar>(h: usize, w: usize, d: usize) -> Result<Tensor<S>> {
    if d == 0 || d % 4 != 0 {
        return Err(Error::Config(format!("positional encoding width {d} not divisible by 4")));
    }
    let half = d / 2;
    let freqs: Vec<f64> = (0..half / 2)
        .map(|i| 1.0 / 10000f64.powf(2.0 * i as f64 / half as f64))
        .collect();
    let mut data = Vec::with_capacity(h * w * d);
    for r in 0..h {
        for c in 0..w {
            for pos in [r as f64, c as f64] {
                for &f in &freqs {
                    data.push(S::lit((pos * f).sin()));
                    data.push(S::lit((pos * f).cos()));
                }
            }
        }
    }
    Tensor::new(vec![h * w, d], data)
}
