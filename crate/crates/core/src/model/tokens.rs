use crate::data::Point;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Normalized Gaussian heatmaps over a `grid×grid` feature map, one row per
/// keypoint. Cell `(r, c)` is centered at `((c+0.5)/grid, (r+0.5)/grid)`.
/// `sigma == 0` selects the nearest cell.
pub fn heatmap_weights(keypoints: &[Point], grid: usize, sigma: f64) -> Result<Vec<Vec<f64>>> {
    let g = grid as f64;
    keypoints
        .iter()
        .map(|p| {
            if !(0.0..=1.0).contains(&p[0]) || !(0.0..=1.0).contains(&p[1]) {
                return Err(Error::Input(format!("keypoint {p:?} outside the unit square")));
            }
            let mut w = vec![0.0; grid * grid];
            if sigma <= 0.0 {
                let c = ((p[0] * g).floor() as usize).min(grid - 1);
                let r = ((p[1] * g).floor() as usize).min(grid - 1);
                w[r * grid + c] = 1.0;
                return Ok(w);
            }
            let (gx, gy) = (p[0] * g - 0.5, p[1] * g - 0.5);
            let inv = 1.0 / (2.0 * sigma * sigma);
            for r in 0..grid {
                for c in 0..grid {
                    let d2 = (c as f64 - gx).powi(2) + (r as f64 - gy).powi(2);
                    w[r * grid + c] = (-d2 * inv).exp();
                }
            }
            let total: f64 = w.iter().sum();
            assert!(total > 0.0, "degenerate heatmap normalizer");
            w.iter_mut().for_each(|v| *v /= total);
            Ok(w)
        })
        .collect()
}

/// Gaussian-weighted pooling of `features` (`grid²×d`, row-major cells) at
/// each keypoint, producing `k×d` tokens.
pub fn extract_keypoint_tokens<S: Scalar>(
    tape: &mut Tape<S>,
    features: Var,
    keypoints: &[Point],
    grid: usize,
    sigma: f64,
) -> Result<Var> {
    let w = heatmap_weights(keypoints, grid, sigma)?;
    let flat: Vec<f64> = w.concat();
    let weights = tape.constant(Tensor::from_f64(&[keypoints.len(), grid * grid], &flat)?);
    tape.matmul(weights, features)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_sum_to_one() {
        let w = heatmap_weights(&[[0.1, 0.9], [0.5, 0.5], [1.0, 0.0]], 4, 1.0).unwrap();
        for row in w {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_square_rejected() {
        assert!(heatmap_weights(&[[1.2, 0.5]], 4, 1.0).is_err());
    }
}
