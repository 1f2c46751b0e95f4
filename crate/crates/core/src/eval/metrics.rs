use crate::data::Point;

pub const PCK_THRESHOLD: f64 = 0.2;
pub const AUC_STEPS: usize = 20;

/// Euclidean distances divided by `normalizer`, for keypoints where `keep` is
/// set.
pub fn normalized_distances(pred: &[Point], gt: &[Point], keep: &[bool], normalizer: f64) -> Vec<f64> {
    assert!(normalizer > 0.0, "normalizer must be positive");
    pred.iter()
        .zip(gt)
        .zip(keep)
        .filter(|(_, &k)| k)
        .map(|((p, g), _)| ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt() / normalizer)
        .collect()
}

/// Fraction of distances at or under `threshold`; `None` when empty.
pub fn pck_from_distances(distances: &[f64], threshold: f64) -> Option<f64> {
    if distances.is_empty() {
        return None;
    }
    let hit = distances.iter().filter(|&&d| d <= threshold).count();
    Some(hit as f64 / distances.len() as f64)
}

/// PCK over visible keypoints; `None` when nothing is visible.
pub fn pck(pred: &[Point], gt: &[Point], visibility: &[bool], normalizer: f64, threshold: f64) -> Option<f64> {
    pck_from_distances(&normalized_distances(pred, gt, visibility, normalizer), threshold)
}

/// Trapezoidal area under `PCK(t)` on `t ∈ [0, t_max]`, divided by `t_max`.
pub fn auc(distances: &[f64], t_max: f64, steps: usize) -> Option<f64> {
    if distances.is_empty() || steps == 0 {
        return None;
    }
    let curve: Vec<f64> = (0..=steps)
        .map(|i| pck_from_distances(distances, t_max * i as f64 / steps as f64).unwrap())
        .collect();
    let area: f64 = curve.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum();
    Some(area / steps as f64)
}

/// Mean normalized distance.
pub fn nme(distances: &[f64]) -> Option<f64> {
    if distances.is_empty() {
        return None;
    }
    Some(distances.iter().sum::<f64>() / distances.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_hopeless() {
        let gt = [[0.2, 0.3], [0.5, 0.5]];
        assert_eq!(pck(&gt, &gt, &[true, true], 0.5, PCK_THRESHOLD), Some(1.0));
        let far = [[0.9, 0.9], [0.0, 0.0]];
        assert_eq!(pck(&far, &gt, &[true, true], 0.5, PCK_THRESHOLD), Some(0.0));
        assert_eq!(pck(&far, &gt, &[false, false], 0.5, PCK_THRESHOLD), None);
    }

    #[test]
    fn auc_edges() {
        assert_eq!(auc(&[0.0, 0.0], 0.2, 20), Some(1.0));
        assert_eq!(auc(&[0.5], 0.2, 20), Some(0.0));
        assert_eq!(auc(&[], 0.2, 20), None);
        let a = auc(&[0.1], 0.2, 20).unwrap();
        assert!((a - 0.5).abs() <= 1.0 / 20.0);
    }

    #[test]
    fn nme_mean() {
        assert_eq!(nme(&[0.0, 0.0]), Some(0.0));
        assert!((nme(&[0.1, 0.3]).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(nme(&[]), None);
    }
}
