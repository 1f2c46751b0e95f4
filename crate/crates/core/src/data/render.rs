use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::template::CategoryTemplate;
use super::Point;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `p ↦ c + s·R(θ)·(p − c) + t` about the image center `c = (0.5, 0.5)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub angle: f64,
    pub scale: f64,
    pub translation: [f64; 2],
}

impl Similarity {
    pub const IDENTITY: Similarity = Similarity {
        angle: 0.0,
        scale: 1.0,
        translation: [0.0, 0.0],
    };

    pub fn apply(&self, p: Point) -> Point {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (p[0] - 0.5, p[1] - 0.5);
        [
            0.5 + self.scale * (c * dx - s * dy) + self.translation[0],
            0.5 + self.scale * (s * dx + c * dy) + self.translation[1],
        ]
    }

    pub fn invert(&self, p: Point) -> Point {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (
            (p[0] - 0.5 - self.translation[0]) / self.scale,
            (p[1] - 0.5 - self.translation[1]) / self.scale,
        );
        [0.5 + c * dx + s * dy, 0.5 - s * dx + c * dy]
    }
}

/// One rendered object.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    /// Grayscale `H×W×1`, values in `[0, 1]`.
    pub image: Tensor<f64>,
    pub keypoints: Vec<Point>,
    pub visibility: Vec<bool>,
    /// `[x0, y0, x1, y1]` in normalized units.
    pub bbox: [f64; 4],
    pub category_id: u32,
    pub transform: Similarity,
}

impl Instance {
    pub fn image_size(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn bbox_longest_side(&self) -> f64 {
        (self.bbox[2] - self.bbox[0]).max(self.bbox[3] - self.bbox[1])
    }
}

const MAX_ANGLE: f64 = std::f64::consts::PI / 6.0;
const SCALE_RANGE: (f64, f64) = (0.7, 1.3);
const FRAME_RETRIES: usize = 200;
const OCCLUDER_VALUE: f64 = 0.12;

/// Random similarity pose, limbs, markers and per-keypoint occlusion.
pub fn render_instance(template: &CategoryTemplate, seed: u64, occlusion_p: f64, image_size: usize) -> Result<Instance> {
    check_occlusion(occlusion_p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let margin = (template.max_marker_radius() + 2.0) / image_size as f64;
    for _ in 0..FRAME_RETRIES {
        let angle = rng.gen_range(-MAX_ANGLE..=MAX_ANGLE);
        let scale = rng.gen_range(SCALE_RANGE.0..=SCALE_RANGE.1);
        let base = Similarity {
            angle,
            scale,
            translation: [0.0, 0.0],
        };
        let pts: Vec<Point> = template.keypoints.iter().map(|&p| base.apply(p)).collect();
        let (lo, hi) = bounds(&pts);
        let tx = (margin - lo[0], 1.0 - margin - hi[0]);
        let ty = (margin - lo[1], 1.0 - margin - hi[1]);
        if tx.0 > tx.1 || ty.0 > ty.1 {
            continue;
        }
        let transform = Similarity {
            angle,
            scale,
            translation: [rng.gen_range(tx.0..=tx.1), rng.gen_range(ty.0..=ty.1)],
        };
        return render_with_transform(template, transform, &mut rng, occlusion_p, image_size);
    }
    Err(Error::Data(format!(
        "category {} could not be placed in frame after {FRAME_RETRIES} attempts",
        template.category_id
    )))
}

fn check_occlusion(p: f64) -> Result<()> {
    if !(0.0..=0.5).contains(&p) {
        return Err(Error::Data(format!("occlusion probability {p} outside [0, 0.5]")));
    }
    Ok(())
}

fn bounds(pts: &[Point]) -> (Point, Point) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in pts {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo, hi)
}

/// Renders with a fixed pose; `rng` drives occlusion only.
pub fn render_with_transform<R: Rng>(
    template: &CategoryTemplate,
    transform: Similarity,
    rng: &mut R,
    occlusion_p: f64,
    image_size: usize,
) -> Result<Instance> {
    check_occlusion(occlusion_p)?;
    let n = image_size as f64;
    let keypoints: Vec<Point> = template.keypoints.iter().map(|&p| transform.apply(p)).collect();
    let margin = template.max_marker_radius() / n;
    if keypoints
        .iter()
        .any(|p| p.iter().any(|&c| c < margin || c > 1.0 - margin))
    {
        return Err(Error::Data("keypoints leave the frame".into()));
    }
    let px: Vec<Point> = keypoints.iter().map(|p| [p[0] * n, p[1] * n]).collect();
    let mut img = vec![0.0; image_size * image_size];
    let style = &template.style;

    for &(a, b) in &template.edges {
        draw_segment(&mut img, image_size, px[a], px[b], style.limb_thickness, style.limb_intensity);
    }
    for (p, m) in px.iter().zip(&style.markers) {
        let r = m.radius.ceil() as i64 + 1;
        let (cx, cy) = (p[0].floor() as i64, p[1].floor() as i64);
        for y in (cy - r)..=(cy + r) {
            for x in (cx - r)..=(cx + r) {
                if x < 0 || y < 0 || x >= image_size as i64 || y >= image_size as i64 {
                    continue;
                }
                let (dx, dy) = (x as f64 + 0.5 - p[0], y as f64 + 0.5 - p[1]);
                if m.shape.covers(dx, dy, m.radius) {
                    img[y as usize * image_size + x as usize] = m.intensity;
                }
            }
        }
    }

    let mut visibility = vec![true; keypoints.len()];
    for (i, vis) in visibility.iter_mut().enumerate() {
        if occlusion_p > 0.0 && rng.gen_bool(occlusion_p) {
            *vis = false;
            let half = style.markers[i].radius + 1.0;
            let p = px[i];
            for y in 0..image_size {
                for x in 0..image_size {
                    let (dx, dy) = (x as f64 + 0.5 - p[0], y as f64 + 0.5 - p[1]);
                    if dx.abs() <= half && dy.abs() <= half {
                        img[y * image_size + x] = OCCLUDER_VALUE;
                    }
                }
            }
        }
    }

    let pad = template.max_marker_radius() / n;
    let (lo, hi) = bounds(&keypoints);
    let bbox = [
        (lo[0] - pad).max(0.0),
        (lo[1] - pad).max(0.0),
        (hi[0] + pad).min(1.0),
        (hi[1] + pad).min(1.0),
    ];
    Ok(Instance {
        image: Tensor::new(vec![image_size, image_size, 1], img)?,
        keypoints,
        visibility,
        bbox,
        category_id: template.category_id,
        transform,
    })
}

fn draw_segment(img: &mut [f64], size: usize, a: Point, b: Point, half_width: f64, value: f64) {
    let (x0, x1) = (a[0].min(b[0]) - half_width - 1.0, a[0].max(b[0]) + half_width + 1.0);
    let (y0, y1) = (a[1].min(b[1]) - half_width - 1.0, a[1].max(b[1]) + half_width + 1.0);
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    for y in (y0.floor().max(0.0) as usize)..(y1.ceil().min(size as f64) as usize) {
        for x in (x0.floor().max(0.0) as usize)..(x1.ceil().min(size as f64) as usize) {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let t = if len2 > 0.0 {
                (((px - a[0]) * dx + (py - a[1]) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (qx, qy) = (a[0] + t * dx - px, a[1] + t * dy - py);
            if qx * qx + qy * qy <= half_width * half_width {
                let cell = &mut img[y * size + x];
                *cell = cell.max(value);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::template::generate_category;
    use super::*;

    #[test]
    fn no_occlusion_means_all_visible() {
        for seed in 0..30 {
            let t = generate_category(0, seed, 12);
            let inst = render_instance(&t, seed * 7 + 1, 0.0, 64).unwrap();
            assert!(inst.visibility.iter().all(|&v| v));
        }
    }

    #[test]
    fn identity_transform_keeps_canonical_coordinates() {
        let t = generate_category(0, 5, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let inst = render_with_transform(&t, Similarity::IDENTITY, &mut rng, 0.0, 64).unwrap();
        for (a, b) in inst.keypoints.iter().zip(&t.keypoints) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_transform_recovers_canonical() {
        for seed in 0..50 {
            let t = generate_category(1, seed, 12);
            let inst = render_instance(&t, seed + 1000, 0.3, 64).unwrap();
            for (p, c) in inst.keypoints.iter().zip(&t.keypoints) {
                let back = inst.transform.invert(*p);
                assert!((back[0] - c[0]).abs() < 1e-9 && (back[1] - c[1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn occluded_keypoints_keep_ground_truth() {
        let t = generate_category(2, 17, 12);
        let a = render_instance(&t, 3, 0.0, 64).unwrap();
        let b = render_instance(&t, 3, 0.5, 64).unwrap();
        assert_eq!(a.keypoints, b.keypoints);
        assert!(b.visibility.iter().any(|v| !v));
    }

    #[test]
    fn visible_keypoints_inside_image_and_bbox_positive() {
        for seed in 0..50 {
            let t = generate_category(0, seed, 12);
            let inst = render_instance(&t, seed, 0.2, 64).unwrap();
            for (p, &v) in inst.keypoints.iter().zip(&inst.visibility) {
                if v {
                    assert!(p.iter().all(|c| (0.0..=1.0).contains(c)));
                }
            }
            assert!(inst.bbox[2] > inst.bbox[0] && inst.bbox[3] > inst.bbox[1]);
        }
    }

    #[test]
    fn bad_occlusion_probability_rejected() {
        let t = generate_category(0, 1, 12);
        assert!(render_instance(&t, 1, 0.6, 64).is_err());
    }

    /// Centroid of pixels painted with a keypoint's marker intensity, scanned
    /// in a window around the keypoint.
    fn marker_centroid(inst: &Instance, t: &CategoryTemplate, i: usize) -> Option<Point> {
        let n = inst.image_size();
        let m = t.style.markers[i];
        let p = [inst.keypoints[i][0] * n as f64, inst.keypoints[i][1] * n as f64];
        let r = m.radius.ceil() as i64 + 1;
        let (mut sx, mut sy, mut cnt) = (0.0, 0.0, 0.0);
        for y in (p[1].floor() as i64 - r)..=(p[1].floor() as i64 + r) {
            for x in (p[0].floor() as i64 - r)..=(p[0].floor() as i64 + r) {
                if x < 0 || y < 0 || x >= n as i64 || y >= n as i64 {
                    continue;
                }
                if inst.image.data()[y as usize * n + x as usize] == m.intensity {
                    sx += x as f64 + 0.5;
                    sy += y as f64 + 0.5;
                    cnt += 1.0;
                }
            }
        }
        (cnt > 0.0).then(|| [sx / cnt, sy / cnt])
    }

    #[test]
    fn marker_centroids_sit_on_keypoints() {
        for seed in 0..40 {
            let t = generate_category(0, seed, 12);
            let inst = render_instance(&t, seed ^ 0xabc, 0.0, 64).unwrap();
            for i in 0..t.k() {
                let c = marker_centroid(&inst, &t, i).expect("marker drawn");
                let p = [inst.keypoints[i][0] * 64.0, inst.keypoints[i][1] * 64.0];
                let d = ((c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2)).sqrt();
                assert!(d <= 1.0, "seed {seed} keypoint {i}: centroid off by {d}");
            }
        }
    }
}
