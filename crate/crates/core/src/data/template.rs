use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Point;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MarkerShape {
    Disk,
    Square,
    Diamond,
    Ring,
    Cross,
}

impl MarkerShape {
    const ALL: [MarkerShape; 5] = [
        MarkerShape::Disk,
        MarkerShape::Square,
        MarkerShape::Diamond,
        MarkerShape::Ring,
        MarkerShape::Cross,
    ];

    /// Whether a pixel at offset `(dx, dy)` from the marker center is inked.
    pub fn covers(self, dx: f64, dy: f64, radius: f64) -> bool {
        match self {
            MarkerShape::Disk => dx * dx + dy * dy <= radius * radius,
            MarkerShape::Square => dx.abs().max(dy.abs()) <= radius * 0.85,
            MarkerShape::Diamond => dx.abs() + dy.abs() <= radius * 1.2,
            MarkerShape::Ring => {
                let d = (dx * dx + dy * dy).sqrt();
                d <= radius + 0.5 && d >= radius - 1.0
            }
            MarkerShape::Cross => {
                (dx.abs() <= 0.7 || dy.abs() <= 0.7) && dx.abs().max(dy.abs()) <= radius + 0.5
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarkerStyle {
    pub shape: MarkerShape,
    /// Pixels.
    pub radius: f64,
    pub intensity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderStyle {
    pub markers: Vec<MarkerStyle>,
    /// Half-width of limbs, pixels.
    pub limb_thickness: f64,
    pub limb_intensity: f64,
}

/// A keypoint layout standing in for one object category.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoryTemplate {
    pub category_id: u32,
    pub seed: u64,
    pub keypoints: Vec<Point>,
    pub edges: Vec<(usize, usize)>,
    /// Index pairs mirrored across `x = 0.5` in the canonical pose.
    pub symmetric_pairs: Vec<(usize, usize)>,
    pub style: RenderStyle,
}

impl CategoryTemplate {
    pub fn k(&self) -> usize {
        self.keypoints.len()
    }

    /// Per-keypoint flag: member of some symmetric pair.
    pub fn symmetric_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.k()];
        for &(a, b) in &self.symmetric_pairs {
            m[a] = true;
            m[b] = true;
        }
        m
    }

    pub fn max_marker_radius(&self) -> f64 {
        self.style.markers.iter().map(|m| m.radius).fold(0.0, f64::max)
    }
}

pub const SYMMETRIC_PROBABILITY: f64 = 0.7;
const CANON_LO: f64 = 0.2;
const CANON_HI: f64 = 0.8;
const MIN_SEPARATION: f64 = 0.12;

/// Deterministic category from `seed`, with `2 ≤ k ≤ k_max` keypoints.
pub fn generate_category(category_id: u32, seed: u64, k_max: usize) -> CategoryTemplate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k_lo = 4.min(k_max).max(2);
    let k = rng.gen_range(k_lo..=k_max.max(2));
    let symmetric = rng.gen_bool(SYMMETRIC_PROBABILITY);
    let n_pairs = if symmetric { rng.gen_range(1..=(k / 2).max(1)) } else { 0 };

    let (points, pairs) = loop {
        if let Some(layout) = place_points(&mut rng, k, n_pairs) {
            break layout;
        }
    };

    // Slot order carries no geometric meaning.
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(&mut rng);
    let mut slot_of = vec![0; k];
    for (slot, &src) in order.iter().enumerate() {
        slot_of[src] = slot;
    }
    let keypoints: Vec<Point> = order.iter().map(|&src| points[src]).collect();
    let mut symmetric_pairs: Vec<(usize, usize)> = pairs
        .iter()
        .map(|&(a, b)| {
            let (a, b) = (slot_of[a], slot_of[b]);
            (a.min(b), a.max(b))
        })
        .collect();
    symmetric_pairs.sort_unstable();

    let mut perm: Vec<usize> = (0..k).collect();
    perm.shuffle(&mut rng);
    let mut edges = Vec::with_capacity(k);
    for i in 1..k {
        let j = perm[rng.gen_range(0..i)];
        edges.push(ordered(perm[i], j));
    }
    if k > 3 && rng.gen_bool(0.4) {
        let a = rng.gen_range(0..k);
        let b = rng.gen_range(0..k);
        let e = ordered(a, b);
        if a != b && !edges.contains(&e) {
            edges.push(e);
        }
    }

    let mut markers: Vec<MarkerStyle> = (0..k)
        .map(|_| MarkerStyle {
            shape: *MarkerShape::ALL.choose(&mut rng).unwrap(),
            radius: rng.gen_range(1.8..2.6),
            intensity: rng.gen_range(0.55..1.0),
        })
        .collect();
    for &(a, b) in &symmetric_pairs {
        markers[b] = markers[a];
    }
    let style = RenderStyle {
        markers,
        limb_thickness: rng.gen_range(0.6..1.2),
        limb_intensity: rng.gen_range(0.25..0.4),
    };

    CategoryTemplate {
        category_id,
        seed,
        keypoints,
        edges,
        symmetric_pairs,
        style,
    }
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

fn far_enough(points: &[Point], p: Point, min: f64) -> bool {
    points
        .iter()
        .all(|q| ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt() >= min)
}

fn place_points(rng: &mut ChaCha8Rng, k: usize, n_pairs: usize) -> Option<(Vec<Point>, Vec<(usize, usize)>)> {
    let mut points: Vec<Point> = Vec::with_capacity(k);
    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let mut placed = false;
        for _ in 0..500 {
            let x = rng.gen_range(CANON_LO..0.5 - MIN_SEPARATION / 2.0);
            let y = rng.gen_range(CANON_LO..CANON_HI);
            let (l, r) = ([x, y], [1.0 - x, y]);
            if far_enough(&points, l, MIN_SEPARATION) && far_enough(&points, r, MIN_SEPARATION) {
                pairs.push((points.len(), points.len() + 1));
                points.push(l);
                points.push(r);
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
    }
    while points.len() < k {
        let mut placed = false;
        for _ in 0..500 {
            let p = [rng.gen_range(CANON_LO..CANON_HI), rng.gen_range(CANON_LO..CANON_HI)];
            // keep unpaired points from sitting exactly on a mirror image
            let mirrored = [1.0 - p[0], p[1]];
            if far_enough(&points, p, MIN_SEPARATION)
                && (p[0] - 0.5).abs() > 1e-3
                && far_enough(&points, mirrored, MIN_SEPARATION / 2.0)
            {
                points.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
    }
    Some((points, pairs))
}
