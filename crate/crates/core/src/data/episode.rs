use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{Manifest, ManifestEntry};
use super::render::{render_instance, Instance};
use super::template::{generate_category, CategoryTemplate};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub categories: usize,
    pub occlusion_p: f64,
    pub image_size: usize,
    pub k_max: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            categories: 100,
            occlusion_p: 0.15,
            image_size: 64,
            k_max: 12,
            seed: 0,
        }
    }
}

/// One few-shot task.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub category_id: u32,
    pub supports: Vec<Instance>,
    pub query: Instance,
    /// Longest side of the query bounding box.
    pub normalizer: f64,
    pub symmetric_pairs: Vec<(usize, usize)>,
}

impl Episode {
    pub fn k(&self) -> usize {
        self.query.keypoints.len()
    }

    pub fn n_shot(&self) -> usize {
        self.supports.len()
    }

    pub fn symmetric_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.k()];
        for &(a, b) in &self.symmetric_pairs {
            m[a] = true;
            m[b] = true;
        }
        m
    }
}

/// Split sizes at 70/10/20 proportions; val and test are never empty for
/// ten or more categories.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let val = ((n as f64) * 0.1).round() as usize;
    let test = ((n as f64) * 0.2).round() as usize;
    let val = val.max(usize::from(n >= 10));
    let test = test.max(usize::from(n >= 10));
    (n.saturating_sub(val + test), val, test)
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub config: DataConfig,
    pub manifest: Manifest,
    templates: Vec<CategoryTemplate>,
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

const SUPPORT_RETRIES: usize = 16;

impl Dataset {
    /// Builds categories and disjoint splits from the root seed.
    pub fn generate(config: DataConfig) -> Result<Self> {
        if config.categories == 0 {
            return Err(Error::Data("no categories requested".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let seeds: Vec<u64> = (0..config.categories).map(|_| rng.gen()).collect();
        let mut order: Vec<usize> = (0..config.categories).collect();
        order.shuffle(&mut rng);
        let (n_train, n_val, _) = split_sizes(config.categories);
        let mut split = vec![Split::Test; config.categories];
        for (rank, &id) in order.iter().enumerate() {
            split[id] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
        let entries = (0..config.categories)
            .map(|id| {
                let k = generate_category(id as u32, seeds[id], config.k_max).k();
                ManifestEntry {
                    category_id: id as u32,
                    k,
                    split: split[id],
                    seed: seeds[id],
                }
            })
            .collect();
        Self::from_manifest(Manifest { entries }, config)
    }

    /// Rebuilds categories from a manifest; `config.categories` and
    /// `config.seed` are ignored in favor of the manifest.
    pub fn from_manifest(manifest: Manifest, mut config: DataConfig) -> Result<Self> {
        config.categories = manifest.entries.len();
        let mut templates = Vec::with_capacity(manifest.entries.len());
        let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for (i, e) in manifest.entries.iter().enumerate() {
            let t = generate_category(e.category_id, e.seed, config.k_max);
            if t.k() != e.k {
                return Err(Error::Data(format!(
                    "category {} regenerates with k={} but the manifest says {}",
                    e.category_id,
                    t.k(),
                    e.k
                )));
            }
            templates.push(t);
            match e.split {
                Split::Train => train.push(i),
                Split::Val => val.push(i),
                Split::Test => test.push(i),
            }
        }
        Ok(Self {
            config,
            manifest,
            templates,
            train,
            val,
            test,
        })
    }

    pub fn templates(&self) -> &[CategoryTemplate] {
        &self.templates
    }

    pub fn split_indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn category_ids(&self, split: Split) -> Vec<u32> {
        self.split_indices(split)
            .iter()
            .map(|&i| self.templates[i].category_id)
            .collect()
    }

    /// Uniform category from `split`, independent renders for supports and query.
    pub fn sample_episode<R: Rng>(&self, split: Split, n_shot: usize, rng: &mut R) -> Result<Episode> {
        if n_shot == 0 {
            return Err(Error::Data("n_shot must be at least 1".into()));
        }
        let pool = self.split_indices(split);
        let &idx = pool
            .choose(rng)
            .ok_or_else(|| Error::Data(format!("split {split} is empty")))?;
        let template = &self.templates[idx];
        let (p, size) = (self.config.occlusion_p, self.config.image_size);
        let query = render_instance(template, rng.gen(), p, size)?;
        let mut supports = Vec::with_capacity(n_shot);
        for _ in 0..n_shot {
            supports.push(render_instance(template, rng.gen(), p, size)?);
        }
        // Every keypoint slot must be visible in at least one support.
        for attempt in 0..=SUPPORT_RETRIES {
            let covered = (0..template.k()).all(|j| supports.iter().any(|s| s.visibility[j]));
            if covered {
                break;
            }
            let last = supports.last_mut().expect("n_shot >= 1");
            let occlusion = if attempt == SUPPORT_RETRIES { 0.0 } else { p };
            *last = render_instance(template, rng.gen(), occlusion, size)?;
        }
        let normalizer = query.bbox_longest_side();
        Ok(Episode {
            category_id: template.category_id,
            supports,
            query,
            normalizer,
            symmetric_pairs: template.symmetric_pairs.clone(),
        })
    }
}
