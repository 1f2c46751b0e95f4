//! Procedural keypoint categories, instance rendering and episodic sampling.

mod episode;
mod export;
mod manifest;
mod render;
mod template;

pub use episode::{DataConfig, Dataset, Episode, Split};
pub use export::{write_instance_csv, write_pgm};
pub use manifest::{Manifest, ManifestEntry};
pub use render::{render_instance, render_with_transform, Instance, Similarity};
pub use template::{generate_category, CategoryTemplate, MarkerShape, MarkerStyle, RenderStyle};

/// Normalized image coordinate `(x, y)` in `[0,1]²`.
pub type Point = [f64; 2];
