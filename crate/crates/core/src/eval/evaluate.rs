use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::{auc, nme, normalized_distances, pck_from_distances, AUC_STEPS, PCK_THRESHOLD};
use crate::data::{Dataset, Episode, Point, Split};
use crate::error::Result;
use crate::model::ScapeModel;
use crate::scalar::Scalar;

/// Anything that localizes the query keypoints of an episode.
pub trait Predictor {
    fn predict(&self, ep: &Episode) -> Result<Vec<Point>>;
}

impl<S: Scalar> Predictor for ScapeModel<S> {
    fn predict(&self, ep: &Episode) -> Result<Vec<Point>> {
        ScapeModel::predict(self, ep)
    }
}

/// Returns the ground truth.
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn predict(&self, ep: &Episode) -> Result<Vec<Point>> {
        Ok(ep.query.keypoints.clone())
    }
}

/// Puts every keypoint at the image center.
pub struct CenterPredictor;

impl Predictor for CenterPredictor {
    fn predict(&self, ep: &Episode) -> Result<Vec<Point>> {
        Ok(vec![[0.5, 0.5]; ep.k()])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeScore {
    pub category_id: u32,
    /// Normalized distances of visible keypoints.
    pub distances: Vec<f64>,
    pub symmetric: Vec<f64>,
    /// Distances to the ground truth of occluded keypoints.
    pub occluded: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub episodes: Vec<EpisodeScore>,
    pub pck: f64,
    pub auc: f64,
    pub nme: f64,
    pub pck_symmetric: Option<f64>,
    pub pck_occluded: Option<f64>,
    /// Episodes without any visible query keypoint.
    pub skipped: usize,
}

pub const EVAL_CSV_HEADER: &str = "pck,auc,nme,pck_symmetric,pck_occluded,n_keypoints,n_episodes";

pub fn fmt_metric(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.6}"),
        None => "NA".into(),
    }
}

impl EvalResult {
    pub fn from_episodes(episodes: Vec<EpisodeScore>) -> Self {
        let all: Vec<f64> = episodes.iter().flat_map(|e| e.distances.iter().copied()).collect();
        let sym: Vec<f64> = episodes.iter().flat_map(|e| e.symmetric.iter().copied()).collect();
        let occ: Vec<f64> = episodes.iter().flat_map(|e| e.occluded.iter().copied()).collect();
        let skipped = episodes.iter().filter(|e| e.distances.is_empty()).count();
        Self {
            pck: pck_from_distances(&all, PCK_THRESHOLD).unwrap_or(0.0),
            auc: auc(&all, PCK_THRESHOLD, AUC_STEPS).unwrap_or(0.0),
            nme: nme(&all).unwrap_or(0.0),
            pck_symmetric: pck_from_distances(&sym, PCK_THRESHOLD),
            pck_occluded: pck_from_distances(&occ, PCK_THRESHOLD),
            skipped,
            episodes,
        }
    }

    pub fn n_keypoints(&self) -> usize {
        self.episodes.iter().map(|e| e.distances.len()).sum()
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{},{},{},{}",
            self.pck,
            self.auc,
            self.nme,
            fmt_metric(self.pck_symmetric),
            fmt_metric(self.pck_occluded),
            self.n_keypoints(),
            self.episodes.len()
        )
    }
}

/// Scores one episode; predictions are clamped to the image.
pub fn score_episode(ep: &Episode, pred: &[Point]) -> EpisodeScore {
    let pred: Vec<Point> = pred.iter().map(|p| [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)]).collect();
    let gt = &ep.query.keypoints;
    let vis = &ep.query.visibility;
    let sym_mask = ep.symmetric_mask();
    let sym: Vec<bool> = vis.iter().zip(&sym_mask).map(|(&v, &s)| v && s).collect();
    let occ: Vec<bool> = vis.iter().map(|&v| !v).collect();
    EpisodeScore {
        category_id: ep.category_id,
        distances: normalized_distances(&pred, gt, vis, ep.normalizer),
        symmetric: normalized_distances(&pred, gt, &sym, ep.normalizer),
        occluded: normalized_distances(&pred, gt, &occ, ep.normalizer),
    }
}

/// Episodes drawn for evaluation: a fixed stream per `(split, n_shot, seed)`.
pub fn eval_episodes(dataset: &Dataset, split: Split, n_episodes: usize, n_shot: usize, seed: u64) -> Result<Vec<Episode>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_episodes)
        .map(|_| dataset.sample_episode(split, n_shot, &mut rng))
        .collect()
}

pub fn evaluate_episodes<P: Predictor + ?Sized>(predictor: &P, episodes: &[Episode]) -> Result<EvalResult> {
    let scores = episodes
        .iter()
        .map(|ep| Ok(score_episode(ep, &predictor.predict(ep)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalResult::from_episodes(scores))
}

pub fn evaluate<P: Predictor + ?Sized>(
    predictor: &P,
    dataset: &Dataset,
    split: Split,
    n_episodes: usize,
    n_shot: usize,
    seed: u64,
) -> Result<EvalResult> {
    evaluate_episodes(predictor, &eval_episodes(dataset, split, n_episodes, n_shot, seed)?)
}
