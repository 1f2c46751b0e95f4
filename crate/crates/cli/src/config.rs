use std::path::PathBuf;
use std::str::FromStr;

use scape_core::data::{DataConfig, Split};
use scape_core::eval::TrainConfig;
use scape_core::model::{ModelConfig, Variant};
use scape_core::{Error, Result};

/// Which predictor `eval` scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredictorKind {
    Model,
    Oracle,
    Center,
}

impl FromStr for PredictorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "model" => Ok(Self::Model),
            "oracle" => Ok(Self::Oracle),
            "center" => Ok(Self::Center),
            _ => Err(Error::Config(format!("unknown predictor '{s}'"))),
        }
    }
}

impl PredictorKind {
    fn name(self) -> &'static str {
        match self {
            Self::Model => "model",
            Self::Oracle => "oracle",
            Self::Center => "center",
        }
    }
}

/// Every setting a command can read. Text form is flat `key=value`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval_split: Split,
    pub eval_episodes: usize,
    pub eval_n_shot: usize,
    pub eval_seed: u64,
    pub eval_predictor: PredictorKind,
    pub ablate_variants: Vec<Variant>,
    pub ablate_seeds: Vec<u64>,
    pub ablate_steps: usize,
    pub ablate_batch_size: usize,
    pub ablate_lr: f64,
    pub ablate_episodes: usize,
    pub dump_episode_seed: u64,
    pub manifest: PathBuf,
    pub checkpoint: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            eval_split: Split::Test,
            eval_episodes: 500,
            eval_n_shot: 1,
            eval_seed: 0,
            eval_predictor: PredictorKind::Model,
            ablate_variants: Variant::ALL.to_vec(),
            ablate_seeds: (0..5).collect(),
            ablate_steps: 2000,
            ablate_batch_size: 8,
            ablate_lr: 1e-3,
            ablate_episodes: 300,
            dump_episode_seed: 0,
            manifest: PathBuf::from("manifest.csv"),
            checkpoint: PathBuf::from("model.ckpt"),
            out_dir: PathBuf::from("out"),
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{v}' for {key}")))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s))
        .collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .model
            .pairs()
            .into_iter()
            .map(|(k, v)| (format!("model.{k}"), v))
            .collect();
        let d = &self.data;
        let t = &self.train;
        let rest = [
            ("data.categories", d.categories.to_string()),
            ("data.occlusion_p", format!("{:?}", d.occlusion_p)),
            ("data.seed", d.seed.to_string()),
            ("train.steps", t.steps.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.lr", format!("{:?}", t.base_lr)),
            ("train.n_shot", t.n_shot.to_string()),
            ("train.seed", t.seed.to_string()),
            ("eval.split", self.eval_split.to_string()),
            ("eval.episodes", self.eval_episodes.to_string()),
            ("eval.n_shot", self.eval_n_shot.to_string()),
            ("eval.seed", self.eval_seed.to_string()),
            ("eval.predictor", self.eval_predictor.name().to_string()),
            ("ablate.variants", join(&self.ablate_variants)),
            ("ablate.seeds", join(&self.ablate_seeds)),
            ("ablate.steps", self.ablate_steps.to_string()),
            ("ablate.batch_size", self.ablate_batch_size.to_string()),
            ("ablate.lr", format!("{:?}", self.ablate_lr)),
            ("ablate.episodes", self.ablate_episodes.to_string()),
            ("dump.episode_seed", self.dump_episode_seed.to_string()),
            ("path.manifest", self.manifest.display().to_string()),
            ("path.checkpoint", self.checkpoint.display().to_string()),
            ("path.out_dir", self.out_dir.display().to_string()),
        ];
        out.extend(rest.into_iter().map(|(k, v)| (k.to_string(), v)));
        out
    }

    pub fn to_text(&self) -> String {
        self.pairs().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        if let Some(k) = key.strip_prefix("model.") {
            return self.model.set(k, value);
        }
        let v = value.trim();
        match key {
            "data.categories" => self.data.categories = num(key, v)?,
            "data.occlusion_p" => self.data.occlusion_p = num(key, v)?,
            "data.seed" => self.data.seed = num(key, v)?,
            "train.steps" => self.train.steps = num(key, v)?,
            "train.epochs" => self.train.epochs = num(key, v)?,
            "train.batch_size" => self.train.batch_size = num(key, v)?,
            "train.lr" => self.train.base_lr = num(key, v)?,
            "train.n_shot" => self.train.n_shot = num(key, v)?,
            "train.seed" => self.train.seed = num(key, v)?,
            "eval.split" => self.eval_split = num(key, v)?,
            "eval.episodes" => self.eval_episodes = num(key, v)?,
            "eval.n_shot" => self.eval_n_shot = num(key, v)?,
            "eval.seed" => self.eval_seed = num(key, v)?,
            "eval.predictor" => self.eval_predictor = v.parse()?,
            "ablate.variants" => self.ablate_variants = list(key, v)?,
            "ablate.seeds" => self.ablate_seeds = list(key, v)?,
            "ablate.steps" => self.ablate_steps = num(key, v)?,
            "ablate.batch_size" => self.ablate_batch_size = num(key, v)?,
            "ablate.lr" => self.ablate_lr = num(key, v)?,
            "ablate.episodes" => self.ablate_episodes = num(key, v)?,
            "dump.episode_seed" => self.dump_episode_seed = num(key, v)?,
            "path.manifest" => self.manifest = PathBuf::from(v),
            "path.checkpoint" => self.checkpoint = PathBuf::from(v),
            "path.out_dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got '{line}'")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    /// Data settings with image size and keypoint capacity tied to the model.
    pub fn data_config(&self) -> DataConfig {
        DataConfig {
            image_size: self.model.image_size,
            k_max: self.model.k_max,
            ..self.data.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.data.categories == 0 {
            return Err(Error::Config("data.categories must be positive".into()));
        }
        if !(0.0..=0.5).contains(&self.data.occlusion_p) {
            return Err(Error::Config("data.occlusion_p must lie in [0, 0.5]".into()));
        }
        if self.eval_episodes == 0 || self.eval_n_shot == 0 {
            return Err(Error::Config("eval.episodes and eval.n_shot must be positive".into()));
        }
        Ok(())
    }
}
