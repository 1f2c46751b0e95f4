use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Architecture variants used by the ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// GKP + interactor with keypoint attention refinement, unshared Q/K.
    Scape,
    /// One GKP layer and two interactor layers.
    Lite,
    /// All attention blocks are interactor layers.
    NoGkp,
    /// GKP + interactor without refinement.
    NoKar,
    /// Full-encoder interactor with shared Q/K, no GKP and no refinement.
    SharedQk,
    /// Keypoint-to-keypoint attention masked out instead of refined.
    MaskKk,
    /// Explicit inner-product similarity map, supervised per cell.
    MatchingHead,
    /// Similarity map regressed from keypoint tokens.
    MapRegressionHead,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Scape,
        Variant::Lite,
        Variant::NoGkp,
        Variant::NoKar,
        Variant::SharedQk,
        Variant::MaskKk,
        Variant::MatchingHead,
        Variant::MapRegressionHead,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Scape => "scape",
            Variant::Lite => "lite",
            Variant::NoGkp => "no_gkp",
            Variant::NoKar => "no_kar",
            Variant::SharedQk => "shared_qk",
            Variant::MaskKk => "mask_kk",
            Variant::MatchingHead => "matching_head",
            Variant::MapRegressionHead => "map_regression_head",
        }
    }

    /// The plain encoder body (no GKP, no refinement, shared Q/K).
    fn plain_body(self) -> bool {
        matches!(
            self,
            Variant::SharedQk | Variant::MatchingHead | Variant::MapRegressionHead
        )
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .iter()
            .copied()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    Coordinate,
    Matching,
    MapRegression,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_gkp_layers: usize,
    pub n_interactor_layers: usize,
    pub k_max: usize,
    pub n_filters: usize,
    pub af_hidden: usize,
    pub ffn_hidden: usize,
    pub variant: Variant,
    /// Add learned per-slot identifiers to support keypoint tokens.
    pub identifiers: bool,
    /// Gaussian width for keypoint token pooling, in feature-grid cells.
    pub sigma: f64,
    pub assign_dropout: f64,
    /// GKP keys/values include the query tokens as well as the support image.
    pub gkp_query_ctx: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            patch_size: 8,
            d_model: 32,
            n_heads: 4,
            n_gkp_layers: 2,
            n_interactor_layers: 4,
            k_max: 12,
            n_filters: 4,
            af_hidden: 6,
            ffn_hidden: 64,
            variant: Variant::Scape,
            identifiers: true,
            sigma: 1.0,
            assign_dropout: 0.1,
            gkp_query_ctx: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return fail(format!(
                "image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.d_model == 0 || self.d_model % 4 != 0 {
            return fail(format!("d_model {} must be a positive multiple of 4", self.d_model));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.k_max < 2 {
            return fail("k_max must be at least 2".into());
        }
        if self.af_hidden == 0 || self.n_filters == 0 || self.ffn_hidden == 0 {
            return fail("af_hidden, n_filters and ffn_hidden must be positive".into());
        }
        if self.interactor_layers() == 0 {
            return fail("at least one interactor layer is required".into());
        }
        if !(self.sigma >= 0.0) {
            return fail(format!("sigma {} must be non-negative", self.sigma));
        }
        if !(0.0..1.0).contains(&self.assign_dropout) {
            return fail(format!("assign_dropout {} outside [0,1)", self.assign_dropout));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn n_query_tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn gkp_layers(&self) -> usize {
        match self.variant {
            Variant::Lite => 1,
            Variant::NoGkp => 0,
            v if v.plain_body() => 0,
            _ => self.n_gkp_layers,
        }
    }

    pub fn interactor_layers(&self) -> usize {
        match self.variant {
            Variant::Lite => 2,
            Variant::NoGkp => self.n_gkp_layers + self.n_interactor_layers,
            v if v.plain_body() => self.n_gkp_layers + self.n_interactor_layers,
            _ => self.n_interactor_layers,
        }
    }

    pub fn uses_kar(&self) -> bool {
        matches!(self.variant, Variant::Scape | Variant::Lite | Variant::NoGkp)
    }

    pub fn unshared_qk(&self) -> bool {
        !self.variant.plain_body()
    }

    pub fn masks_keypoint_attention(&self) -> bool {
        self.variant == Variant::MaskKk
    }

    pub fn head(&self) -> HeadKind {
        match self.variant {
            Variant::MatchingHead => HeadKind::Matching,
            Variant::MapRegressionHead => HeadKind::MapRegression,
            _ => HeadKind::Coordinate,
        }
    }

    /// Canonical `key=value` lines; the checkpoint hash covers exactly this text.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.pairs() {
            s.push_str(&k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    pub fn pairs(&self) -> Vec<(String, String)> {
        vec![
            ("image_size".into(), self.image_size.to_string()),
            ("patch_size".into(), self.patch_size.to_string()),
            ("d_model".into(), self.d_model.to_string()),
            ("n_heads".into(), self.n_heads.to_string()),
            ("n_gkp_layers".into(), self.n_gkp_layers.to_string()),
            ("n_interactor_layers".into(), self.n_interactor_layers.to_string()),
            ("k_max".into(), self.k_max.to_string()),
            ("n_filters".into(), self.n_filters.to_string()),
            ("af_hidden".into(), self.af_hidden.to_string()),
            ("ffn_hidden".into(), self.ffn_hidden.to_string()),
            ("variant".into(), self.variant.to_string()),
            ("identifiers".into(), self.identifiers.to_string()),
            ("sigma".into(), format!("{:?}", self.sigma)),
            ("assign_dropout".into(), format!("{:?}", self.assign_dropout)),
            ("gkp_query_ctx".into(), self.gkp_query_ctx.to_string()),
        ]
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value '{v}' for {key}")))
        }
        match key {
            "image_size" => self.image_size = num(key, value)?,
            "patch_size" => self.patch_size = num(key, value)?,
            "d_model" => self.d_model = num(key, value)?,
            "n_heads" => self.n_heads = num(key, value)?,
            "n_gkp_layers" => self.n_gkp_layers = num(key, value)?,
            "n_interactor_layers" => self.n_interactor_layers = num(key, value)?,
            "k_max" => self.k_max = num(key, value)?,
            "n_filters" => self.n_filters = num(key, value)?,
            "af_hidden" => self.af_hidden = num(key, value)?,
            "ffn_hidden" => self.ffn_hidden = num(key, value)?,
            "variant" => self.variant = value.trim().parse()?,
            "identifiers" => self.identifiers = num(key, value)?,
            "sigma" => self.sigma = num(key, value)?,
            "assign_dropout" => self.assign_dropout = num(key, value)?,
            "gkp_query_ctx" => self.gkp_query_ctx = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown model key '{key}'"))),
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("malformed line '{line}'")))?;
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }

    /// Hex SHA-256 of [`to_text`](Self::to_text).
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
