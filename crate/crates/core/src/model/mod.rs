//! The one-stage keypoint model: patch backbone, keypoint tokenization, GKP
//! cross-attention, the refined self-attention interactor and output heads.

pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod heads;
pub mod kar;
pub mod layers;
pub mod record;
pub mod tokens;

use rand::RngCore;

pub use backbone::Backbone;
pub use config::{HeadKind, ModelConfig, Variant};
pub use heads::{cell_index, decode_argmax, Head};
pub use kar::KarLayer;
pub use layers::{GkpLayer, InteractorLayer, KeypointBlock, TokenSet};
pub use record::{AttentionRecord, LayerRecord, Stage};
pub use tokens::{extract_keypoint_tokens, heatmap_weights};

use crate::data::{Episode, Point};
use crate::error::{Error, Result};
use crate::nn::{positional_encoding_2d, Binding, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct ScapeModel<S> {
    config: ModelConfig,
    params: ParamStore<S>,
    backbone: Backbone,
    identifiers: ParamId,
    gkp: Vec<GkpLayer>,
    interactor: Vec<InteractorLayer>,
    head: Head,
    pos: Tensor<S>,
}

/// Per-forward switches.
#[derive(Default)]
pub struct ForwardOptions<'a> {
    /// Training mode: enables dropout with this stream.
    pub rng: Option<&'a mut dyn RngCore>,
    pub record: bool,
    /// Build the loss against the query ground truth.
    pub with_loss: bool,
}

pub struct ForwardPass<S> {
    /// `K_max×2`, raw coordinates (unclamped).
    pub coords: Vec<Point>,
    /// Decoded or regressed node before decoding: `K_max×2` coordinates or
    /// `K_max×n_q` maps.
    pub output: Var,
    pub loss: Option<Var>,
    pub record: Option<AttentionRecord<S>>,
    pub tokens: TokenSet,
}

impl<S: Scalar> ScapeModel<S> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(seed);
        let d = config.d_model;
        let backbone = Backbone::new(&mut store, config.image_size, config.patch_size, d);
        let identifiers = store.add_zeros("identifiers", &[config.k_max, d]);
        let gkp = (0..config.gkp_layers())
            .map(|i| {
                GkpLayer::new(
                    &mut store,
                    &format!("gkp.{i}"),
                    d,
                    config.n_heads,
                    config.ffn_hidden,
                    config.gkp_query_ctx,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let block = if config.uses_kar() {
            KeypointBlock::Refined
        } else if config.masks_keypoint_attention() {
            KeypointBlock::Masked
        } else {
            KeypointBlock::Plain
        };
        let kar = Some((config.k_max, config.n_filters, config.af_hidden, config.assign_dropout));
        let interactor = (0..config.interactor_layers())
            .map(|i| {
                InteractorLayer::new(
                    &mut store,
                    &format!("inter.{i}"),
                    d,
                    config.n_heads,
                    config.ffn_hidden,
                    config.unshared_qk(),
                    block,
                    kar,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let head = match config.head() {
            HeadKind::Coordinate => Head::coordinate(&mut store, d),
            HeadKind::Matching => Head::matching(&mut store, d),
            HeadKind::MapRegression => Head::map_regression(&mut store, d, config.n_query_tokens()),
        };
        let pos = positional_encoding_2d(config.grid(), config.grid(), d)?;
        Ok(Self {
            config,
            params: store,
            backbone,
            identifiers,
            gkp,
            interactor,
            head,
            pos,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    pub fn identifiers(&self) -> ParamId {
        self.identifiers
    }

    /// Same weights under another variant; every parameter the target needs
    /// must exist here under the same name and shape.
    pub fn with_variant(&self, variant: Variant) -> Result<Self> {
        let config = ModelConfig {
            variant,
            ..self.config.clone()
        };
        let mut other = Self::new(config, 0)?;
        let entries = other
            .params
            .iter()
            .map(|(name, t)| {
                let id = self
                    .params
                    .find(name)
                    .ok_or_else(|| Error::Config(format!("{variant} needs parameter {name}")))?;
                let src = self.params.get(id);
                if src.shape() != t.shape() {
                    return Err(Error::Config(format!("parameter {name} changes shape")));
                }
                Ok((name.to_string(), src.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        other.params.load_from(entries)?;
        Ok(other)
    }

    /// Zeroes all keypoint attention refinement parameters.
    pub fn zero_kar(&mut self) -> usize {
        let n = self.interactor.len();
        (0..n).map(|i| self.params.zero_prefix(&format!("inter.{i}.kar."))).sum()
    }

    fn check_episode(&self, ep: &Episode) -> Result<()> {
        let k = ep.k();
        if k > self.config.k_max {
            return Err(Error::Input(format!("{k} keypoints exceed k_max {}", self.config.k_max)));
        }
        if ep.supports.is_empty() {
            return Err(Error::Input("episode has no supports".into()));
        }
        if ep.supports.iter().any(|s| s.keypoints.len() != k) {
            return Err(Error::Input("support and query keypoint counts differ".into()));
        }
        Ok(())
    }

    /// Keypoint tokens averaged over the shots where each keypoint is visible.
    fn support_tokens(&self, tape: &mut Tape<S>, feats: &[Var], ep: &Episode) -> Result<Var> {
        let k = ep.k();
        let (k_max, g) = (self.config.k_max, self.config.grid());
        let n = g * g;
        let mut total: Option<Var> = None;
        for (shot, &feat) in ep.supports.iter().zip(feats) {
            let w = heatmap_weights(&shot.keypoints, g, self.config.sigma)?;
            let mut flat = vec![0.0; k_max * n];
            for j in 0..k {
                let seen = ep.supports.iter().filter(|s| s.visibility[j]).count();
                let (use_shot, count) = if seen == 0 {
                    (true, ep.supports.len())
                } else {
                    (shot.visibility[j], seen)
                };
                if use_shot {
                    for (dst, &src) in flat[j * n..(j + 1) * n].iter_mut().zip(&w[j]) {
                        *dst = src / count as f64;
                    }
                }
            }
            let weights = tape.constant(Tensor::from_f64(&[k_max, n], &flat)?);
            let tok = tape.matmul(weights, feat)?;
            total = Some(match total {
                None => tok,
                Some(t) => tape.add(t, tok)?,
            });
        }
        Ok(total.expect("at least one support"))
    }

    pub fn forward(&self, tape: &mut Tape<S>, p: &Binding, ep: &Episode, mut opts: ForwardOptions<'_>) -> Result<ForwardPass<S>> {
        self.check_episode(ep)?;
        let cfg = &self.config;
        let (k, k_max) = (ep.k(), cfg.k_max);
        let valid: Vec<bool> = (0..k_max).map(|j| j < k).collect();

        let feats = ep
            .supports
            .iter()
            .map(|s| self.backbone.embed(tape, p, &s.image))
            .collect::<Result<Vec<_>>>()?;
        let mut f_s = self.support_tokens(tape, &feats, ep)?;
        if cfg.identifiers {
            let mask: Vec<f64> = valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
            let mask = tape.constant(Tensor::from_f64(&[k_max, 1], &mask)?);
            let ids = tape.mul_col(p.var(self.identifiers), mask)?;
            f_s = tape.add(f_s, ids)?;
        }
        let pos = tape.constant(self.pos.clone());
        let q = self.backbone.embed(tape, p, &ep.query.image)?;
        let f_q = tape.add(q, pos)?;
        let mut tokens = TokenSet { f_s, f_q, valid };

        let mut layers = opts.record.then(Vec::new);
        if !self.gkp.is_empty() {
            let ctx_parts = feats
                .iter()
                .map(|&f| tape.add(f, pos))
                .collect::<Result<Vec<_>>>()?;
            let ctx = if ctx_parts.len() == 1 {
                ctx_parts[0]
            } else {
                tape.concat_rows(&ctx_parts)?
            };
            let n_img = cfg.n_query_tokens();
            for layer in &self.gkp {
                tokens = layer.forward(tape, p, &tokens, ctx, n_img, layers.as_mut())?;
            }
        }
        for layer in &self.interactor {
            tokens = layer.forward(tape, p, &tokens, layers.as_mut(), opts.rng.as_mut().map(|r| &mut **r as &mut dyn RngCore))?;
        }

        let g = cfg.grid();
        let (output, coords, loss) = match &self.head {
            Head::Coordinate(mlp) => {
                let out = Head::regress_coordinates(mlp, tape, p, tokens.f_s)?;
                let coords = tape
                    .value(out)
                    .data()
                    .chunks_exact(2)
                    .map(|c| [c[0].as_f64(), c[1].as_f64()])
                    .collect();
                let loss = if opts.with_loss {
                    let mut target = vec![0.0; k_max * 2];
                    for (j, kp) in ep.query.keypoints.iter().enumerate() {
                        target[2 * j] = kp[0];
                        target[2 * j + 1] = kp[1];
                    }
                    let target = tape.constant(Tensor::from_f64(&[k_max, 2], &target)?);
                    Some(tape.l1_loss(out, target, &tokens.valid)?)
                } else {
                    None
                };
                (out, coords, loss)
            }
            head => {
                let maps = head
                    .similarity_map(tape, p, tokens.f_s, tokens.f_q)?
                    .expect("map head");
                let n_q = cfg.n_query_tokens();
                let coords = tape
                    .value(maps)
                    .data()
                    .chunks_exact(n_q)
                    .map(|row| decode_argmax(row, g))
                    .collect();
                let loss = if opts.with_loss {
                    let targets: Vec<Option<usize>> = (0..k_max)
                        .map(|j| ep.query.keypoints.get(j).map(|&kp| cell_index(kp, g)))
                        .collect();
                    Some(tape.cross_entropy_rows(maps, &targets)?)
                } else {
                    None
                };
                (maps, coords, loss)
            }
        };
        let record = layers.map(|layers| AttentionRecord {
            k_max,
            k_valid: k,
            grid: g,
            layers,
        });
        Ok(ForwardPass {
            coords,
            output,
            loss,
            record,
            tokens,
        })
    }

    /// Raw predictions for the episode's `k` keypoints (evaluation mode).
    pub fn predict(&self, ep: &Episode) -> Result<Vec<Point>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let pass = self.forward(&mut tape, &p, ep, ForwardOptions::default())?;
        Ok(pass.coords[..ep.k()].to_vec())
    }

    /// Predictions plus the attention record.
    pub fn inspect(&self, ep: &Episode) -> Result<(Vec<Point>, AttentionRecord<S>)> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let pass = self.forward(
            &mut tape,
            &p,
            ep,
            ForwardOptions {
                record: true,
                ..ForwardOptions::default()
            },
        )?;
        Ok((pass.coords[..ep.k()].to_vec(), pass.record.expect("recording on")))
    }

    /// Training loss and parameter gradients for one episode.
    pub fn loss_and_grads(&self, ep: &Episode, rng: Option<&mut dyn RngCore>) -> Result<(S, Vec<Tensor<S>>)> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, true);
        let pass = self.forward(
            &mut tape,
            &p,
            ep,
            ForwardOptions {
                rng,
                record: false,
                with_loss: true,
            },
        )?;
        let loss = pass.loss.expect("loss requested");
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss {value}")));
        }
        tape.backward(loss)?;
        Ok((value, p.grads(&tape)))
    }

    /// Evaluation-mode loss.
    pub fn loss(&self, ep: &Episode) -> Result<S> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let pass = self.forward(
            &mut tape,
            &p,
            ep,
            ForwardOptions {
                with_loss: true,
                ..ForwardOptions::default()
            },
        )?;
        Ok(tape.value(pass.loss.expect("loss requested")).data()[0])
    }
}
