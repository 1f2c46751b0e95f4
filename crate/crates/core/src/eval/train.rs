use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Episode, Split};
use crate::error::{Error, Result};
use crate::model::ScapeModel;
use crate::nn::{lr_schedule, Adam, AdamState};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    /// Epoch-equivalents the steps are divided into; drives the decay
    /// schedule and per-epoch callbacks.
    pub epochs: usize,
    pub n_shot: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 16,
            base_lr: 2e-4,
            epochs: 180,
            n_shot: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.epochs == 0 || self.n_shot == 0 {
            return Err(Error::Config("steps, batch_size, epochs and n_shot must be positive".into()));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.base_lr)));
        }
        Ok(())
    }

    /// Epoch-equivalent containing `step`.
    pub fn epoch_of(&self, step: usize) -> usize {
        step * self.epochs / self.steps
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        lr_schedule(self.epoch_of(step), self.epochs, self.base_lr)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// What stopped a run early.
#[derive(Debug)]
pub struct Divergence {
    pub step: usize,
    pub batch: Vec<Episode>,
    pub error: Error,
}

pub trait TrainObserver<S> {
    fn on_step(&mut self, _log: &StepLog) -> Result<()> {
        Ok(())
    }

    /// Called after the last step of each epoch-equivalent.
    fn on_epoch(&mut self, _epoch: usize, _model: &ScapeModel<S>) -> Result<()> {
        Ok(())
    }
}

pub struct NoObserver;

impl<S> TrainObserver<S> for NoObserver {}

/// Separate streams for episode sampling and dropout.
fn streams(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut data = ChaCha8Rng::seed_from_u64(seed);
    data.set_stream(1);
    let mut noise = ChaCha8Rng::seed_from_u64(seed);
    noise.set_stream(2);
    (data, noise)
}

/// Episodic training with Adam and step decay. Returns the per-step log, or
/// the failing batch when the loss stops being finite.
pub fn train<S: Scalar>(
    model: &mut ScapeModel<S>,
    dataset: &Dataset,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver<S>,
) -> std::result::Result<Vec<StepLog>, Box<Divergence>> {
    let fail = |step, batch, error| Box::new(Divergence { step, batch, error });
    cfg.validate().map_err(|e| fail(0, Vec::new(), e))?;
    let (mut data_rng, mut noise_rng) = streams(cfg.seed);
    let mut state = AdamState::new(model.params().tensors(), cfg.base_lr);
    let mut logs = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = (0..cfg.batch_size)
            .map(|_| dataset.sample_episode(Split::Train, cfg.n_shot, &mut data_rng))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| fail(step, Vec::new(), e))?;
        let (loss, grads) = match batch_gradient(model, &batch, &mut noise_rng) {
            Ok(v) => v,
            Err(e) => return Err(fail(step, batch, e)),
        };
        state.lr = cfg.lr_at(step);
        Adam::step_store(model.params_mut(), &grads, &mut state).map_err(|e| fail(step, Vec::new(), e))?;
        let log = StepLog {
            step,
            lr: state.lr,
            loss,
        };
        observer.on_step(&log).map_err(|e| fail(step, Vec::new(), e))?;
        logs.push(log);
        if cfg.epoch_of(step + 1) != cfg.epoch_of(step) || step + 1 == cfg.steps {
            observer
                .on_epoch(cfg.epoch_of(step), model)
                .map_err(|e| fail(step, Vec::new(), e))?;
        }
    }
    Ok(logs)
}

/// Mean loss and mean gradient over a batch, reduced in batch order.
pub fn batch_gradient<S: Scalar>(
    model: &ScapeModel<S>,
    batch: &[Episode],
    rng: &mut dyn RngCore,
) -> Result<(f64, Vec<Tensor<S>>)> {
    let mut total: Option<Vec<Tensor<S>>> = None;
    let mut loss = 0.0;
    for ep in batch {
        let (l, g) = model.loss_and_grads(ep, Some(&mut *rng))?;
        loss += l.as_f64();
        match &mut total {
            None => total = Some(g),
            Some(t) => {
                for (a, b) in t.iter_mut().zip(&g) {
                    for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                        *x += y;
                    }
                }
            }
        }
    }
    let n = S::lit(batch.len() as f64);
    let mut grads = total.ok_or_else(|| Error::Input("empty batch".into()))?;
    for g in &mut grads {
        for x in g.data_mut() {
            *x /= n;
        }
        if !g.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
    }
    Ok((loss / batch.len() as f64, grads))
}
