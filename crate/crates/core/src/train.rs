//! Training loops with optional per-epoch tracking.

use crate::data::Dataset;
use crate::error::Result;
use crate::linalg::Matrix;
use crate::mlp::{Activation, LossKind, MlpParams, Mode};
use crate::optim::{make_batches, Optimizer, OptimizerKind, Schedule};
use crate::rng;
use crate::track::Tracker;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub schedule: Schedule,
    pub epochs: usize,
    /// `None` for full batch.
    pub batch: Option<usize>,
    pub loss: LossKind,
    pub weight_decay: f64,
    /// Record every this many epochs (the final epoch is always recorded).
    pub track_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Gd,
            lr: 1e-2,
            schedule: Schedule::Constant,
            epochs: 100,
            batch: None,
            loss: LossKind::Squared,
            weight_decay: 0.0,
            track_every: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Full-batch loss at the start of every epoch, plus the final loss.
    pub losses: Vec<f64>,
    /// `max_t ‖f(X) − Y‖_max` over the recorded full-batch passes.
    pub max_residual: f64,
}

/// Anything trained by a list of weight matrices with a shared backward.
pub trait Trainable {
    fn weights(&self) -> &[Matrix];
    fn weights_mut(&mut self) -> &mut [Matrix];
    fn frozen(&self) -> Vec<bool>;
    fn activation(&self) -> Activation;
    /// Output and per-weight gradients on `(x, y)`.
    fn loss_and_grads(&self, x: &Matrix, y: &Matrix, loss: LossKind, mode: Mode) -> Result<(Matrix, Vec<Matrix>)>;
}

impl Trainable for MlpParams {
    fn weights(&self) -> &[Matrix] {
        &self.layers
    }

    fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.layers
    }

    fn frozen(&self) -> Vec<bool> {
        self.frozen.clone()
    }

    fn activation(&self) -> Activation {
        self.activation
    }

    fn loss_and_grads(&self, x: &Matrix, y: &Matrix, loss: LossKind, mode: Mode) -> Result<(Matrix, Vec<Matrix>)> {
        let cache = self.forward(x, mode)?;
        let grads = self.backward(&cache, y, loss)?;
        Ok((cache.output().clone(), grads))
    }
}

/// Trains `model` on `data`, recording into `tracker` at the start of each
/// tracked epoch with full-batch gradients.
pub fn train<T: Trainable>(
    model: &mut T,
    data: &Dataset,
    cfg: &TrainConfig,
    mut tracker: Option<&mut Tracker>,
) -> Result<TrainLog> {
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, cfg.schedule).with_weight_decay(cfg.weight_decay);
    let frozen = model.frozen();
    let mut log = TrainLog::default();
    let every = cfg.track_every.max(1);
    let mut step: u64 = 0;
    for epoch in 0..=cfg.epochs {
        let (out, grads) = model.loss_and_grads(&data.x, &data.y, cfg.loss, Mode::Eval)?;
        let loss = cfg.loss.value(&out, &data.y)?;
        log.losses.push(loss);
        log.max_residual = log.max_residual.max(out.sub(&data.y)?.max_abs());
        if let Some(t) = tracker.as_deref_mut() {
            if epoch % every == 0 || epoch == cfg.epochs {
                t.record(epoch, loss, model.weights(), &grads)?;
            }
        }
        if epoch == cfg.epochs {
            break;
        }
        match cfg.batch {
            None => {
                let grads = if needs_train_mode(model) {
                    model.loss_and_grads(&data.x, &data.y, cfg.loss, Mode::Train(rng::derive(cfg.seed, step)))?.1
                } else {
                    grads
                };
                opt.step(model.weights_mut(), &frozen, &grads, epoch)?;
                step += 1;
            }
            Some(b) => {
                for idx in make_batches(data.len(), b, cfg.seed, epoch)? {
                    let (xb, yb) = data.batch(&idx);
                    let mode = Mode::Train(rng::derive(cfg.seed, step));
                    let (_, g) = model.loss_and_grads(&xb, &yb, cfg.loss, mode)?;
                    opt.step(model.weights_mut(), &frozen, &g, epoch)?;
                    step += 1;
                }
            }
        }
    }
    Ok(log)
}

/// Training-mode forward passes only differ from evaluation for RReLU.
fn needs_train_mode<T: Trainable>(model: &T) -> bool {
    matches!(model.activation(), Activation::Rrelu { .. })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gaussian_mixture;
    use crate::mlp::Activation;

    #[test]
    fn gd_reduces_loss_and_respects_frozen() {
        let data = gaussian_mixture(8, 2, 10, 1.0, 1).unwrap().whitened().unwrap();
        let mut p = MlpParams::init_semi_orthogonal(8, 10, 2, 2, 0.1, Activation::Gelu, 2).unwrap();
        p.frozen[1] = true;
        let head = p.layers[1].clone();
        let cfg = TrainConfig { lr: 0.1, epochs: 20, ..TrainConfig::default() };
        let log = train(&mut p, &data, &cfg, None).unwrap();
        assert_eq!(log.losses.len(), 21);
        assert!(log.losses[20] < log.losses[0]);
        assert_eq!(p.layers[1], head);
    }

    #[test]
    fn minibatch_training_is_deterministic() {
        let data = gaussian_mixture(6, 3, 8, 1.0, 4).unwrap();
        let cfg = TrainConfig {
            optimizer: OptimizerKind::ADAM,
            lr: 1e-3,
            epochs: 3,
            batch: Some(5),
            loss: LossKind::CrossEntropy,
            seed: 9,
            ..TrainConfig::default()
        };
        let run = || {
            let mut p = MlpParams::init_semi_orthogonal(6, 8, 3, 3, 0.5, Activation::RRELU, 1).unwrap();
            train(&mut p, &data, &cfg, None).unwrap();
            p
        };
        assert_eq!(run(), run());
    }
}
