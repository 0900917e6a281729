//! First-order optimizers, learning-rate schedules and minibatch plans.
//!
//! All optimizers act on a slice of weight matrices and skip layers whose
//! frozen flag is set.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{LinalgError, Matrix};
use crate::rng::{self, tags};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Gd,
    /// Heavy ball: `v ← ρv + G`, `W ← W − ηv`.
    Momentum {
        rho: f64,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl OptimizerKind {
    pub const MOMENTUM: OptimizerKind = OptimizerKind::Momentum { rho: 0.9 };
    pub const ADAM: OptimizerKind = OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 };

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Gd => "gd",
            OptimizerKind::Momentum { .. } => "sgd",
            OptimizerKind::Adam { .. } => "adam",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gd" => Ok(OptimizerKind::Gd),
            "sgd" | "momentum" | "sgd_momentum" => Ok(OptimizerKind::MOMENTUM),
            "adam" => Ok(OptimizerKind::ADAM),
            other => Err(Error::Input(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    Constant,
    /// Cosine annealing to zero over `total` epochs.
    Cosine {
        total: usize,
    },
}

/// `η0·(1 + cos(πt/T))/2`.
pub fn cosine_lr(eta0: f64, t: usize, total: usize) -> f64 {
    if total == 0 {
        return eta0;
    }
    eta0 * 0.5 * (1.0 + (PI * t as f64 / total as f64).cos())
}

fn check_grads(layers: &[Matrix], grads: &[Matrix], frozen: &[bool]) -> Result<()> {
    if layers.len() != grads.len() || layers.len() != frozen.len() {
        return Err(Error::Input(format!(
            "{} layers, {} gradients, {} frozen flags",
            layers.len(),
            grads.len(),
            frozen.len()
        )));
    }
    for (w, g) in layers.iter().zip(grads) {
        if w.shape() != g.shape() {
            return Err(LinalgError::shape_mismatch("optimizer step", w.shape(), g.shape()).into());
        }
    }
    Ok(())
}

/// `W ← W − ηG` on unfrozen layers.
pub fn gd_step(layers: &mut [Matrix], frozen: &[bool], grads: &[Matrix], lr: f64) -> Result<()> {
    check_grads(layers, grads, frozen)?;
    for ((w, g), &f) in layers.iter_mut().zip(grads).zip(frozen) {
        if !f {
            w.axpy(-lr, g)?;
        }
    }
    Ok(())
}

/// Optimizer with its moment buffers and step counter.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    schedule: Schedule,
    weight_decay: f64,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, schedule: Schedule) -> Self {
        Self { kind, lr, schedule, weight_decay: 0.0, step: 0, first: Vec::new(), second: Vec::new() }
    }

    /// Adds `λW` to every gradient before the update.
    pub fn with_weight_decay(mut self, lambda: f64) -> Self {
        self.weight_decay = lambda;
        self
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.lr,
            Schedule::Cosine { total } => cosine_lr(self.lr, epoch, total),
        }
    }

    pub fn first_moments(&self) -> &[Matrix] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Matrix] {
        &self.second
    }

    /// One update using the learning rate of `epoch`.
    pub fn step(&mut self, layers: &mut [Matrix], frozen: &[bool], grads: &[Matrix], epoch: usize) -> Result<()> {
        check_grads(layers, grads, frozen)?;
        if self.first.is_empty() {
            self.first = layers.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect();
            if matches!(self.kind, OptimizerKind::Adam { .. }) {
                self.second = self.first.clone();
            }
        } else if self.first.len() != layers.len() {
            return Err(Error::Input("optimizer state built for a different network".into()));
        }
        self.step += 1;
        let lr = self.lr_at(epoch);
        for l in 0..layers.len() {
            if frozen[l] {
                continue;
            }
            let g = if self.weight_decay != 0.0 {
                let mut g = grads[l].clone();
                g.axpy(self.weight_decay, &layers[l])?;
                g
            } else {
                grads[l].clone()
            };
            match self.kind {
                OptimizerKind::Gd => layers[l].axpy(-lr, &g)?,
                OptimizerKind::Momentum { rho } => {
                    let v = &mut self.first[l];
                    *v = v.scale(rho);
                    v.axpy(1.0, &g)?;
                    layers[l].axpy(-lr, v)?;
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let t = self.step as i32;
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    let m = self.first[l].as_mut_slice();
                    let v = self.second[l].as_mut_slice();
                    let w = layers[l].as_mut_slice();
                    for (((wi, mi), vi), &gi) in w.iter_mut().zip(m).zip(v).zip(g.as_slice()) {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        let mhat = *mi / c1;
                        let vhat = *vi / c2;
                        *wi -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Shuffled partition of `0..n` into slices of `batch` (last may be short).
/// The permutation depends only on `(seed, epoch)`.
pub fn make_batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch == 0 {
        return Err(Error::Input("batch size must be positive".into()));
    }
    let perm = rng::stream(rng::derive(seed, epoch as u64), tags::BATCHES).permutation(n);
    Ok(perm.chunks(batch).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Vec<Matrix> {
        vec![Matrix::from_vec(1, 1, vec![v]).unwrap()]
    }

    #[test]
    fn gd_noop_cases() {
        let mut w = scalar(2.0);
        gd_step(&mut w, &[false], &scalar(0.0), 0.1).unwrap();
        gd_step(&mut w, &[false], &scalar(5.0), 0.0).unwrap();
        assert_eq!(w, scalar(2.0));
        gd_step(&mut w, &[true], &scalar(5.0), 1.0).unwrap();
        assert_eq!(w, scalar(2.0));
    }

    #[test]
    fn gd_quadratic_decay() {
        let mut w = scalar(1.0);
        for _ in 0..100 {
            let g = w.clone();
            gd_step(&mut w, &[false], &g, 0.1).unwrap();
        }
        assert!((w[0][(0, 0)] - 0.9f64.powi(100)).abs() < 1e-12);
    }

    #[test]
    fn momentum_unrolled() {
        let mut opt = Optimizer::new(OptimizerKind::MOMENTUM, 0.5, Schedule::Constant);
        let mut w = scalar(0.0);
        for _ in 0..2 {
            opt.step(&mut w, &[false], &scalar(1.0), 0).unwrap();
        }
        assert!((w[0][(0, 0)] + 0.5 * 2.9).abs() < 1e-15);

        let mut opt = Optimizer::new(OptimizerKind::Momentum { rho: 0.0 }, 0.1, Schedule::Constant);
        let mut a = scalar(1.0);
        let mut b = scalar(1.0);
        for _ in 0..5 {
            let g = a.clone();
            opt.step(&mut a, &[false], &g, 0).unwrap();
            let g = b.clone();
            gd_step(&mut b, &[false], &g, 0.1).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn adam_first_step_and_zero_gradient() {
        let mut opt = Optimizer::new(OptimizerKind::ADAM, 0.01, Schedule::Constant);
        let mut w = vec![Matrix::from_vec(1, 3, vec![0.0, 0.0, 0.0]).unwrap()];
        let g = vec![Matrix::from_vec(1, 3, vec![3.0, -0.2, 0.0]).unwrap()];
        opt.step(&mut w, &[false], &g, 0).unwrap();
        assert!((w[0][(0, 0)] + 0.01).abs() < 1e-9);
        assert!((w[0][(0, 1)] - 0.01).abs() < 1e-9);
        assert_eq!(w[0][(0, 2)], 0.0);

        let mut opt = Optimizer::new(OptimizerKind::ADAM, 0.01, Schedule::Constant);
        let mut w = scalar(1.5);
        for _ in 0..10 {
            opt.step(&mut w, &[false], &scalar(0.0), 0).unwrap();
        }
        assert_eq!(w, scalar(1.5));
        assert_eq!(opt.first_moments()[0].max_abs(), 0.0);
        assert_eq!(opt.second_moments()[0].max_abs(), 0.0);
    }

    #[test]
    fn weight_decay_adds_l2_term() {
        let mut opt = Optimizer::new(OptimizerKind::Gd, 0.1, Schedule::Constant).with_weight_decay(0.5);
        let mut w = scalar(2.0);
        opt.step(&mut w, &[false], &scalar(0.0), 0).unwrap();
        assert!((w[0][(0, 0)] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn cosine_schedule() {
        assert_eq!(cosine_lr(0.4, 0, 10), 0.4);
        assert!(cosine_lr(0.4, 10, 10).abs() < 1e-16);
        assert!((cosine_lr(0.4, 5, 10) - 0.2).abs() < 1e-15);
        let opt = Optimizer::new(OptimizerKind::Gd, 0.4, Schedule::Cosine { total: 10 });
        assert!((opt.lr_at(5) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn batches() {
        let b = make_batches(5, 2, 1, 0).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 2, 1]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
        assert_eq!(make_batches(5, 2, 1, 0).unwrap(), b);
        assert_eq!(make_batches(7, 7, 1, 3).unwrap().len(), 1);
        assert!(make_batches(3, 0, 1, 0).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut w = scalar(1.0);
        assert!(gd_step(&mut w, &[false], &[Matrix::zeros(2, 1)], 0.1).is_err());
    }
}
