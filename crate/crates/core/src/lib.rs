//! Low-rank training dynamics of smooth MLPs.
//!
//! Dense linear algebra, synthetic data, an MLP with analytic
//! backpropagation, optimizers, invariant-subspace tracking, the low-rank
//! reparameterization, numerical checks of the theory, and an experiment
//! runner that writes CSV traces.

pub mod data;
pub mod error;
pub mod exp;
pub mod linalg;
pub mod lowrank;
pub mod mlp;
pub mod optim;
pub mod par;
pub mod rng;
pub mod theory;
pub mod track;
pub mod train;

pub use error::{Error, Result};
pub use linalg::{Basis, Matrix, SvdTriplet};
