//! Riemannian optimization on the Poincaré ball.
//!
//! Hyperbolic SGD and hyperbolic AdamW, a unit-hyperbola timestep sampler,
//! the Poincaré-ball training loss, and the harnesses used to compare them
//! with their Euclidean counterparts: a toy 2-D diffusion model, analytic
//! test functions and a tree-embedding task.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cli;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod records;
pub mod schedule;

pub use error::{Error, Result};
pub use geometry::{BallPoint, ParamTensor};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind, OptimizerState};
pub use schedule::{DiffusionSchedule, SamplerKind};
pub use records::{RunRecord, write_records};
