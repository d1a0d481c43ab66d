//! Gaussian-process Bayesian optimization with hybrid repeat/multi-point
//! sampling (HRMS).
//!
//! Each optimizer iteration proposes `ms` distinct locations with a batch
//! acquisition and evaluates every one of them `rs` times. `rs = ms = 1` is
//! standard sequential GP optimization. The crate contains the GP machinery,
//! the acquisition functions and their inner optimizer, the optimization loop,
//! synthetic noisy benchmarks with ground-truth surrogates, and an experiment
//! harness that runs and summarizes configuration grids.
//!
//! All objectives are minimized.

pub mod acquisition;
pub mod benchmarks;
pub mod error;
pub mod gp;
pub mod harness;
pub mod linalg;
pub mod lowdisc;
pub mod optimizer;
pub mod rng;
pub mod space;

pub use error::{Error, Result};
pub use gp::{Dataset, GpModel, Hyperparameters, JitterPolicy};
pub use rng::SeedStream;
pub use space::{Bounds, InputPoint};
