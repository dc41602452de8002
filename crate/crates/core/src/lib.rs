//! SE(2)-equivariant joint prediction and planning for automated driving.
//!
//! A scene holds the past positions of `M` vehicles (the ego vehicle is
//! index 0) and a high-level route for the ego. The model keeps an
//! equivariant feature `G_i ∈ R^{C×2}` and an invariant feature
//! `h_i ∈ R^D` per vehicle, updates them in `N` blocks (route attraction,
//! inner and neighbor aggregation, a mirror nonlinearity, invariant
//! message passing), decodes `K` joint futures and picks the ego plan from
//! the highest-scoring mode. Rotating and translating the input scene
//! rotates and translates every decoded mode by exactly the same amount.
//!
//! Modules, bottom-up:
//!
//! - [`tensor`]: 2-D tensors and a reverse-mode tape
//! - [`geometry`]: SE(2) group elements
//! - [`scene`]: scenes, route resampling, synthetic generator, scene files
//! - [`model`]: parameters and the feature pipeline
//! - [`decode`]: mode decoding, scoring and plan selection
//! - [`train`]: losses, Adam, schedule, training loop, checkpoints
//! - [`eval`]: open-loop metrics, equivariance sweep, baselines
//! - [`config`] and [`cli`]: run configuration and the `pep` binary

pub mod cli;
pub mod config;
pub mod decode;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod scene;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
