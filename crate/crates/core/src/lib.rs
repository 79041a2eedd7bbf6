//! Latent variational dynamics model with Riemannian pullback metrics and
//! geodesic-penalized offline reinforcement learning, exercised end to end on
//! a four-rooms grid world.
//!
//! The crate is organized bottom-up:
//!
//! * [`autodiff`] - dense networks and affine coupling bijections with exact
//!   reverse-mode gradients and input Jacobians.
//! * [`latent`] - the encoder / embedding / forward / decoder / reward bundle,
//!   its evidence-lower-bound training loop, and the calibrated or RBF
//!   decoder variance.
//! * [`geometry`] - pullback metric tensors, expected and composite metrics
//!   for stochastic maps, cubic-spline curves, and geodesic estimation by
//!   curve-energy descent.
//! * [`neighbors`] - an exact embedding index with Euclidean shortlisting and
//!   geodesic re-ranking.
//! * [`gridworld`] - the four-rooms environment, dataset generation, and a
//!   BFS land-distance oracle.
//! * [`rl`] - geodesic reward penalties, mixed replay buffers, discrete soft
//!   Q-learning, and the full penalized model-based training loop.

pub mod autodiff;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod gridworld;
pub mod latent;
pub mod linalg;
pub mod neighbors;
pub mod rl;
pub mod rng;

pub use error::{Error, Result};
