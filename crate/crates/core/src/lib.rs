//! Subspaces of policies for reinforcement learning.
//!
//! Instead of one policy, train the convex hull (or Bezier curve) of N
//! anchor parameter vectors so that every point of the hull solves the train
//! environment while a squared-cosine penalty keeps the anchors from
//! collapsing onto each other. At test time, K-shot adaptation evaluates K
//! policies spread over the hull on the unseen environment variant and keeps
//! the best one.
//!
//! The crate is self-contained: a small `f64` MLP engine with exact manual
//! gradients ([`nn`]), the subspace machinery ([`subspace`]), desk-scale
//! environment families ([`envs`]), PPO/A2C trainers for the subspace and
//! the diversity baselines ([`algos`]), and the K-shot adaptation and
//! analysis tools ([`adapt`]).

pub mod adapt;
pub mod algos;
pub mod checkpoint;
pub mod envs;
pub mod error;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod rollout;
pub mod subspace;

pub use error::{Error, Result};
