//! Conditional discrete graph diffusion for sensing-link selection.
//!
//! A denoising network turns a uniformly random link-activation graph into a
//! link plan for a given target location, step by step. Training is purely
//! reward driven: whole denoising trajectories are scored against a
//! Fresnel-zone coverage reward and the network is updated with a
//! trajectory-level policy gradient.
//!
//! Modules, bottom up:
//! - [`graph`]: scenario, edge indexing, categorical edge graphs.
//! - [`fresnel`]: Fresnel-zone geometry, reward, greedy/random baselines.
//! - [`nn`]: dense network, exact gradients, Adam, checkpoints.
//! - [`diffusion`]: noise schedule, forward kernel, reverse sampler.
//! - [`trainer`]: scoring, advantages, policy gradient, epochs.
//! - [`config`]: run configuration file.

pub mod config;
pub mod diffusion;
mod error;
pub mod fresnel;
pub mod graph;
pub mod nn;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
