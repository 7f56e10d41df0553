//! Swarm navigation for magnetically driven micro-swimmers.
//!
//! A single global orientation command steers every swimmer at once while
//! hydrodynamic coupling deflects individual headings. The crate bundles the
//! 2D physics, the observation encodings, a small dense network with exact
//! reverse-mode gradients, PPO/RPO training, a curriculum target schedule,
//! and the experiment harness (configs, CSV logs, checkpoints, replay).

pub mod curriculum;
pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod obs;
pub mod physics;
pub mod ppo;

pub use error::CoreError;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, CoreError>;
