//! Curiosity-driven reinforcement learning on procedural grid mazes.
//!
//! The crate is organised bottom-up:
//!
//! * [`autodiff`]: a reverse-mode automatic differentiation engine over dense
//!   tensors, plus parameter storage, Adam and checkpointing.
//! * [`env`]: deterministic grid-maze environments with egocentric
//!   observations.
//! * [`models`]: the agent network family (plain actor-critic, curiosity
//!   variants with shared or separate feature extractors, and a value
//!   prediction consistency head).
//! * [`losses`]: scalar loss and reward formulas together with the graph
//!   assembly that turns a rollout into a single differentiable loss.
//! * [`trainer`]: asynchronous multi-worker training against a shared
//!   parameter store, metrics recording and checkpoint scheduling.

pub mod autodiff;
pub mod env;
pub mod error;
pub mod losses;
pub mod models;
pub mod trainer;

pub use error::{Error, Result};
