//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is an append-only tape: every builder method runs the forward
//! computation eagerly and records the operation. [`Graph::backward`] then
//! sweeps the tape once in reverse, accumulating vector-Jacobian products.
//! The element type is generic so the same engine runs in `f32` for training
//! and `f64` for finite-difference verification.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod graph;
mod params;

pub use adam::{AdamHyper, AdamState};
pub(crate) use adam::adam_tensor_step;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use graph::{Graph, TensorId};
pub use params::{cast_params, clip_global_norm, global_norm, Gradients, ParamSet, Tensor};

use std::fmt;

/// Floating point element type usable by the engine.
pub trait Real:
    num_traits::Float + num_traits::NumAssignOps + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    /// Shorthand conversion from an `f64` constant.
    fn c(v: f64) -> Self {
        Self::from(v).expect("constant representable")
    }

    fn to_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("finite or nan float")
    }
}

impl Real for f32 {}
impl Real for f64 {}
