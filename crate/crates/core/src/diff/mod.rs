//! Differentiable computation substrate.
//!
//! Values are dense row-major matrices. A [`Tape`] records every primitive
//! applied during the forward pass; [`Tape::backward`] replays it in reverse
//! to accumulate gradients. Parameters live in a named [`ParamStore`] and are
//! updated with [`adam_step`].

mod adam;
mod array;
mod gradcheck;
mod params;
mod real;
mod tape;

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use array::Array;
pub use gradcheck::{
    grad_check, grad_check_with, max_relative_error, numeric_gradient, numeric_gradient_with, relative_error,
    CoordSelection, Stencil,
    GradCheckReport, NumericEntry,
};
pub use params::{backward_gradients, Binding, ParamGrads, ParamStore};
pub use real::Real;
pub use tape::{log_softmax, Gradients, Tape, Var};
