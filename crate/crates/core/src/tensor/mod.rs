//! Minimal differentiable numeric kernels.
//!
//! Dense `f64` arrays, hand-written forward/backward pairs for the handful
//! of ops the encoder and CRF need, weight normalization, Adam, and a
//! finite-difference gradient checker. All kernels are pure functions of
//! their inputs (plus an explicit RNG for dropout), so evaluation is
//! deterministic and freely parallel across sentences.

mod adam;
mod array;
mod check;
mod ops;
mod param;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use array::Array;
pub use check::{finite_diff_check, rel_err, GradCheckReport};
pub use ops::{
    conv1d_same, conv1d_same_backward, dropout, dropout_backward, glu, glu_backward, linear,
    linear_backward, relu, relu_backward, sigmoid, DropoutMask,
};
pub use param::{weight_norm_backward, weight_norm_effective, Param};
