//! Scalar-reverse-mode autodiff: the [`Tape`] arena, its operator set, and a
//! finite-difference checker used to validate analytic gradients.

mod gradcheck;
mod tape;

pub use gradcheck::{finite_diff_check, FdReport, GradCheckError};
pub use tape::{AdError, Tape, Tensor, UnaryKind, LOG_FLOOR};
