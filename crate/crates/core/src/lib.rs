//! Switched output-feedback stabilization for state-affine SISO systems that
//! are not uniformly observable.
//!
//! The closed loop alternates between an observation mode (zero input, the
//! observer gain is refreshed) and a stabilization mode (state feedback
//! evaluated at the estimate). Leaving stabilization is triggered by the
//! smallest eigenvalue of a sliding-window observability Gramian.

#![no_std]
// `!(x > 0.0)` is how NaN is rejected throughout
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod gramian;
pub mod integrator;
pub mod linalg;
pub mod model;
pub mod observer;
pub mod supervisor;
pub mod tuning;
