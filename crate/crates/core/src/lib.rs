//! Simulation and control of a 10-DOF wheel-legged biped reduced to a planar wheeled
//! inverted pendulum.

// `!(x > 0.0)` is used throughout to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod leg;
pub mod linalg;
pub mod lqr;
pub mod ppo;

pub use error::{Error, Result};
