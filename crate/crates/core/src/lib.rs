#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

//! Spectral-Galerkin solvers for minimal norm and minimal time controls of the
//! one-dimensional internally controlled heat equation with convex targets.

pub mod classify;
pub mod cli;
pub mod error;
pub mod minnorm;
pub mod mintime;
pub mod scenario;
pub mod spectral;
pub mod targets;

pub use error::{Error, Result};
