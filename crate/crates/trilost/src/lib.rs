//! Line-of-sight triangulation: linear, optimal and dynamic solvers with
//! analytic covariances, scenario reproduction and Monte Carlo validation.

// `!(x > 0.0)` is deliberate throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod dynamic;
pub mod error;
pub mod geometry;
pub mod io;
pub mod linear;
pub mod montecarlo;
pub mod optimal;
pub mod scenarios;
pub mod selftest;

pub use error::{Error, Result};
