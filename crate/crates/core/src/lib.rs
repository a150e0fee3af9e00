//! Disturbance-observer-parameterized control barrier functions.
//!
//! The crate provides a control-affine plant abstraction, a nonlinear
//! disturbance observer, CLF-CBF safety-filter rows, a small dense QP solver
//! and a fixed-step closed-loop simulator, together with an adaptive cruise
//! control model driven by road-grade disturbances.

pub mod acc;
pub mod error;
pub mod experiment;
pub mod filter;
pub mod integrate;
pub mod metrics;
pub mod observer;
pub mod plant;
pub mod qp;
pub mod road;
pub mod svg;

pub use error::{Error, Result};
