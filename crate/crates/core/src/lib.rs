//! Convex envelopes of sampled functions through controlled optimal stopping.
//!
//! A function sampled on a truncated lattice `[-Mδ, Mδ]^d` is the terminal cost of
//! a controlled random walk that moves one step along a chosen axis or stops. The
//! maximal fixed point of the stopping problem approximates the convex envelope of
//! the function. This crate solves it three ways:
//!
//! * deterministic value / Q-value iteration ([`dp`]),
//! * synchronous and single-trajectory Q-learning ([`qlearn`]),
//!
//! and checks the results against an exact lower-convex-hull oracle ([`hull`]) with
//! the metrics in [`validation`].

// Validity checks are written so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dp;
pub mod error;
pub mod functions;
pub mod grid;
pub mod hull;
pub mod qlearn;
pub mod validation;

pub use error::{Error, Result};
pub use grid::{BoundaryRule, Direction, Grid, GridSpec, ScalarField, StateClass, StateId};
