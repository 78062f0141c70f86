//! Tracking-by-detection with a reciprocal-collision-avoidance motion prior,
//! interaction-aware trajectory forecasting for heterogeneous road agents,
//! and displacement-error benchmarking.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod agent;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod orca;
pub mod pipeline;
pub mod predictor;
pub mod state;
pub mod synth;
pub mod tracker;
pub mod vec2;

pub use error::{Error, Result};
pub use vec2::{Vec2, WorldPoint};
