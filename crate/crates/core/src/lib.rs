//! Multi-person tracking and left/right hand localization on dynamic
//! occupancy volumes built from fused point-cloud frames.
//!
//! The pipeline per frame: [`volume::voxelize`] the points, derive the
//! ground-plane [`projection::FeatureMaps`], propose people with the cascade in
//! [`detection`], link proposals to trajectories with the coverage-rewarding
//! assignment in [`matching`] driven by [`tracking::Tracker`], then localize
//! hands per tracked person with the top-down/side-view decomposition in
//! [`hands`]. [`synth`] generates scenes with exact ground truth, [`eval`]
//! scores the outputs and [`triangulation`] provides the multi-view baseline.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detection;
pub mod error;
pub mod eval;
pub mod hands;
pub mod image;
pub mod matching;
pub mod pipeline;
pub mod projection;
pub mod synth;
pub mod tracking;
pub mod triangulation;
pub mod volume;

pub use error::{Error, Result};
