//! Speaking-status detection in crowded scenes without audio.
//!
//! The video route tracks skeletons, selects the dense trajectories that start
//! near a target's upper-body keypoints and encodes them as Fisher vectors for
//! a linear SVM. The wearable route classifies chest-accelerometer windows
//! with a small 1-D CNN. Scores from both are combined by logistic late fusion
//! and evaluated with person-camera grouped cross-validation.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assignment;
pub mod dataset;
pub mod encoding;
pub mod error;
pub mod evaluation;
pub mod filtering;
pub mod geometry;
pub mod ingest;
pub mod learning;
pub mod synth;
pub mod tracking;
pub mod trajectories;

pub use error::{Error, Result};
