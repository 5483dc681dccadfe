//! Detection-fairness auditing toolkit.
//!
//! The crate evaluates object-detection predictions sliced by demographic
//! group (greedy IoU matching, COCO-style average precision, and a
//! predictive-inequity metric), aggregates multi-annotator group labels into
//! consensus labels, quantifies the statistical certainty of observed
//! performance gaps, and demonstrates on a synthetic detection-head training
//! problem how per-group loss reweighting shifts per-group performance.

pub mod consensus;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod loss;
pub mod reference;
pub mod stats;

pub use error::{Error, Result};
