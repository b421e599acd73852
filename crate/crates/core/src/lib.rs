//! Driver-maneuver prediction from fused in-cabin and exterior camera features.

pub mod dataset;
pub mod features;
pub mod geometry;
pub mod models;
pub mod numeric;
pub mod train_eval;
