//! Real-time workflow guidance: validates assembly steps from per-frame
//! object detections and operator skeletons, raises error events and places
//! anchored overlays.

pub mod action_classifier;
pub mod analysis;
pub mod detection;
pub mod geometry;
pub mod live;
pub mod overlay;
pub mod pose_features;
pub mod runtime;
pub mod scenario;
pub mod smoothing;
pub mod vocab;
pub mod wire;

pub use runtime::{Engine, JoinedResult, Pipeline, PipelineConfig, Session};
