//! Perception boundary: per-frame detection bundles and the providers that
//! produce them (replay files, synthetic motion, the simulated workspace).

mod stream;
mod synthetic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;
use crate::pose_features::RawSkeleton;
use crate::vocab::ObjectLabel;

pub use stream::{frame_to_line, parse_stream, read_stream_file, record_stream, write_stream_file, ReplayProvider, STREAM_VERSION};
pub use synthetic::{generate_synthetic, template_skeleton, Hand, MotionPreset, SyntheticMotionSpec, Workspace, KNOWN_ACTIONS};

pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: frame {got} does not follow frame {last}")]
    Ordering { line: usize, last: u64, got: u64 },
    #[error("unknown action {0:?}")]
    Vocabulary(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, DetectionError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectDetection {
    pub label: ObjectLabel,
    pub score: f64,
    pub bbox: BBox,
}

impl ObjectDetection {
    pub fn new(label: impl Into<String>, score: f64, bbox: BBox) -> Self {
        Self { label: ObjectLabel(label.into()), score, bbox }
    }
}

/// Operator input recorded alongside a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorAction {
    ForceAdvance,
}

/// Everything the detectors report for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetections {
    pub frame_id: u64,
    pub timestamp_ms: u64,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<ObjectDetection>,
    pub skeleton: Option<RawSkeleton>,
    pub operator: Option<OperatorAction>,
}

impl FrameDetections {
    pub fn new(frame_id: u64, timestamp_ms: u64, width: u32, height: u32) -> Self {
        Self { frame_id, timestamp_ms, width, height, objects: Vec::new(), skeleton: None, operator: None }
    }

    pub fn aspect(&self) -> f64 {
        self.width as f64 / self.height as f64
    }

    /// Detections at or above `threshold`, keeping the best-scoring box per label.
    pub fn filtered_objects(&self, threshold: f64) -> Vec<ObjectDetection> {
        let mut out: Vec<ObjectDetection> = Vec::new();
        for d in self.objects.iter().filter(|d| d.score >= threshold) {
            match out.iter_mut().find(|o| o.label == d.label) {
                Some(o) if o.score >= d.score => {}
                Some(o) => *o = d.clone(),
                None => out.push(d.clone()),
            }
        }
        out
    }

    /// Wrist positions of the skeleton in pixels.
    pub fn hands_px(&self) -> Vec<(f64, f64)> {
        use crate::pose_features::raw;
        let Some(s) = &self.skeleton else { return Vec::new() };
        [raw::RIGHT_WRIST, raw::LEFT_WRIST]
            .iter()
            .filter_map(|&i| s.joints[i])
            .map(|k| (k.x * self.width as f64, k.y * self.height as f64))
            .collect()
    }
}

/// Source of frames; `Ok(None)` marks end of stream.
pub trait DetectionProvider: Send {
    fn next_frame(&mut self) -> Result<Option<FrameDetections>>;
}

/// Provider over frames already in memory.
#[derive(Debug, Clone, Default)]
pub struct VecProvider {
    frames: std::collections::VecDeque<FrameDetections>,
}

impl VecProvider {
    pub fn new(frames: Vec<FrameDetections>) -> Self {
        Self { frames: frames.into() }
    }
}

impl DetectionProvider for VecProvider {
    fn next_frame(&mut self) -> Result<Option<FrameDetections>> {
        Ok(self.frames.pop_front())
    }
}

impl<P: DetectionProvider + ?Sized> DetectionProvider for Box<P> {
    fn next_frame(&mut self) -> Result<Option<FrameDetections>> {
        (**self).next_frame()
    }
}
