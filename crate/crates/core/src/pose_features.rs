//! Skeleton preprocessing and joint-velocity features.
//!
//! Raw skeletons arrive in the 18-keypoint layout of the upstream pose
//! estimator with `x` expressed as a fraction of the frame width and `y` as a
//! fraction of the frame height. Preprocessing rescales `x` into image-height
//! units, drops the five head keypoints and pads missing joints from earlier
//! frames. A window of five consecutive skeletons is then normalized by the
//! neck-to-hip-midpoint body height and turned into a 234-value feature vector:
//!
//! ```text
//! [ frame 0: joint 0 (x, y), joint 1 (x, y), ... joint 12 (x, y) ]   130 positions
//! [ frame 1 ... frame 4 ]
//! [ step 1: joint 0 (vx, vy) ... joint 12 (vx, vy) ]                  104 velocities
//! [ step 2 ... step 4 ]
//! ```
//!
//! Joints that were never observed for a person contribute zeros.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Joints kept after head removal.
pub const JOINT_COUNT: usize = 13;
/// Keypoints produced by the pose estimator.
pub const RAW_JOINT_COUNT: usize = 18;
/// Frames per feature window.
pub const WINDOW_LEN: usize = 5;
/// Velocity steps per window.
pub const VELOCITY_STEPS: usize = WINDOW_LEN - 1;
/// Length of a [`FeatureVector`].
pub const FEATURE_DIM: usize = JOINT_COUNT * 2 * WINDOW_LEN + JOINT_COUNT * 2 * VELOCITY_STEPS;
/// Smallest body height accepted for normalization.
pub const HEIGHT_EPSILON: f64 = 1e-6;

/// Indices of the 18-keypoint raw layout.
pub mod raw {
    pub const NOSE: usize = 0;
    pub const NECK: usize = 1;
    pub const RIGHT_SHOULDER: usize = 2;
    pub const RIGHT_ELBOW: usize = 3;
    pub const RIGHT_WRIST: usize = 4;
    pub const LEFT_SHOULDER: usize = 5;
    pub const LEFT_ELBOW: usize = 6;
    pub const LEFT_WRIST: usize = 7;
    pub const RIGHT_HIP: usize = 8;
    pub const RIGHT_KNEE: usize = 9;
    pub const RIGHT_ANKLE: usize = 10;
    pub const LEFT_HIP: usize = 11;
    pub const LEFT_KNEE: usize = 12;
    pub const LEFT_ANKLE: usize = 13;
    pub const RIGHT_EYE: usize = 14;
    pub const LEFT_EYE: usize = 15;
    pub const RIGHT_EAR: usize = 16;
    pub const LEFT_EAR: usize = 17;

    /// Head keypoints dropped during preprocessing.
    pub const HEAD: [usize; 5] = [NOSE, RIGHT_EYE, LEFT_EYE, RIGHT_EAR, LEFT_EAR];
}

/// Index into a preprocessed 13-joint [`Skeleton`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum JointId {
    Neck,
    RightShoulder,
    RightElbow,
    RightWrist,
    LeftShoulder,
    LeftElbow,
    LeftWrist,
    RightHip,
    RightKnee,
    RightAnkle,
    LeftHip,
    LeftKnee,
    LeftAnkle,
}

impl JointId {
    pub const ALL: [JointId; JOINT_COUNT] = [
        JointId::Neck,
        JointId::RightShoulder,
        JointId::RightElbow,
        JointId::RightWrist,
        JointId::LeftShoulder,
        JointId::LeftElbow,
        JointId::LeftWrist,
        JointId::RightHip,
        JointId::RightKnee,
        JointId::RightAnkle,
        JointId::LeftHip,
        JointId::LeftKnee,
        JointId::LeftAnkle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Position of this joint in the raw 18-keypoint layout.
    pub fn raw_index(self) -> usize {
        // The kept joints are the contiguous raw range NECK..=LEFT_ANKLE.
        self as usize + raw::NECK
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("required joint {0:?} is missing")]
    MissingJoint(JointId),
    #[error("degenerate skeleton: body height {0:e} is below {HEIGHT_EPSILON:e}")]
    DegenerateSkeleton(f64),
    #[error("invalid feature window: {0}")]
    InvalidWindow(String),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
    /// Set when the value was carried forward from an earlier frame.
    #[serde(default)]
    pub padded: bool,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, confidence: f64) -> Self {
        Self { x, y, confidence, padded: false }
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && (0.0..=1.0).contains(&self.confidence)
    }
}

/// One person's keypoints as emitted by the pose estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSkeleton {
    pub joints: [Option<Keypoint>; RAW_JOINT_COUNT],
    pub frame_id: u64,
    pub person_id: u32,
}

impl RawSkeleton {
    pub fn empty(frame_id: u64, person_id: u32) -> Self {
        Self { joints: [None; RAW_JOINT_COUNT], frame_id, person_id }
    }

    /// Mean confidence over all 18 slots, missing keypoints counting as zero.
    pub fn mean_confidence(&self) -> f64 {
        self.joints.iter().flatten().map(|k| k.confidence).sum::<f64>() / RAW_JOINT_COUNT as f64
    }
}

/// Preprocessed 13-joint skeleton.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub joints: [Option<Keypoint>; JOINT_COUNT],
    pub frame_id: u64,
    pub person_id: u32,
}

impl Skeleton {
    pub fn empty(frame_id: u64, person_id: u32) -> Self {
        Self { joints: [None; JOINT_COUNT], frame_id, person_id }
    }

    pub fn joint(&self, id: JointId) -> Option<&Keypoint> {
        self.joints[id.index()].as_ref()
    }

    pub fn set(&mut self, id: JointId, kp: Keypoint) {
        self.joints[id.index()] = Some(kp);
    }

    /// Neck and both hips present.
    pub fn is_measurable(&self) -> bool {
        [JointId::Neck, JointId::LeftHip, JointId::RightHip]
            .iter()
            .all(|&j| self.joint(j).is_some())
    }

    pub fn present_count(&self) -> usize {
        self.joints.iter().flatten().count()
    }
}

/// Picks the skeleton with the highest mean keypoint confidence; the first wins ties.
pub fn select_worker(candidates: &[RawSkeleton]) -> Option<&RawSkeleton> {
    let mut best: Option<&RawSkeleton> = None;
    for c in candidates {
        match best {
            Some(b) if c.mean_confidence() <= b.mean_confidence() => {}
            _ => best = Some(c),
        }
    }
    best
}

/// Rescales width-fraction `x` into image-height units (`x * w / h`).
pub fn scale_coordinates(raw: &RawSkeleton, frame_aspect: f64) -> Result<RawSkeleton> {
    if !(frame_aspect.is_finite() && frame_aspect > 0.0) {
        return Err(FeatureError::InvalidInput(format!(
            "frame aspect ratio must be positive, got {frame_aspect}"
        )));
    }
    let mut out = raw.clone();
    for kp in out.joints.iter_mut().flatten() {
        kp.x *= frame_aspect;
    }
    Ok(out)
}

/// Drops nose, eyes and ears; the remaining 13 joints keep their relative order.
pub fn remove_head_joints(full: &RawSkeleton) -> Skeleton {
    let mut out = Skeleton::empty(full.frame_id, full.person_id);
    for id in JointId::ALL {
        out.joints[id.index()] = full.joints[id.raw_index()];
    }
    out
}

/// Result of [`pad_missing_joints`].
#[derive(Debug, Clone, PartialEq)]
pub enum Padded {
    Measurable(Skeleton),
    /// Neck or a hip could not be recovered; the frame is skipped.
    FrameInvalid,
}

/// Fills each missing joint from the most recent history frame that has it.
///
/// `history` is ordered most-recent-first.
pub fn pad_missing_joints(current: &Skeleton, history: &[Skeleton]) -> Padded {
    let mut out = current.clone();
    for id in JointId::ALL {
        if out.joint(id).is_some() {
            continue;
        }
        if let Some(kp) = history.iter().find_map(|h| h.joint(id)) {
            out.set(id, Keypoint { padded: true, ..*kp });
        }
    }
    if out.is_measurable() {
        Padded::Measurable(out)
    } else {
        Padded::FrameInvalid
    }
}

/// Neck to hip-midpoint distance.
pub fn body_height(skeleton: &Skeleton) -> Result<f64> {
    let get = |id| skeleton.joint(id).ok_or(FeatureError::MissingJoint(id));
    let neck = get(JointId::Neck)?;
    let left = get(JointId::LeftHip)?;
    let right = get(JointId::RightHip)?;
    let mid_x = (left.x + right.x) / 2.0;
    let mid_y = (left.y + right.y) / 2.0;
    let h = ((neck.x - mid_x).powi(2) + (neck.y - mid_y).powi(2)).sqrt();
    if !(h > HEIGHT_EPSILON) {
        return Err(FeatureError::DegenerateSkeleton(h));
    }
    Ok(h)
}

/// Divides every present coordinate by `height`.
pub fn normalize(skeleton: &Skeleton, height: f64) -> Result<Skeleton> {
    if !(height > HEIGHT_EPSILON) {
        return Err(FeatureError::DegenerateSkeleton(height));
    }
    let mut out = skeleton.clone();
    for kp in out.joints.iter_mut().flatten() {
        kp.x /= height;
        kp.y /= height;
    }
    Ok(out)
}

/// Five consecutive preprocessed skeletons of one person.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWindow {
    frames: Vec<Skeleton>,
}

impl FeatureWindow {
    pub fn new(frames: Vec<Skeleton>) -> Result<Self> {
        if frames.len() != WINDOW_LEN {
            return Err(FeatureError::InvalidWindow(format!(
                "expected {WINDOW_LEN} frames, got {}",
                frames.len()
            )));
        }
        for pair in frames.windows(2) {
            if pair[1].person_id != pair[0].person_id {
                return Err(FeatureError::InvalidWindow("frames belong to different people".into()));
            }
            if pair[1].frame_id != pair[0].frame_id + 1 {
                return Err(FeatureError::InvalidWindow(format!(
                    "frame ids {} and {} are not consecutive",
                    pair[0].frame_id, pair[1].frame_id
                )));
            }
        }
        if let Some(bad) = frames.iter().find(|f| !f.is_measurable()) {
            return Err(FeatureError::InvalidWindow(format!(
                "frame {} lacks neck or hips",
                bad.frame_id
            )));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Skeleton] {
        &self.frames
    }

    /// Each frame divided by its own body height.
    pub fn normalized(&self) -> Result<Vec<Skeleton>> {
        self.frames.iter().map(|f| normalize(f, body_height(f)?)).collect()
    }
}

/// `[step][joint][axis]` frame-to-frame differences of normalized positions.
pub type Velocities = [[[f64; 2]; JOINT_COUNT]; VELOCITY_STEPS];

fn velocities_of(normalized: &[Skeleton]) -> Velocities {
    let mut v = [[[0.0; 2]; JOINT_COUNT]; VELOCITY_STEPS];
    for (k, pair) in normalized.windows(2).enumerate() {
        for j in 0..JOINT_COUNT {
            if let (Some(prev), Some(cur)) = (pair[0].joints[j], pair[1].joints[j]) {
                v[k][j] = [cur.x - prev.x, cur.y - prev.y];
            }
        }
    }
    v
}

pub fn joint_velocities(window: &FeatureWindow) -> Result<Velocities> {
    Ok(velocities_of(&window.normalized()?))
}

/// Fixed-length classifier input.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != FEATURE_DIM {
            return Err(FeatureError::InvalidInput(format!(
                "feature vector must have {FEATURE_DIM} entries, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::InvalidInput("feature vector has non-finite entries".into()));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn positions(&self) -> &[f64] {
        &self.0[..JOINT_COUNT * 2 * WINDOW_LEN]
    }

    pub fn velocities(&self) -> &[f64] {
        &self.0[JOINT_COUNT * 2 * WINDOW_LEN..]
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

pub fn build_feature_vector(window: &FeatureWindow) -> Result<FeatureVector> {
    let normalized = window.normalized()?;
    let mut values = Vec::with_capacity(FEATURE_DIM);
    for frame in &normalized {
        for kp in &frame.joints {
            match kp {
                Some(kp) => values.extend([kp.x, kp.y]),
                None => values.extend([0.0, 0.0]),
            }
        }
    }
    for step in velocities_of(&normalized) {
        for joint in step {
            values.extend(joint);
        }
    }
    FeatureVector::new(values)
}

/// Per-person preprocessing state: padding memory plus the sliding window.
///
/// Frames that cannot be measured, gaps in `frame_id`, and a change of
/// person all restart the window.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    frame_aspect: f64,
    last_seen: Option<Skeleton>,
    window: VecDeque<Skeleton>,
}

impl FeatureExtractor {
    pub fn new(frame_aspect: f64) -> Result<Self> {
        if !(frame_aspect.is_finite() && frame_aspect > 0.0) {
            return Err(FeatureError::InvalidInput(format!(
                "frame aspect ratio must be positive, got {frame_aspect}"
            )));
        }
        Ok(Self { frame_aspect, last_seen: None, window: VecDeque::with_capacity(WINDOW_LEN) })
    }

    pub fn reset(&mut self) {
        self.last_seen = None;
        self.window.clear();
    }

    /// Records a frame without a usable skeleton.
    pub fn skip(&mut self) {
        self.window.clear();
    }

    /// Preprocesses one raw skeleton and returns features once five
    /// consecutive measurable frames are buffered.
    pub fn push(&mut self, raw: &RawSkeleton) -> Result<Option<FeatureVector>> {
        let scaled = scale_coordinates(raw, self.frame_aspect)?;
        let current = remove_head_joints(&scaled);

        if self.last_seen.as_ref().is_some_and(|s| s.person_id != current.person_id) {
            self.reset();
        }
        let history: &[Skeleton] = self.last_seen.as_slice();
        let padded = match pad_missing_joints(&current, history) {
            Padded::Measurable(s) => s,
            Padded::FrameInvalid => {
                self.window.clear();
                return Ok(None);
            }
        };
        // Padded output carries the latest value of every joint seen so far.
        self.last_seen = Some(padded.clone());

        if body_height(&padded).is_err() {
            self.window.clear();
            return Ok(None);
        }
        if self.window.back().is_some_and(|b| b.frame_id + 1 != padded.frame_id) {
            self.window.clear();
        }
        if self.window.len() == WINDOW_LEN {
            self.window.pop_front();
        }
        self.window.push_back(padded);
        if self.window.len() < WINDOW_LEN {
            return Ok(None);
        }
        let window = FeatureWindow::new(self.window.iter().cloned().collect())?;
        build_feature_vector(&window).map(Some)
    }
}
