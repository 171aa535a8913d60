//! Synthetic skeleton motion and a scriptable workspace that stand in for the
//! camera, object detector and pose estimator.
//!
//! Every action animates a canonical standing skeleton. Displacements follow
//! `amplitude * sin(2*pi*f*t + pi/2)`, so the first frame sits at a peak.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DetectionError, FrameDetections, ObjectDetection, OperatorAction, Result};
use crate::geometry::BBox;
use crate::pose_features::{raw, Keypoint, RawSkeleton, RAW_JOINT_COUNT};
use crate::vocab::{ActionLabel, ObjectLabel};

/// Actions the motion generator can animate.
pub const KNOWN_ACTIONS: [&str; 7] = ["idle", "drilling", "sawing", "picking", "placing", "marking", "measuring"];

const TEMPLATE: [(f64, f64); RAW_JOINT_COUNT] = [
    (0.50, 0.15), // nose
    (0.50, 0.25), // neck
    (0.45, 0.26), // right shoulder
    (0.43, 0.38), // right elbow
    (0.45, 0.50), // right wrist
    (0.55, 0.26), // left shoulder
    (0.57, 0.38), // left elbow
    (0.55, 0.50), // left wrist
    (0.47, 0.56), // right hip
    (0.47, 0.74), // right knee
    (0.47, 0.92), // right ankle
    (0.53, 0.56), // left hip
    (0.53, 0.74), // left knee
    (0.53, 0.92), // left ankle
    (0.49, 0.13), // right eye
    (0.51, 0.13), // left eye
    (0.48, 0.14), // right ear
    (0.52, 0.14), // left ear
];

const TEMPLATE_CONFIDENCE: f64 = 0.9;
const OBJECT_SCORE: f64 = 0.9;

/// The canonical standing skeleton, all 18 keypoints present.
pub fn template_skeleton(frame_id: u64, person_id: u32) -> RawSkeleton {
    let mut s = RawSkeleton::empty(frame_id, person_id);
    for (slot, (x, y)) in s.joints.iter_mut().zip(TEMPLATE) {
        *slot = Some(Keypoint::new(x, y, TEMPLATE_CONFIDENCE));
    }
    s
}

/// Default amplitude and frequency of an action's motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionPreset {
    pub amplitude: f64,
    pub frequency_hz: f64,
}

impl MotionPreset {
    pub fn for_action(action: &str) -> Result<Self> {
        let (amplitude, frequency_hz) = match action {
            "idle" => (0.0, 0.0),
            "sawing" => (0.10, 1.0),
            "drilling" => (0.02, 6.0),
            "picking" => (0.08, 1.5),
            "placing" => (0.06, 1.0),
            "marking" => (0.03, 2.0),
            "measuring" => (0.08, 1.0),
            other => return Err(DetectionError::Vocabulary(other.to_owned())),
        };
        Ok(Self { amplitude, frequency_hz })
    }
}

/// Per-joint `(raw index, dx, dy)` displacement at time `t` seconds.
fn displacement(action: &str, amplitude: f64, frequency_hz: f64, t: f64) -> Result<Vec<(usize, f64, f64)>> {
    let theta = 2.0 * PI * frequency_hz * t;
    let s = amplitude * (theta + FRAC_PI_2).sin();
    let c = amplitude * theta.sin();
    use raw::*;
    Ok(match action {
        "idle" => vec![],
        "sawing" => vec![(RIGHT_WRIST, s, 0.0), (RIGHT_ELBOW, 0.5 * s, 0.0)],
        "drilling" => vec![(RIGHT_WRIST, 0.0, s), (RIGHT_ELBOW, 0.0, 0.5 * s)],
        "picking" => vec![(LEFT_WRIST, 0.0, s), (LEFT_ELBOW, 0.0, 0.5 * s)],
        "placing" => vec![
            (RIGHT_WRIST, 0.0, s),
            (LEFT_WRIST, 0.0, s),
            (RIGHT_ELBOW, 0.0, 0.5 * s),
            (LEFT_ELBOW, 0.0, 0.5 * s),
        ],
        "marking" => vec![(RIGHT_WRIST, s, c)],
        "measuring" => vec![(RIGHT_WRIST, s, 0.0), (LEFT_WRIST, -s, 0.0)],
        other => return Err(DetectionError::Vocabulary(other.to_owned())),
    })
}

fn posed_skeleton(
    action: &str,
    amplitude: f64,
    frequency_hz: f64,
    t: f64,
    frame_id: u64,
    noise: Option<(&Normal<f64>, &mut ChaCha8Rng)>,
) -> Result<RawSkeleton> {
    let mut s = template_skeleton(frame_id, 0);
    for (j, dx, dy) in displacement(action, amplitude, frequency_hz, t)? {
        let kp = s.joints[j].as_mut().expect("template is complete");
        kp.x += dx;
        kp.y += dy;
    }
    if let Some((dist, rng)) = noise {
        for kp in s.joints.iter_mut().flatten() {
            kp.x += dist.sample(rng);
            kp.y += dist.sample(rng);
        }
    }
    Ok(s)
}

fn default_fps() -> f64 {
    30.0
}

fn default_size() -> [u32; 2] {
    [640, 480]
}

/// Parameters of a generated single-action detection stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticMotionSpec {
    pub action: ActionLabel,
    pub amplitude: f64,
    pub frequency_hz: f64,
    pub noise_sigma: f64,
    pub duration_frames: u32,
    pub seed: u64,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default = "default_size")]
    pub frame_size: [u32; 2],
    #[serde(default)]
    pub start_frame: u64,
    /// Static detections repeated on every frame.
    #[serde(default)]
    pub objects: Vec<ObjectDetection>,
}

impl SyntheticMotionSpec {
    /// Spec using the action's preset motion.
    pub fn preset(action: &str, duration_frames: u32, noise_sigma: f64, seed: u64) -> Result<Self> {
        let p = MotionPreset::for_action(action)?;
        Ok(Self {
            action: ActionLabel::new(action),
            amplitude: p.amplitude,
            frequency_hz: p.frequency_hz,
            noise_sigma,
            duration_frames,
            seed,
            fps: default_fps(),
            frame_size: default_size(),
            start_frame: 0,
            objects: Vec::new(),
        })
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DetectionError::InvalidSpec(m.to_owned()));
        if self.duration_frames < 5 {
            return bad("duration must be at least 5 frames");
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return bad("amplitude must be finite and non-negative");
        }
        if !(self.frequency_hz >= 0.0 && self.frequency_hz.is_finite()) {
            return bad("frequency must be finite and non-negative");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise sigma must be finite and non-negative");
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad("fps must be positive");
        }
        if self.frame_size.contains(&0) {
            return bad("frame size must be positive");
        }
        Ok(())
    }
}

fn timestamp_ms(frame_id: u64, fps: f64) -> u64 {
    (frame_id as f64 * 1000.0 / fps).round() as u64
}

/// Deterministic stream for `spec`; the same seed yields identical frames.
pub fn generate_synthetic(spec: &SyntheticMotionSpec) -> Result<Vec<FrameDetections>> {
    spec.validate()?;
    if !KNOWN_ACTIONS.contains(&spec.action.as_str()) {
        return Err(DetectionError::Vocabulary(spec.action.0.clone()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dist = Normal::new(0.0, spec.noise_sigma).map_err(|e| DetectionError::InvalidSpec(e.to_string()))?;
    let [width, height] = spec.frame_size;
    (0..spec.duration_frames as u64)
        .map(|i| {
            let frame_id = spec.start_frame + i;
            let t = i as f64 / spec.fps;
            let noise = (spec.noise_sigma > 0.0).then_some((&dist, &mut rng));
            let skeleton =
                posed_skeleton(spec.action.as_str(), spec.amplitude, spec.frequency_hz, t, frame_id, noise)?;
            let mut f = FrameDetections::new(frame_id, timestamp_ms(frame_id, spec.fps), width, height);
            f.objects = spec.objects.clone();
            f.skeleton = Some(skeleton);
            Ok(f)
        })
        .collect()
}

/// Which wrist an object is held in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hand {
    Right,
    Left,
}

/// A simulated work table: objects placed at fixed boxes and one worker
/// performing the current action. Each [`Workspace::tick`] yields the next frame.
#[derive(Debug, Clone)]
pub struct Workspace {
    width: u32,
    height: u32,
    fps: f64,
    noise: Normal<f64>,
    noise_sigma: f64,
    rng: ChaCha8Rng,
    objects: Vec<(ObjectLabel, BBox)>,
    action: ActionLabel,
    action_start: u64,
    worker_visible: bool,
    next_frame: u64,
    pending: Option<OperatorAction>,
}

impl Workspace {
    pub fn new(width: u32, height: u32, fps: f64, noise_sigma: f64, seed: u64) -> Result<Self> {
        let noise = Normal::new(0.0, noise_sigma).map_err(|e| DetectionError::InvalidSpec(e.to_string()))?;
        if width == 0 || height == 0 || !(fps > 0.0) {
            return Err(DetectionError::InvalidSpec("workspace needs a positive frame size and rate".into()));
        }
        Ok(Self {
            width,
            height,
            fps,
            noise,
            noise_sigma,
            rng: ChaCha8Rng::seed_from_u64(seed),
            objects: Vec::new(),
            action: ActionLabel::new("idle"),
            action_start: 0,
            worker_visible: true,
            next_frame: 0,
            pending: None,
        })
    }

    pub fn frame_size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn next_frame_id(&self) -> u64 {
        self.next_frame
    }

    pub fn action(&self) -> &ActionLabel {
        &self.action
    }

    pub fn objects(&self) -> &[(ObjectLabel, BBox)] {
        &self.objects
    }

    pub fn object(&self, label: &str) -> Option<BBox> {
        self.objects.iter().find(|(l, _)| l.as_str() == label).map(|(_, b)| *b)
    }

    /// Adds the object or moves it if already present.
    pub fn place_object(&mut self, label: &str, bbox: BBox) {
        match self.objects.iter_mut().find(|(l, _)| l.as_str() == label) {
            Some(slot) => slot.1 = bbox,
            None => self.objects.push((ObjectLabel::new(label), bbox)),
        }
    }

    /// Returns false when the object was not on the table.
    pub fn move_object(&mut self, label: &str, bbox: BBox) -> bool {
        match self.objects.iter_mut().find(|(l, _)| l.as_str() == label) {
            Some(slot) => {
                slot.1 = bbox;
                true
            }
            None => false,
        }
    }

    pub fn remove_object(&mut self, label: &str) -> bool {
        let before = self.objects.len();
        self.objects.retain(|(l, _)| l.as_str() != label);
        before != self.objects.len()
    }

    /// Moves `label` so it is centered on the resting position of a wrist.
    pub fn hold_object(&mut self, label: &str, hand: Hand, size: (f64, f64)) {
        let (cx, cy) = self.wrist_px(hand);
        self.place_object(label, BBox::centered(cx, cy, size.0, size.1));
    }

    pub fn set_action(&mut self, action: &str) -> Result<()> {
        MotionPreset::for_action(action)?;
        if self.action.as_str() != action {
            self.action = ActionLabel::new(action);
            self.action_start = self.next_frame;
        }
        Ok(())
    }

    pub fn set_worker_visible(&mut self, visible: bool) {
        self.worker_visible = visible;
    }

    /// The next frame carries an operator force-advance.
    pub fn force_advance(&mut self) {
        self.pending = Some(OperatorAction::ForceAdvance);
    }

    /// Resting wrist position in pixels.
    pub fn wrist_px(&self, hand: Hand) -> (f64, f64) {
        let (x, y) = match hand {
            Hand::Right => TEMPLATE[raw::RIGHT_WRIST],
            Hand::Left => TEMPLATE[raw::LEFT_WRIST],
        };
        (x * self.width as f64, y * self.height as f64)
    }

    pub fn tick(&mut self) -> FrameDetections {
        let frame_id = self.next_frame;
        self.next_frame += 1;
        let mut f = FrameDetections::new(frame_id, timestamp_ms(frame_id, self.fps), self.width, self.height);
        f.objects = self
            .objects
            .iter()
            .map(|(l, b)| ObjectDetection { label: l.clone(), score: OBJECT_SCORE, bbox: *b })
            .collect();
        if self.worker_visible {
            let preset = MotionPreset::for_action(self.action.as_str()).expect("action validated on set");
            let t = (frame_id - self.action_start) as f64 / self.fps;
            let noise = (self.noise_sigma > 0.0).then_some((&self.noise, &mut self.rng));
            f.skeleton = Some(
                posed_skeleton(self.action.as_str(), preset.amplitude, preset.frequency_hz, t, frame_id, noise)
                    .expect("action validated on set"),
            );
        }
        f.operator = self.pending.take();
        f
    }
}
