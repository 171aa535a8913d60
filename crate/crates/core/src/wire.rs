//! Operator console wire protocol.
//!
//! Server to console: one JSON object per message,
//! `{"type": "state" | "event" | "ack", "payload": ...}`.
//! Console to server: [`WorkerCommand`] objects, e.g.
//! `{"v": 1, "seq": 4, "kind": "PlaceObject", "label": "drill", "bbox": [20, 390, 90, 50]}`.

use serde::{Deserialize, Serialize};

use crate::detection::{ObjectDetection, Workspace};
use crate::geometry::BBox;
use crate::overlay::OverlayInstance;
use crate::runtime::JoinedResult;
use crate::scenario::{ErrorCategory, GuidanceEvent, Scenario};
use crate::vocab::{ActionLabel, Vocabulary};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum CommandKind {
    PlaceObject { label: String, bbox: BBox },
    RemoveObject { label: String },
    MoveObject { label: String, bbox: BBox },
    SetAction { action: String },
    Start,
    Reset,
    ForceAdvance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerCommand {
    pub v: u32,
    pub seq: u64,
    #[serde(flatten)]
    pub kind: CommandKind,
}

impl WorkerCommand {
    pub fn new(seq: u64, kind: CommandKind) -> Self {
        Self { v: PROTOCOL_VERSION, seq, kind }
    }
}

/// Scenario summary sent with the acknowledgement of `Start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub scenario_id: String,
    pub title: String,
    pub instructions: Vec<String>,
    pub vocabulary: Vocabulary,
}

impl SessionInfo {
    pub fn new(scenario: &Scenario) -> Self {
        Self {
            scenario_id: scenario.id.clone(),
            title: scenario.title.clone(),
            instructions: scenario.steps.iter().map(|s| s.instruction.clone()).collect(),
            vocabulary: scenario.vocabulary.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub seq: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<SessionInfo>,
}

impl Ack {
    pub fn ok(seq: u64) -> Self {
        Self { seq, ok: true, reason: None, session: None }
    }

    pub fn rejected(seq: u64, reason: impl Into<String>) -> Self {
        Self { seq, ok: false, reason: Some(reason.into()), session: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBanner {
    pub category: ErrorCategory,
    pub step: u32,
    pub text: String,
}

/// Everything the console draws for one frame; derived from a [`JoinedResult`] only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UiStateMessage {
    pub frame_id: u64,
    pub frame_size: (u32, u32),
    pub step_index: usize,
    pub step_count: usize,
    pub instruction: String,
    pub elapsed_ms: u64,
    pub progress: f64,
    pub finished: bool,
    pub objects: Vec<ObjectDetection>,
    pub skeleton: Option<Vec<Option<[f64; 2]>>>,
    pub action: Option<ActionLabel>,
    pub overlays: Vec<OverlayInstance>,
    pub error_banner: Option<ErrorBanner>,
    pub hint: Option<String>,
}

impl UiStateMessage {
    pub fn from_result(scenario: &Scenario, r: &JoinedResult) -> Self {
        let step = &scenario.steps[r.step_index.min(scenario.steps.len() - 1)];
        Self {
            frame_id: r.frame_id,
            frame_size: r.frame_size,
            step_index: r.step_index,
            step_count: scenario.steps.len(),
            instruction: step.instruction.clone(),
            elapsed_ms: r.elapsed_ms,
            progress: r.progress,
            finished: r.finished,
            objects: r.objects.clone(),
            skeleton: r.skeleton_px.clone(),
            action: r.action.clone(),
            overlays: r.overlays.clone(),
            error_banner: r.active_error.as_ref().and_then(|e| {
                Some(ErrorBanner { category: e.error_category()?, step: e.step_id(), text: e.detail().to_owned() })
            }),
            hint: step.hint_video.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "lowercase")]
pub enum ServerMessage {
    State(Box<UiStateMessage>),
    Event(GuidanceEvent),
    Ack(Ack),
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

/// Parses a console command, rejecting other protocol versions.
pub fn parse_command(text: &str) -> Result<WorkerCommand, String> {
    let cmd: WorkerCommand = serde_json::from_str(text).map_err(|e| format!("malformed command: {e}"))?;
    if cmd.v != PROTOCOL_VERSION {
        return Err(format!("unsupported command version {}", cmd.v));
    }
    Ok(cmd)
}

/// Applies a workspace command. `Start` and `Reset` concern the session and
/// are handled by the server; here they are acknowledged without effect.
pub fn apply_command(ws: &mut Workspace, vocabulary: &Vocabulary, cmd: &WorkerCommand) -> Ack {
    let seq = cmd.seq;
    let known_object = |label: &str| vocabulary.has_object(label);
    let check_box = |b: &BBox| b.is_valid() && b.x.is_finite() && b.y.is_finite();
    match &cmd.kind {
        CommandKind::PlaceObject { label, bbox } | CommandKind::MoveObject { label, bbox } => {
            if !known_object(label) {
                Ack::rejected(seq, format!("unknown object label {label:?}"))
            } else if !check_box(bbox) {
                Ack::rejected(seq, "bounding box must have positive size")
            } else if matches!(cmd.kind, CommandKind::PlaceObject { .. }) {
                ws.place_object(label, *bbox);
                Ack::ok(seq)
            } else if ws.move_object(label, *bbox) {
                Ack::ok(seq)
            } else {
                Ack::rejected(seq, format!("{label} is not on the table"))
            }
        }
        CommandKind::RemoveObject { label } => {
            if !known_object(label) {
                Ack::rejected(seq, format!("unknown object label {label:?}"))
            } else if ws.remove_object(label) {
                Ack::ok(seq)
            } else {
                Ack::rejected(seq, format!("{label} is not on the table"))
            }
        }
        CommandKind::SetAction { action } => {
            if !vocabulary.has_action(action) {
                return Ack::rejected(seq, format!("unknown action {action:?}"));
            }
            match ws.set_action(action) {
                Ok(()) => Ack::ok(seq),
                Err(e) => Ack::rejected(seq, e.to_string()),
            }
        }
        CommandKind::ForceAdvance => {
            ws.force_advance();
            Ack::ok(seq)
        }
        CommandKind::Start | CommandKind::Reset => Ack::ok(seq),
    }
}
