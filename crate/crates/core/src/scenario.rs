//! Scenario definitions, per-frame step validation and guidance events.
//!
//! A step validates when every mandatory object is visible (inside its region
//! when one is set) and the required action has been the smoothed action for
//! `min_action_frames` consecutive evaluations. Error conditions are
//! edge-triggered: each raises one event at onset and re-arms once it clears.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;
use crate::vocab::{ActionLabel, ObjectLabel, Vocabulary};

pub const SCENARIO_VERSION: u32 = 1;
pub const DEFAULT_MIN_ACTION_FRAMES: u32 = 3;
pub const DEFAULT_MISSING_GRACE_FRAMES: u32 = 15;
pub const DEFAULT_ERROR_SUSTAIN_FRAMES: u32 = 5;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported scenario version {0}")]
    Version(u32),
    #[error("scenario has no steps")]
    NoSteps,
    #[error("duplicate step id {0}")]
    DuplicateStepId(u32),
    #[error("step {step}: unknown object label {label:?}")]
    UnknownObject { step: u32, label: String },
    #[error("step {step}: unknown action label {label:?}")]
    UnknownAction { step: u32, label: String },
    #[error("step {step}: {msg}")]
    InvalidStep { step: u32, msg: String },
    #[error("step {step}: unknown overlay rule {rule:?}")]
    UnknownRule { step: u32, rule: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectRequirement {
    pub label: ObjectLabel,
    /// When false the object is tracked for position and overlays but does not gate validation.
    #[serde(default = "yes")]
    pub must_be_present: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<BBox>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub id: u32,
    pub instruction: String,
    pub required_objects: Vec<ObjectRequirement>,
    pub required_action: Option<ActionLabel>,
    pub forbidden_objects: Vec<ObjectLabel>,
    /// Actions that count as a wrong action when sustained during this step.
    pub confusable_actions: Vec<ActionLabel>,
    pub min_action_frames: u32,
    pub missing_grace_frames: u32,
    pub ar_components: Vec<String>,
    pub hint_video: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub title: String,
    pub vocabulary: Vocabulary,
    /// Actions during which touching a forbidden object counts as grasping it.
    pub grasp_actions: Vec<ActionLabel>,
    pub error_sustain_frames: u32,
    pub steps: Vec<Step>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    version: u32,
    id: String,
    title: String,
    vocabulary: Vocabulary,
    #[serde(default)]
    grasp_actions: Vec<ActionLabel>,
    #[serde(default)]
    defaults: Defaults,
    steps: Vec<StepFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct Defaults {
    min_action_frames: u32,
    missing_grace_frames: u32,
    error_sustain_frames: u32,
}

impl Default for Defaults {
    fn default() -> Self {
        Self {
            min_action_frames: DEFAULT_MIN_ACTION_FRAMES,
            missing_grace_frames: DEFAULT_MISSING_GRACE_FRAMES,
            error_sustain_frames: DEFAULT_ERROR_SUSTAIN_FRAMES,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StepFile {
    id: u32,
    instruction: String,
    #[serde(default)]
    required_objects: Vec<ObjectRequirement>,
    #[serde(default)]
    required_action: Option<ActionLabel>,
    #[serde(default)]
    forbidden_objects: Vec<ObjectLabel>,
    #[serde(default)]
    confusable_actions: Vec<ActionLabel>,
    min_action_frames: Option<u32>,
    missing_grace_frames: Option<u32>,
    #[serde(default)]
    ar_components: Vec<String>,
    #[serde(default)]
    hint_video: Option<String>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        if file.version != SCENARIO_VERSION {
            return Err(ScenarioError::Version(file.version));
        }
        let d = file.defaults;
        let steps = file
            .steps
            .into_iter()
            .map(|s| Step {
                id: s.id,
                instruction: s.instruction,
                required_objects: s.required_objects,
                required_action: s.required_action,
                forbidden_objects: s.forbidden_objects,
                confusable_actions: s.confusable_actions,
                min_action_frames: s.min_action_frames.unwrap_or(d.min_action_frames),
                missing_grace_frames: s.missing_grace_frames.unwrap_or(d.missing_grace_frames),
                ar_components: s.ar_components,
                hint_video: s.hint_video,
            })
            .collect();
        let scenario = Scenario {
            id: file.id,
            title: file.title,
            vocabulary: file.vocabulary,
            grasp_actions: file.grasp_actions,
            error_sustain_frames: d.error_sustain_frames,
            steps,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.steps.is_empty() {
            return Err(ScenarioError::NoSteps);
        }
        if self.error_sustain_frames == 0 {
            return Err(ScenarioError::Invalid("error_sustain_frames must be >= 1".into()));
        }
        let vocab = &self.vocabulary;
        for a in &self.grasp_actions {
            if !vocab.has_action(a.as_str()) {
                return Err(ScenarioError::Invalid(format!("unknown grasp action {a:?}")));
            }
        }
        let mut seen = BTreeSet::new();
        for step in &self.steps {
            let id = step.id;
            if !seen.insert(id) {
                return Err(ScenarioError::DuplicateStepId(id));
            }
            if step.required_objects.iter().all(|r| !r.must_be_present) && step.required_action.is_none() {
                return Err(ScenarioError::InvalidStep { step: id, msg: "needs at least one requirement".into() });
            }
            if step.min_action_frames == 0 {
                return Err(ScenarioError::InvalidStep { step: id, msg: "min_action_frames must be >= 1".into() });
            }
            let objects = step
                .required_objects
                .iter()
                .map(|r| &r.label)
                .chain(&step.forbidden_objects);
            for label in objects {
                if !vocab.has_object(label.as_str()) {
                    return Err(ScenarioError::UnknownObject { step: id, label: label.0.clone() });
                }
            }
            for r in &step.required_objects {
                if r.region.is_some_and(|b| !b.is_valid()) {
                    return Err(ScenarioError::InvalidStep { step: id, msg: format!("region of {} is empty", r.label) });
                }
            }
            for label in step.required_action.iter().chain(&step.confusable_actions) {
                if !vocab.has_action(label.as_str()) {
                    return Err(ScenarioError::UnknownAction { step: id, label: label.0.clone() });
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Every `ar_components` entry must name a rule in `rule_ids`.
    pub fn check_rule_refs(&self, mut rule_ids: impl FnMut(&str) -> bool) -> Result<(), ScenarioError> {
        for step in &self.steps {
            if let Some(missing) = step.ar_components.iter().find(|r| !rule_ids(r)) {
                return Err(ScenarioError::UnknownRule { step: step.id, rule: missing.clone() });
            }
        }
        Ok(())
    }

    pub fn step_index(&self, id: u32) -> Option<usize> {
        self.steps.iter().position(|s| s.id == id)
    }
}

/// The five error categories a guidance session can raise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorCategory {
    WrongTool,
    MissingTool,
    WrongAction,
    PrematureAdvance,
    WrongPosition,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 5] = [
        ErrorCategory::WrongTool,
        ErrorCategory::MissingTool,
        ErrorCategory::WrongAction,
        ErrorCategory::PrematureAdvance,
        ErrorCategory::WrongPosition,
    ];
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    StepValidated,
    StepAdvanced,
    ErrorRaised,
    ScenarioCompleted,
}

/// Outcome published by the scenario controller.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidanceEvent {
    kind: EventKind,
    step: u32,
    frame: u64,
    t_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    category: Option<ErrorCategory>,
    detail: String,
}

impl GuidanceEvent {
    fn new(kind: EventKind, step: u32, frame: u64, t_ms: u64, detail: String) -> Self {
        debug_assert!(kind != EventKind::ErrorRaised);
        Self { kind, step, frame, t_ms, category: None, detail }
    }

    fn error(category: ErrorCategory, step: u32, frame: u64, t_ms: u64, detail: String) -> Self {
        Self { kind: EventKind::ErrorRaised, step, frame, t_ms, category: Some(category), detail }
    }

    pub fn kind(&self) -> EventKind {
        self.kind
    }
    pub fn step_id(&self) -> u32 {
        self.step
    }
    pub fn frame_id(&self) -> u64 {
        self.frame
    }
    pub fn timestamp_ms(&self) -> u64 {
        self.t_ms
    }
    /// Present exactly for `ErrorRaised`.
    pub fn error_category(&self) -> Option<ErrorCategory> {
        self.category
    }
    pub fn detail(&self) -> &str {
        &self.detail
    }
}

/// Smoothed detector output for one frame.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub frame_id: u64,
    pub timestamp_ms: u64,
    pub objects: &'a BTreeMap<ObjectLabel, BBox>,
    pub action: Option<&'a ActionLabel>,
    /// Wrist positions in pixels.
    pub hands: &'a [(f64, f64)],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepStatus {
    Awaiting,
    Satisfied,
    Errored,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Condition {
    WrongTool(ObjectLabel),
    Missing(ObjectLabel),
    WrongAction,
    WrongPosition(ObjectLabel),
}

/// Mutable progress of one session through a scenario.
#[derive(Debug, Clone)]
pub struct ScenarioState {
    scenario_id: String,
    current: usize,
    status: Vec<StepStatus>,
    validated: Vec<bool>,
    started_ms: Vec<Option<u64>>,
    ended_ms: Vec<Option<u64>>,
    action_streak: u32,
    wrong_action_streak: u32,
    missing_frames: BTreeMap<ObjectLabel, u32>,
    position_streaks: BTreeMap<ObjectLabel, u32>,
    active: BTreeSet<Condition>,
    finished: bool,
    completed: bool,
    last_ms: u64,
    log: Vec<GuidanceEvent>,
}

impl ScenarioState {
    pub fn new(scenario: &Scenario) -> Self {
        let n = scenario.steps.len();
        Self {
            scenario_id: scenario.id.clone(),
            current: 0,
            status: vec![StepStatus::Awaiting; n],
            validated: vec![false; n],
            started_ms: vec![None; n],
            ended_ms: vec![None; n],
            action_streak: 0,
            wrong_action_streak: 0,
            missing_frames: BTreeMap::new(),
            position_streaks: BTreeMap::new(),
            active: BTreeSet::new(),
            finished: false,
            completed: false,
            last_ms: 0,
            log: Vec::new(),
        }
    }

    pub fn scenario_id(&self) -> &str {
        &self.scenario_id
    }
    pub fn current_step_index(&self) -> usize {
        self.current
    }
    pub fn step_status(&self, index: usize) -> StepStatus {
        self.status[index]
    }
    pub fn action_streak(&self) -> u32 {
        self.action_streak
    }
    pub fn is_finished(&self) -> bool {
        self.finished
    }
    /// Every step validated and the scenario finished.
    pub fn is_completed(&self) -> bool {
        self.completed
    }
    pub fn validated_count(&self) -> usize {
        self.validated.iter().filter(|v| **v).count()
    }
    pub fn events(&self) -> &[GuidanceEvent] {
        &self.log
    }
    pub fn step_started_ms(&self, index: usize) -> Option<u64> {
        self.started_ms[index]
    }
    pub fn step_ended_ms(&self, index: usize) -> Option<u64> {
        self.ended_ms[index]
    }
    pub fn last_timestamp_ms(&self) -> u64 {
        self.last_ms
    }

    /// Fraction of steps passed, for progress display.
    pub fn progress(&self) -> f64 {
        let n = self.status.len();
        if self.finished {
            1.0
        } else {
            self.current as f64 / n as f64
        }
    }

    fn emit(&mut self, out: &mut Vec<GuidanceEvent>, ev: GuidanceEvent) {
        self.log.push(ev.clone());
        out.push(ev);
    }

    /// Raises `ev` if `cond` just became active; clears it when `active` is false.
    fn edge(&mut self, out: &mut Vec<GuidanceEvent>, cond: Condition, active: bool, ev: impl FnOnce() -> GuidanceEvent) {
        if active {
            if self.active.insert(cond) {
                self.status[self.current] = StepStatus::Errored;
                self.emit(out, ev());
            }
        } else {
            self.active.remove(&cond);
        }
    }

    fn enter_step(&mut self, index: usize, t_ms: u64) {
        self.current = index;
        self.started_ms[index] = Some(t_ms);
        self.action_streak = 0;
        self.wrong_action_streak = 0;
        self.missing_frames.clear();
        self.position_streaks.clear();
        self.active.clear();
    }

    fn transition(&mut self, scenario: &Scenario, frame: u64, t_ms: u64, out: &mut Vec<GuidanceEvent>) {
        let idx = self.current;
        self.ended_ms[idx] = Some(t_ms);
        if idx + 1 < scenario.steps.len() {
            self.enter_step(idx + 1, t_ms);
            let next = &scenario.steps[idx + 1];
            let detail = format!("step {}: {}", next.id, next.instruction);
            self.emit(out, GuidanceEvent::new(EventKind::StepAdvanced, next.id, frame, t_ms, detail));
        } else {
            self.finished = true;
            self.completed = self.validated.iter().all(|v| *v);
            if self.completed {
                let detail = format!("scenario {} completed", scenario.id);
                let ev = GuidanceEvent::new(EventKind::ScenarioCompleted, scenario.steps[idx].id, frame, t_ms, detail);
                self.emit(out, ev);
            }
        }
    }
}

/// Processes one frame of smoothed observations.
pub fn evaluate_frame(scenario: &Scenario, state: &mut ScenarioState, obs: &Observation<'_>) -> Vec<GuidanceEvent> {
    let mut out = Vec::new();
    if state.finished {
        return out;
    }
    let (frame, t) = (obs.frame_id, obs.timestamp_ms);
    state.last_ms = state.last_ms.max(t);
    if state.started_ms[state.current].is_none() {
        state.started_ms[state.current] = Some(t);
    }
    let step = &scenario.steps[state.current];
    let sid = step.id;

    // (b) required action persistence
    match &step.required_action {
        Some(req) if obs.action == Some(req) => state.action_streak += 1,
        _ => state.action_streak = 0,
    }

    // (c) wrong tool
    let grasping = obs.action.is_some_and(|a| scenario.grasp_actions.contains(a));
    for label in &step.forbidden_objects {
        let touched = obs
            .objects
            .get(label)
            .is_some_and(|b| obs.hands.iter().any(|&(x, y)| b.contains_point(x, y)));
        let action = obs.action.map(|a| a.0.clone()).unwrap_or_default();
        state.edge(&mut out, Condition::WrongTool(label.clone()), grasping && touched, || {
            GuidanceEvent::error(
                ErrorCategory::WrongTool,
                sid,
                frame,
                t,
                format!("wrong tool: {label} grasped while {action} during step {sid}"),
            )
        });
    }

    // (d) missing tool
    for req in step.required_objects.iter().filter(|r| r.must_be_present) {
        let count = state.missing_frames.entry(req.label.clone()).or_insert(0);
        if obs.objects.contains_key(&req.label) {
            *count = 0;
        } else {
            *count += 1;
        }
        let missing = *count > step.missing_grace_frames;
        state.edge(&mut out, Condition::Missing(req.label.clone()), missing, || {
            GuidanceEvent::error(
                ErrorCategory::MissingTool,
                sid,
                frame,
                t,
                format!("missing tool: {} not on the work station", req.label),
            )
        });
    }

    // (e) wrong action
    let wrong = obs
        .action
        .filter(|a| step.required_action.as_ref() != Some(*a) && step.confusable_actions.contains(a));
    if wrong.is_some() {
        state.wrong_action_streak += 1;
    } else {
        state.wrong_action_streak = 0;
    }
    let sustained = state.wrong_action_streak >= scenario.error_sustain_frames;
    state.edge(&mut out, Condition::WrongAction, sustained, || {
        let expected = step.required_action.as_ref().map_or("no action".to_owned(), |a| a.0.clone());
        GuidanceEvent::error(
            ErrorCategory::WrongAction,
            sid,
            frame,
            t,
            format!("wrong action: {} instead of {expected}", wrong.map(|a| a.0.as_str()).unwrap_or("")),
        )
    });

    // (f) wrong position
    let performing = step.required_action.as_ref().map_or(true, |req| obs.action == Some(req));
    for req in &step.required_objects {
        let Some(region) = req.region else { continue };
        let streak = state.position_streaks.entry(req.label.clone()).or_insert(0);
        let misplaced = performing && obs.objects.get(&req.label).is_some_and(|b| !region.contains(b));
        if misplaced {
            *streak += 1;
        } else {
            *streak = 0;
        }
        let sustained = *streak >= scenario.error_sustain_frames;
        state.edge(&mut out, Condition::WrongPosition(req.label.clone()), sustained, || {
            GuidanceEvent::error(
                ErrorCategory::WrongPosition,
                sid,
                frame,
                t,
                format!("wrong position: {} outside its target area", req.label),
            )
        });
    }

    // (a) + (b) validation
    let objects_ok = step.required_objects.iter().filter(|r| r.must_be_present).all(|r| {
        obs.objects
            .get(&r.label)
            .is_some_and(|b| r.region.map_or(true, |region| region.contains(b)))
    });
    let action_ok = step.required_action.is_none() || state.action_streak >= step.min_action_frames;
    if objects_ok && action_ok {
        let idx = state.current;
        state.validated[idx] = true;
        state.status[idx] = StepStatus::Satisfied;
        let detail = format!("step {sid} validated");
        state.emit(&mut out, GuidanceEvent::new(EventKind::StepValidated, sid, frame, t, detail));
        state.transition(scenario, frame, t, &mut out);
    }
    out
}

/// Moves past the current step.
///
/// A satisfied step advances normally. Otherwise a `PrematureAdvance` error is
/// raised, and the index only moves when `forced` is set; forcing past the last
/// step ends the session without completion.
pub fn advance(
    scenario: &Scenario,
    state: &mut ScenarioState,
    forced: bool,
    frame: u64,
    t_ms: u64,
) -> Vec<GuidanceEvent> {
    let mut out = Vec::new();
    if state.finished {
        return out;
    }
    state.last_ms = state.last_ms.max(t_ms);
    let idx = state.current;
    if state.started_ms[idx].is_none() {
        state.started_ms[idx] = Some(t_ms);
    }
    if state.status[idx] != StepStatus::Satisfied {
        let sid = scenario.steps[idx].id;
        state.status[idx] = StepStatus::Errored;
        let detail = format!("premature advance: step {sid} was not completed");
        state.emit(&mut out, GuidanceEvent::error(ErrorCategory::PrematureAdvance, sid, frame, t_ms, detail));
        if !forced {
            return out;
        }
    }
    state.transition(scenario, frame, t_ms, &mut out);
    out
}
