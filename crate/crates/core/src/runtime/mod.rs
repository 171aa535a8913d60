//! Frame loop: object path and action path per frame, joined by frame id
//! before the strictly sequential smoothing / scenario / overlay stage.

mod hub;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, Sender};
use log::{debug, warn};
use serde::Serialize;
use thiserror::Error;

use crate::action_classifier::{ActionModel, ClassifierError};
use crate::analysis::SessionReport;
use crate::detection::{DetectionError, DetectionProvider, FrameDetections, ObjectDetection, OperatorAction};
use crate::geometry::BBox;
use crate::overlay::{load_anchor_rules_file, AnchorCache, OverlayError, OverlayInstance, RuleSet};
use crate::pose_features::{FeatureExtractor, FeatureVector, FEATURE_DIM};
use crate::scenario::{self, EventKind, GuidanceEvent, Observation, Scenario, ScenarioError, ScenarioState};
use crate::smoothing::SmoothingBuffer;
use crate::vocab::{ActionLabel, ObjectLabel};

pub use hub::{Delivery, Hub, Subscription};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("loading scenario {path}: {source}")]
    Scenario { path: String, source: ScenarioError },
    #[error("loading model {path}: {source}")]
    Model { path: String, source: ClassifierError },
    #[error("loading anchor rules {path}: {source}")]
    Rules { path: String, source: OverlayError },
    #[error("{0}")]
    Incompatible(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Tunables of a guidance session.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub score_threshold: f64,
    pub action_window: usize,
    pub object_window: usize,
    pub queue_capacity: usize,
    /// 1 runs every stage inline; more spawns the object, feature and classifier stages.
    pub workers: usize,
    /// Lossy delivery and frame pacing.
    pub live: bool,
    pub fps_cap: f64,
    /// Tag written into the session report.
    pub mode: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            score_threshold: crate::detection::DEFAULT_SCORE_THRESHOLD,
            action_window: crate::smoothing::DEFAULT_WINDOW,
            object_window: crate::smoothing::DEFAULT_WINDOW,
            queue_capacity: 64,
            workers: 1,
            live: false,
            fps_cap: 30.0,
            mode: "mode2".into(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), RuntimeError> {
        let bad = |m: &str| Err(RuntimeError::Config(m.to_owned()));
        if self.queue_capacity == 0 {
            return bad("queue capacity must be >= 1");
        }
        if self.action_window == 0 || self.object_window == 0 {
            return bad("smoothing windows must be >= 1");
        }
        if self.workers == 0 {
            return bad("workers must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return bad("score threshold must lie in [0, 1]");
        }
        if !(self.fps_cap > 0.0) {
            return bad("fps cap must be positive");
        }
        Ok(())
    }
}

/// Loaded, cross-validated session inputs.
#[derive(Debug, Clone)]
pub struct Engine {
    pub scenario: Arc<Scenario>,
    pub model: Arc<ActionModel>,
    pub rules: Arc<RuleSet>,
}

impl Engine {
    pub fn new(scenario: Scenario, model: ActionModel, rules: RuleSet) -> Result<Self, RuntimeError> {
        if model.params.input_dim() != FEATURE_DIM {
            return Err(RuntimeError::Incompatible(format!(
                "model expects {} features, the pipeline produces {FEATURE_DIM}",
                model.params.input_dim()
            )));
        }
        scenario
            .check_rule_refs(|id| rules.contains(id))
            .map_err(|e| RuntimeError::Incompatible(e.to_string()))?;
        for step in &scenario.steps {
            if let Some(a) = &step.required_action {
                if !model.labels.contains(a) {
                    return Err(RuntimeError::Incompatible(format!(
                        "step {} requires action {a}, which the model cannot predict",
                        step.id
                    )));
                }
            }
        }
        Ok(Self { scenario: Arc::new(scenario), model: Arc::new(model), rules: Arc::new(rules) })
    }

    pub fn load(scenario: &Path, model: &Path, rules: Option<&Path>) -> Result<Self, RuntimeError> {
        let s = Scenario::load(scenario)
            .map_err(|source| RuntimeError::Scenario { path: scenario.display().to_string(), source })?;
        let m = ActionModel::load(model)
            .map_err(|source| RuntimeError::Model { path: model.display().to_string(), source })?;
        let r = match rules {
            Some(p) => load_anchor_rules_file(p, &s.vocabulary)
                .map_err(|source| RuntimeError::Rules { path: p.display().to_string(), source })?,
            None => RuleSet::default(),
        };
        Self::new(s, m, r)
    }

    pub fn pipeline(&self, config: &PipelineConfig) -> Pipeline {
        Pipeline::new(self, config)
    }

    /// Processes the whole stream and returns the report.
    pub fn run(&self, provider: impl DetectionProvider + 'static, config: &PipelineConfig) -> Result<SessionReport, RuntimeError> {
        Ok(Session::new(self, provider, config)?.spawn().join())
    }
}

/// Everything published for one processed frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JoinedResult {
    pub frame_id: u64,
    pub timestamp_ms: u64,
    /// Time since the first frame of the session.
    pub elapsed_ms: u64,
    pub frame_size: (u32, u32),
    pub step_index: usize,
    pub progress: f64,
    pub finished: bool,
    /// Detections above the score threshold.
    pub objects: Vec<ObjectDetection>,
    /// Smoothed presence with the latest box of each present object.
    pub present: Vec<(ObjectLabel, BBox)>,
    pub raw_action: Option<ActionLabel>,
    pub action: Option<ActionLabel>,
    /// Skeleton keypoints in pixels, 18 slots.
    pub skeleton_px: Option<Vec<Option<[f64; 2]>>>,
    pub overlays: Vec<OverlayInstance>,
    pub events: Vec<GuidanceEvent>,
    /// Most recent error, kept until the next step validates or a newer error replaces it.
    pub active_error: Option<GuidanceEvent>,
}

struct ObjectOutput {
    frame_id: u64,
    timestamp_ms: u64,
    frame_size: (u32, u32),
    operator: Option<OperatorAction>,
    objects: Vec<ObjectDetection>,
}

fn object_path(frame: &FrameDetections, threshold: f64) -> ObjectOutput {
    ObjectOutput {
        frame_id: frame.frame_id,
        timestamp_ms: frame.timestamp_ms,
        frame_size: (frame.width, frame.height),
        operator: frame.operator,
        objects: frame.filtered_objects(threshold),
    }
}

struct FeatureJob {
    frame_id: u64,
    features: Option<FeatureVector>,
    hands: Vec<(f64, f64)>,
    skeleton_px: Option<Vec<Option<[f64; 2]>>>,
}

struct ActionOutput {
    frame_id: u64,
    label: Option<ActionLabel>,
    hands: Vec<(f64, f64)>,
    skeleton_px: Option<Vec<Option<[f64; 2]>>>,
}

/// Per-person preprocessing; the only stateful part of the action path.
#[derive(Default)]
struct FeatureStage {
    extractor: Option<(f64, FeatureExtractor)>,
}

impl FeatureStage {
    fn run(&mut self, frame: &FrameDetections) -> FeatureJob {
        let aspect = frame.aspect();
        if self.extractor.as_ref().map_or(true, |(a, _)| *a != aspect) {
            self.extractor = FeatureExtractor::new(aspect).ok().map(|e| (aspect, e));
        }
        let features = match (&frame.skeleton, self.extractor.as_mut()) {
            (Some(s), Some((_, ex))) => ex.push(s).unwrap_or_else(|e| {
                debug!("frame {}: {e}", frame.frame_id);
                None
            }),
            (None, Some((_, ex))) => {
                ex.skip();
                None
            }
            _ => None,
        };
        let skeleton_px = frame.skeleton.as_ref().map(|s| {
            s.joints
                .iter()
                .map(|k| k.map(|k| [k.x * frame.width as f64, k.y * frame.height as f64]))
                .collect()
        });
        FeatureJob { frame_id: frame.frame_id, features, hands: frame.hands_px(), skeleton_px }
    }
}

fn classify(job: FeatureJob, model: &ActionModel) -> ActionOutput {
    let label = job.features.as_ref().and_then(|f| match model.predict(f.as_slice()) {
        Ok(l) => Some(l.clone()),
        Err(e) => {
            warn!("frame {}: classifier failed: {e}", job.frame_id);
            None
        }
    });
    ActionOutput { frame_id: job.frame_id, label, hands: job.hands, skeleton_px: job.skeleton_px }
}

/// Smoothing, scenario evaluation and overlay placement. Sequential.
struct EvalStage {
    scenario: Arc<Scenario>,
    rules: Arc<RuleSet>,
    state: ScenarioState,
    action_buf: SmoothingBuffer<ActionLabel>,
    presence: BTreeMap<ObjectLabel, (SmoothingBuffer<bool>, Option<BBox>)>,
    anchors: AnchorCache,
    first_ms: Option<u64>,
    frames: u64,
    active_error: Option<GuidanceEvent>,
}

impl EvalStage {
    fn new(engine: &Engine, config: &PipelineConfig) -> Self {
        let scenario = engine.scenario.clone();
        let presence = scenario
            .vocabulary
            .objects
            .iter()
            .map(|o| (o.clone(), (SmoothingBuffer::new(config.object_window), None)))
            .collect();
        Self {
            state: ScenarioState::new(&scenario),
            scenario,
            rules: engine.rules.clone(),
            action_buf: SmoothingBuffer::new(config.action_window),
            presence,
            anchors: AnchorCache::new(),
            first_ms: None,
            frames: 0,
            active_error: None,
        }
    }

    fn reset_buffers(&mut self) {
        self.action_buf.reset();
        for (buf, _) in self.presence.values_mut() {
            buf.reset();
        }
    }

    fn join(&mut self, obj: ObjectOutput, act: ActionOutput) -> JoinedResult {
        assert_eq!(obj.frame_id, act.frame_id, "join barrier received mismatched frames");
        let frame_id = obj.frame_id;
        self.frames += 1;
        let first_ms = *self.first_ms.get_or_insert(obj.timestamp_ms);

        let smoothed_action = match &act.label {
            Some(l) => self.action_buf.push(l.clone(), frame_id).ok(),
            None => self.action_buf.mode().cloned(),
        };

        let mut present = BTreeMap::new();
        for (label, (buf, last_box)) in &mut self.presence {
            let seen = obj.objects.iter().find(|d| &d.label == label);
            if let Some(d) = seen {
                *last_box = Some(d.bbox);
            }
            let on = buf.push(seen.is_some(), frame_id).unwrap_or(false);
            if let (true, Some(b)) = (on, *last_box) {
                present.insert(label.clone(), b);
            }
        }

        let mut events = Vec::new();
        if obj.operator == Some(OperatorAction::ForceAdvance) {
            events.extend(scenario::advance(&self.scenario, &mut self.state, true, frame_id, obj.timestamp_ms));
        }
        let observation = Observation {
            frame_id,
            timestamp_ms: obj.timestamp_ms,
            objects: &present,
            action: smoothed_action.as_ref(),
            hands: &act.hands,
        };
        events.extend(scenario::evaluate_frame(&self.scenario, &mut self.state, &observation));
        if events.iter().any(|e| e.kind() == EventKind::StepAdvanced) {
            self.reset_buffers();
        }
        for e in &events {
            match e.kind() {
                EventKind::ErrorRaised => self.active_error = Some(e.clone()),
                EventKind::StepValidated => self.active_error = None,
                _ => {}
            }
        }

        let overlays = if self.state.is_finished() {
            Vec::new()
        } else {
            let step = &self.scenario.steps[self.state.current_step_index()];
            self.anchors
                .place_overlays(frame_id, obj.frame_size, &obj.objects, self.rules.select(&step.ar_components))
        };

        JoinedResult {
            frame_id,
            timestamp_ms: obj.timestamp_ms,
            elapsed_ms: obj.timestamp_ms.saturating_sub(first_ms),
            frame_size: obj.frame_size,
            step_index: self.state.current_step_index(),
            progress: self.state.progress(),
            finished: self.state.is_finished(),
            objects: obj.objects,
            present: present.into_iter().collect(),
            raw_action: act.label,
            action: smoothed_action,
            skeleton_px: act.skeleton_px,
            overlays,
            events,
            active_error: self.active_error.clone(),
        }
    }

    fn report(&self, mode: &str) -> SessionReport {
        SessionReport::from_state(&self.scenario, &self.state, mode, self.frames, self.first_ms)
    }
}

/// Single-threaded pipeline processing one frame per call.
pub struct Pipeline {
    threshold: f64,
    model: Arc<ActionModel>,
    features: FeatureStage,
    eval: EvalStage,
}

impl Pipeline {
    pub fn new(engine: &Engine, config: &PipelineConfig) -> Self {
        Self {
            threshold: config.score_threshold,
            model: engine.model.clone(),
            features: FeatureStage::default(),
            eval: EvalStage::new(engine, config),
        }
    }

    pub fn process(&mut self, frame: &FrameDetections) -> JoinedResult {
        let obj = object_path(frame, self.threshold);
        let act = classify(self.features.run(frame), &self.model);
        self.eval.join(obj, act)
    }

    pub fn state(&self) -> &ScenarioState {
        &self.eval.state
    }

    pub fn report(&self, mode: &str) -> SessionReport {
        self.eval.report(mode)
    }
}

/// A configured session that has not started yet; subscribe before spawning
/// to receive every frame.
pub struct Session {
    engine: Engine,
    config: PipelineConfig,
    provider: Box<dyn DetectionProvider>,
    hub: Arc<Hub>,
}

impl Session {
    pub fn new(engine: &Engine, provider: impl DetectionProvider + 'static, config: &PipelineConfig) -> Result<Self, RuntimeError> {
        config.validate()?;
        Ok(Self {
            engine: engine.clone(),
            config: config.clone(),
            provider: Box::new(provider),
            hub: Arc::new(Hub::new(config.queue_capacity, config.live)),
        })
    }

    pub fn subscribe(&self) -> Subscription {
        self.hub.subscribe()
    }

    pub fn hub(&self) -> Arc<Hub> {
        self.hub.clone()
    }

    pub fn spawn(self) -> RunningSession {
        let hub = self.hub.clone();
        let handle = thread::Builder::new()
            .name("guidance-session".into())
            .spawn(move || run_session(self))
            .expect("spawning session thread");
        RunningSession { hub, handle }
    }

    /// Runs on the calling thread.
    pub fn run(self) -> SessionReport {
        run_session(self)
    }
}

pub struct RunningSession {
    hub: Arc<Hub>,
    handle: thread::JoinHandle<SessionReport>,
}

impl RunningSession {
    /// Late subscribers see frames from now on; after the session ends they get end-of-stream at once.
    pub fn subscribe(&self) -> Subscription {
        self.hub.subscribe()
    }

    pub fn is_finished(&self) -> bool {
        self.handle.is_finished()
    }

    pub fn join(self) -> SessionReport {
        self.handle.join().expect("session thread panicked")
    }
}

struct Pacer {
    interval: Option<Duration>,
    next: Instant,
}

impl Pacer {
    fn new(config: &PipelineConfig) -> Self {
        let interval = config.live.then(|| Duration::from_secs_f64(1.0 / config.fps_cap));
        Self { interval, next: Instant::now() }
    }

    fn wait(&mut self) {
        if let Some(iv) = self.interval {
            let now = Instant::now();
            if self.next > now {
                thread::sleep(self.next - now);
            }
            self.next = self.next.max(now) + iv;
        }
    }
}

fn run_session(session: Session) -> SessionReport {
    let Session { engine, config, mut provider, hub } = session;
    let mut eval = EvalStage::new(&engine, &config);
    let mut pacer = Pacer::new(&config);
    let mut publish = |r: JoinedResult| {
        pacer.wait();
        hub.publish(r);
    };
    let abort = if config.workers <= 1 {
        run_inline(&engine, &config, provider.as_mut(), &mut eval, &mut publish)
    } else {
        run_parallel(&engine, &config, provider, &mut eval, &mut publish)
    };
    hub.close();
    let mut report = eval.report(&config.mode);
    if let Some(reason) = abort {
        warn!("session aborted: {reason}");
        report.aborted = true;
        report.abort_reason = Some(reason);
    }
    report
}

fn run_inline(
    engine: &Engine,
    config: &PipelineConfig,
    provider: &mut dyn DetectionProvider,
    eval: &mut EvalStage,
    publish: &mut dyn FnMut(JoinedResult),
) -> Option<String> {
    let mut features = FeatureStage::default();
    loop {
        match provider.next_frame() {
            Ok(Some(frame)) => {
                let obj = object_path(&frame, config.score_threshold);
                let act = classify(features.run(&frame), &engine.model);
                publish(eval.join(obj, act));
            }
            Ok(None) => return None,
            Err(e) => return Some(e.to_string()),
        }
    }
}

fn run_parallel(
    engine: &Engine,
    config: &PipelineConfig,
    mut provider: Box<dyn DetectionProvider>,
    eval: &mut EvalStage,
    publish: &mut dyn FnMut(JoinedResult),
) -> Option<String> {
    let cap = config.queue_capacity;
    let threshold = config.score_threshold;
    let classifiers = (config.workers - 1).max(1);
    let abort: Arc<Mutex<Option<String>>> = Arc::new(Mutex::new(None));

    let (obj_in_tx, obj_in_rx) = bounded::<Arc<FrameDetections>>(cap);
    let (feat_in_tx, feat_in_rx) = bounded::<Arc<FrameDetections>>(cap);
    let (obj_out_tx, obj_out_rx) = bounded::<ObjectOutput>(cap);
    let (job_tx, job_rx) = bounded::<FeatureJob>(cap);
    let (act_tx, act_rx) = bounded::<ActionOutput>(cap * 2);

    thread::scope(|scope| {
        let reader_abort = abort.clone();
        scope.spawn(move || {
            loop {
                match provider.next_frame() {
                    Ok(Some(f)) => {
                        let f = Arc::new(f);
                        if obj_in_tx.send(f.clone()).is_err() || feat_in_tx.send(f).is_err() {
                            break;
                        }
                    }
                    Ok(None) => break,
                    Err(e) => {
                        *reader_abort.lock().expect("abort slot") = Some(e.to_string());
                        break;
                    }
                }
            }
        });

        scope.spawn(move || forward(obj_in_rx, obj_out_tx, |f| object_path(&f, threshold)));

        scope.spawn(move || {
            let mut stage = FeatureStage::default();
            forward(feat_in_rx, job_tx, |f| stage.run(&f));
        });

        for _ in 0..classifiers {
            let rx = job_rx.clone();
            let tx = act_tx.clone();
            let model = engine.model.clone();
            scope.spawn(move || forward(rx, tx, |job| classify(job, &model)));
        }
        drop(job_rx);
        drop(act_tx);

        join_loop(obj_out_rx, act_rx, eval, publish);
    });

    let reason = abort.lock().expect("abort slot").take();
    reason
}

fn forward<A, B>(rx: Receiver<A>, tx: Sender<B>, mut f: impl FnMut(A) -> B) {
    for item in rx {
        if tx.send(f(item)).is_err() {
            break;
        }
    }
}

/// Pairs object and action outputs by frame id in object-path order.
fn join_loop(
    objects: Receiver<ObjectOutput>,
    actions: Receiver<ActionOutput>,
    eval: &mut EvalStage,
    publish: &mut dyn FnMut(JoinedResult),
) {
    let mut pending: HashMap<u64, ActionOutput> = HashMap::new();
    for obj in objects {
        let act = loop {
            if let Some(a) = pending.remove(&obj.frame_id) {
                break Some(a);
            }
            match actions.recv() {
                Ok(a) => {
                    pending.insert(a.frame_id, a);
                }
                Err(_) => break None,
            }
        };
        let Some(act) = act else { break };
        publish(eval.join(obj, act));
    }
}

/// Provider fed through a channel, used for live sessions.
pub struct ChannelProvider {
    rx: Receiver<FrameDetections>,
}

impl ChannelProvider {
    pub fn new(rx: Receiver<FrameDetections>) -> Self {
        Self { rx }
    }
}

impl DetectionProvider for ChannelProvider {
    fn next_frame(&mut self) -> Result<Option<FrameDetections>, DetectionError> {
        Ok(self.rx.recv().ok())
    }
}

/// Event log as JSON lines.
pub fn events_jsonl(events: &[GuidanceEvent]) -> String {
    events
        .iter()
        .map(|e| serde_json::to_string(e).expect("events serialize") + "\n")
        .collect()
}
