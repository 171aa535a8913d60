//! Regenerates the shipped Table I artifacts in `crates/core/data`:
//! the action model and the clean and error-injection replays.
//!
//! Replays are authored closed-loop: a scripted workspace is ticked through the
//! real pipeline and moves on to the next step's script only when the engine
//! reports the step change, so the recorded timings match validation exactly.
//!
//!     cargo run --release -p stepguide --example author_tablei -- crates/core/data

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use stepguide::action_classifier::{ActionModel, SyntheticDatasetSpec, TrainingConfig};
use stepguide::detection::{write_stream_file, FrameDetections, Hand, Workspace, KNOWN_ACTIONS};
use stepguide::geometry::BBox;
use stepguide::overlay::load_anchor_rules_file;
use stepguide::runtime::{Engine, Pipeline, PipelineConfig};
use stepguide::scenario::{ErrorCategory, Scenario};

const MODEL_SEED: u64 = 2024;
const NOISE: f64 = 0.002;
const STEP_LIMIT: usize = 400;
const PAUSE: usize = 12;

fn table_spot(label: &str) -> BBox {
    match label {
        "drill" => BBox::new(20.0, 390.0, 90.0, 50.0),
        "grey box" => BBox::new(120.0, 390.0, 80.0, 60.0),
        "green box" => BBox::new(210.0, 390.0, 80.0, 60.0),
        "pencil" => BBox::new(300.0, 405.0, 60.0, 14.0),
        "ruler" => BBox::new(370.0, 400.0, 100.0, 16.0),
        "hacksaw" => BBox::new(490.0, 390.0, 130.0, 40.0),
        "screw bit" => BBox::new(135.0, 400.0, 24.0, 24.0),
        "screw" => BBox::new(230.0, 405.0, 16.0, 16.0),
        "board" => BBox::new(170.0, 305.0, 300.0, 65.0),
        other => panic!("no table spot for {other}"),
    }
}

fn held_size(label: &str) -> (f64, f64) {
    match label {
        "drill" => (90.0, 50.0),
        "pencil" => (60.0, 12.0),
        "ruler" => (100.0, 16.0),
        "hacksaw" => (130.0, 40.0),
        other => panic!("{other} is not held"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Injection {
    None,
    WrongTool,
    MissingTool,
    WrongAction,
    WrongPosition,
    PrematureAdvance,
}

impl Injection {
    fn file_name(self) -> &'static str {
        match self {
            Injection::None => "tableI_clean.detstream",
            Injection::WrongTool => "tableI_wrong_tool.detstream",
            Injection::MissingTool => "tableI_missing_tool.detstream",
            Injection::WrongAction => "tableI_wrong_action.detstream",
            Injection::WrongPosition => "tableI_wrong_position.detstream",
            Injection::PrematureAdvance => "tableI_premature_advance.detstream",
        }
    }

    fn expected(self) -> Option<ErrorCategory> {
        match self {
            Injection::None => None,
            Injection::WrongTool => Some(ErrorCategory::WrongTool),
            Injection::MissingTool => Some(ErrorCategory::MissingTool),
            Injection::WrongAction => Some(ErrorCategory::WrongAction),
            Injection::WrongPosition => Some(ErrorCategory::WrongPosition),
            Injection::PrematureAdvance => Some(ErrorCategory::PrematureAdvance),
        }
    }
}

struct Director {
    pipeline: Pipeline,
    ws: Workspace,
    frames: Vec<FrameDetections>,
}

impl Director {
    fn tick(&mut self) -> (usize, bool) {
        let f = self.ws.tick();
        let r = self.pipeline.process(&f);
        self.frames.push(f);
        (r.step_index, r.finished)
    }

    fn run(&mut self, n: usize) {
        for _ in 0..n {
            self.tick();
        }
    }

    /// Ticks until step `number` (1-based) has been left or the scenario finishes.
    fn finish_step(&mut self, number: usize) {
        let state = self.pipeline.state();
        if state.current_step_index() >= number || state.is_finished() {
            return;
        }
        for _ in 0..STEP_LIMIT {
            let (idx, finished) = self.tick();
            if idx >= number || finished {
                return;
            }
        }
        panic!("step {number} did not validate within {STEP_LIMIT} frames");
    }

    fn hold(&mut self, label: &str, hand: Hand) {
        self.ws.hold_object(label, hand, held_size(label));
    }

    fn put_back(&mut self, label: &str) {
        self.ws.place_object(label, table_spot(label));
    }

    fn act(&mut self, action: &str) {
        self.ws.set_action(action).expect("known action");
    }

    /// The worker reads the next instruction.
    fn pause(&mut self) {
        self.act("idle");
        self.run(PAUSE);
    }
}

fn author(engine: &Engine, injection: Injection, seed: u64) -> Vec<FrameDetections> {
    let ws = Workspace::new(640, 480, 30.0, NOISE, seed).expect("workspace");
    let mut d = Director { pipeline: engine.pipeline(&PipelineConfig::default()), ws, frames: Vec::new() };

    // Step 1: tools on the table.
    for label in ["drill", "grey box", "green box", "pencil", "ruler", "hacksaw"] {
        if injection == Injection::MissingTool && label == "green box" {
            continue;
        }
        d.put_back(label);
    }
    // Already inside their boxes.
    d.put_back("screw bit");
    d.put_back("screw");
    d.act("idle");
    d.run(8);
    if injection == Injection::MissingTool {
        d.run(20);
        d.put_back("green box");
    }
    d.finish_step(1);

    // Step 2: drill.
    d.pause();
    match injection {
        Injection::WrongTool => {
            d.hold("hacksaw", Hand::Right);
            d.act("picking");
            d.run(25);
            d.put_back("hacksaw");
            d.act("idle");
            d.run(10);
        }
        Injection::WrongPosition => {
            d.ws.place_object("drill", BBox::new(430.0, 200.0, 90.0, 50.0));
            d.act("drilling");
            d.run(25);
            d.act("idle");
            d.run(10);
        }
        Injection::WrongAction => {
            d.hold("drill", Hand::Right);
            d.act("sawing");
            d.run(25);
            d.act("idle");
            d.run(10);
        }
        _ => {}
    }
    d.hold("drill", Hand::Right);
    d.act("drilling");
    d.finish_step(2);

    // Step 3: screw bit from the grey box.
    d.pause();
    d.act("picking");
    d.finish_step(3);

    // Step 4: screw from the green box.
    d.pause();
    if injection == Injection::PrematureAdvance {
        d.act("idle");
        d.run(10);
        d.ws.force_advance();
        d.tick();
    } else {
        d.act("picking");
        d.finish_step(4);
    }

    // Step 5: drive the screw.
    d.pause();
    d.act("drilling");
    d.finish_step(5);

    // Step 6: fetch the board from under the station.
    d.pause();
    d.act("placing");
    d.run(20);
    d.put_back("board");
    d.finish_step(6);

    // Step 7: mark with the pencil.
    d.pause();
    d.put_back("drill");
    d.hold("pencil", Hand::Right);
    d.act("marking");
    d.finish_step(7);

    // Step 8: measure.
    d.pause();
    d.put_back("pencil");
    d.hold("ruler", Hand::Right);
    d.act("measuring");
    d.finish_step(8);

    // Step 9: saw.
    d.pause();
    d.put_back("ruler");
    d.hold("hacksaw", Hand::Right);
    d.act("sawing");
    d.finish_step(9);

    d.put_back("hacksaw");
    d.act("idle");
    d.run(15);
    d.frames
}

fn main() {
    let out: PathBuf = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("crates/core/data"));
    let scenario = Scenario::load(&out.join("tableI.scenario")).expect("scenario");
    let rules = load_anchor_rules_file(&out.join("tableI.rules"), &scenario.vocabulary).expect("rules");

    let data = SyntheticDatasetSpec { clips: 12, ..SyntheticDatasetSpec::new(&KNOWN_ACTIONS, MODEL_SEED) }
        .build()
        .expect("training data");
    let (train, held_out) = data.split(0.8, MODEL_SEED);
    let model = ActionModel::train(&train, &TrainingConfig::default()).expect("training");
    println!("model: {} windows, held-out accuracy {:.4}", data.len(), model.accuracy(&held_out).unwrap());
    model.save(&out.join("tableI.model")).expect("writing model");

    let engine = Engine::new(scenario, model, rules).expect("engine");
    let injections = [
        Injection::None,
        Injection::WrongTool,
        Injection::MissingTool,
        Injection::WrongAction,
        Injection::WrongPosition,
        Injection::PrematureAdvance,
    ];
    for (i, inj) in injections.into_iter().enumerate() {
        let frames = author(&engine, inj, 100 + i as u64);
        verify(&engine, inj, &frames);
        write(&out.join(inj.file_name()), &frames);
    }
}

fn verify(engine: &Engine, inj: Injection, frames: &[FrameDetections]) {
    let mut p = engine.pipeline(&PipelineConfig::default());
    for f in frames {
        p.process(f);
    }
    let report = p.report("author");
    let errors = report.nonzero_errors();
    println!(
        "{:<36} frames {:>4}  validated {}/{}  completed {:<5}  errors {:?}",
        inj.file_name(),
        frames.len(),
        report.steps_validated,
        report.steps_total,
        report.completed,
        errors
    );
    match inj.expected() {
        None => assert!(report.completed && errors.is_empty(), "clean replay must complete without errors"),
        Some(cat) => assert_eq!(errors, BTreeMap::from([(cat, 1)]), "{inj:?} must raise exactly one {cat}"),
    }
}

fn write(path: &Path, frames: &[FrameDetections]) {
    write_stream_file(path, frames).expect("writing replay");
}
