use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::PathBuf;
use std::thread;
use std::time::Duration;

use stepguide::detection::{frame_to_line, read_stream_file, ReplayProvider, VecProvider};
use stepguide::runtime::{Delivery, Engine, PipelineConfig, Session};
use stepguide::scenario::{ErrorCategory, EventKind};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn engine() -> Engine {
    Engine::load(&data("tableI.scenario"), &data("tableI.model"), Some(&data("tableI.rules"))).unwrap()
}

fn replay(name: &str) -> VecProvider {
    VecProvider::new(read_stream_file(&data(name)).unwrap())
}

#[test]
fn golden_replays_raise_exactly_the_injected_error() {
    let e = engine();
    let cases = [
        ("tableI_clean.detstream", None, true),
        ("tableI_wrong_tool.detstream", Some(ErrorCategory::WrongTool), true),
        ("tableI_missing_tool.detstream", Some(ErrorCategory::MissingTool), true),
        ("tableI_wrong_action.detstream", Some(ErrorCategory::WrongAction), true),
        ("tableI_wrong_position.detstream", Some(ErrorCategory::WrongPosition), true),
        ("tableI_premature_advance.detstream", Some(ErrorCategory::PrematureAdvance), false),
    ];
    for (file, expected, completed) in cases {
        let report = e.run(replay(file), &PipelineConfig::default()).unwrap();
        let want: BTreeMap<_, _> = expected.into_iter().map(|c| (c, 1)).collect();
        assert_eq!(report.nonzero_errors(), want, "{file}");
        assert_eq!(report.completed, completed, "{file}");
        assert!(!report.aborted);
    }
}

#[test]
fn replay_is_deterministic_across_runs_and_workers() {
    let e = engine();
    let base = e.run(replay("tableI_wrong_action.detstream"), &PipelineConfig::default()).unwrap();
    for _ in 0..4 {
        assert_eq!(e.run(replay("tableI_wrong_action.detstream"), &PipelineConfig::default()).unwrap(), base);
    }
    for workers in [2, 4] {
        let cfg = PipelineConfig { workers, queue_capacity: 4, ..Default::default() };
        assert_eq!(e.run(replay("tableI_wrong_action.detstream"), &cfg).unwrap(), base, "workers={workers}");
    }
}

#[test]
fn parallel_stream_matches_inline_frame_by_frame() {
    let e = engine();
    let collect = |workers| {
        let cfg = PipelineConfig { workers, queue_capacity: 2, ..Default::default() };
        let s = Session::new(&e, replay("tableI_wrong_tool.detstream"), &cfg).unwrap();
        let sub = s.subscribe();
        let running = s.spawn();
        let got: Vec<Delivery> = sub.collect();
        running.join();
        got
    };
    let inline = collect(1);
    assert_eq!(inline.iter().filter(|d| matches!(d, Delivery::Frame(_))).count(), 232);
    assert_eq!(collect(4), inline);
}

#[test]
fn subscribers_see_identical_events() {
    let e = engine();
    let s = Session::new(&e, replay("tableI_missing_tool.detstream"), &PipelineConfig::default()).unwrap();
    let (a, b) = (s.subscribe(), s.subscribe());
    let running = s.spawn();
    let slow = thread::spawn(move || {
        b.filter_map(|d| {
            thread::sleep(Duration::from_micros(200));
            match d {
                Delivery::Event(ev) => Some(ev),
                Delivery::Frame(_) => None,
            }
        })
        .collect::<Vec<_>>()
    });
    let fast: Vec<_> = a
        .filter_map(|d| match d {
            Delivery::Event(ev) => Some(ev),
            Delivery::Frame(_) => None,
        })
        .collect();
    let report = running.join();
    assert_eq!(fast, report.events);
    assert_eq!(slow.join().unwrap(), report.events);
}

#[test]
fn live_slow_consumer_loses_frames_not_events() {
    let e = engine();
    let cfg = PipelineConfig { live: true, fps_cap: 2000.0, queue_capacity: 1, ..Default::default() };
    let s = Session::new(&e, replay("tableI_wrong_position.detstream"), &cfg).unwrap();
    let sub = s.subscribe();
    let running = s.spawn();
    let (mut frames, mut events) = (0, Vec::new());
    while let Some(d) = sub.recv() {
        match d {
            Delivery::Frame(_) => frames += 1,
            Delivery::Event(ev) => events.push(ev),
        }
        thread::sleep(Duration::from_millis(3));
    }
    let report = running.join();
    assert_eq!(report.frames_processed, 230);
    assert!(sub.dropped_frames() > 0);
    assert_eq!(frames + sub.dropped_frames(), 230);
    assert_eq!(events, report.events);
    assert!(events.iter().any(|ev| ev.error_category() == Some(ErrorCategory::WrongPosition)));
}

#[test]
fn late_subscriber_gets_end_of_stream() {
    let e = engine();
    let running = Session::new(&e, replay("tableI_clean.detstream"), &PipelineConfig::default()).unwrap().spawn();
    while !running.is_finished() {
        thread::sleep(Duration::from_millis(2));
    }
    let sub = running.subscribe();
    assert_eq!(sub.recv_timeout(Duration::from_millis(50)), Ok(None));
    assert!(running.join().completed);
}

#[test]
fn empty_stream_is_not_completed() {
    let report = engine().run(VecProvider::new(Vec::new()), &PipelineConfig::default()).unwrap();
    assert!(!report.completed);
    assert!(!report.aborted);
    assert_eq!(report.frames_processed, 0);
    assert_eq!(report.steps_validated, 0);
}

#[test]
fn parse_error_mid_stream_aborts() {
    let frames = read_stream_file(&data("tableI_clean.detstream")).unwrap();
    let mut text: String = frames[..40].iter().map(|f| frame_to_line(f) + "\n").collect();
    text.push_str("{\"v\":1,\"frame\":\n");
    text.extend(frames[40..].iter().map(|f| frame_to_line(f) + "\n"));
    for workers in [1, 3] {
        let cfg = PipelineConfig { workers, ..Default::default() };
        let report = engine().run(ReplayProvider::new(Cursor::new(text.clone().into_bytes())), &cfg).unwrap();
        assert!(report.aborted);
        assert!(report.abort_reason.as_deref().unwrap().contains("41"), "{:?}", report.abort_reason);
        assert!(!report.completed);
        assert_eq!(report.frames_processed, 40);
    }
}

#[test]
fn step_events_follow_the_scenario_order() {
    let report = engine().run(replay("tableI_clean.detstream"), &PipelineConfig::default()).unwrap();
    let validated: Vec<u32> = report
        .events
        .iter()
        .filter(|e| e.kind() == EventKind::StepValidated)
        .map(|e| e.step_id())
        .collect();
    assert_eq!(validated, (1..=9).collect::<Vec<_>>());
    assert_eq!(report.events.last().unwrap().kind(), EventKind::ScenarioCompleted);
    assert_eq!(report.step_durations_s.len(), 9);
    assert!(report.total_time_s > 0.0);
}

#[test]
fn bad_config_is_rejected() {
    let e = engine();
    for cfg in [
        PipelineConfig { queue_capacity: 0, ..Default::default() },
        PipelineConfig { workers: 0, ..Default::default() },
        PipelineConfig { fps_cap: 0.0, ..Default::default() },
        PipelineConfig { action_window: 0, ..Default::default() },
    ] {
        assert!(Session::new(&e, VecProvider::new(Vec::new()), &cfg).is_err());
    }
}
