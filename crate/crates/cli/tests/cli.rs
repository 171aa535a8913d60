use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data").join(name)
}

fn stepguide(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stepguide")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn replay(name: &str, extra: &[&str]) -> Output {
    let (scenario, model, rules, stream) =
        (data("tableI.scenario"), data("tableI.model"), data("tableI.rules"), data(&format!("tableI_{name}.detstream")));
    let mut args = vec!["run", "--scenario", s(&scenario), "--model", s(&model), "--rules", s(&rules), "--stream", s(&stream)];
    args.extend_from_slice(extra);
    stepguide(&args)
}

#[test]
fn clean_replay_completes_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (report, events) = (dir.path().join("r.json"), dir.path().join("e.jsonl"));
    let out = replay("clean", &["--report", s(&report), "--events", s(&events)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("steps 9/9"));
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["completed"], true);
    let lines = fs::read_to_string(&events).unwrap();
    assert!(lines.lines().all(|l| serde_json::from_str::<Value>(l).is_ok()));
    assert!(!lines.contains("ErrorRaised"));
}

#[test]
fn premature_replay_exits_one() {
    let out = replay("premature_advance", &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("PrematureAdvance 1"));
}

#[test]
fn missing_inputs_exit_two() {
    let out = stepguide(&["run", "--scenario", "/no/such.scenario", "--model", s(&data("tableI.model")), "--stream", s(&data("tableI_clean.detstream"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such.scenario"));
}

#[test]
fn unknown_flag_is_rejected() {
    let out = stepguide(&["run", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.status.success());
}

#[test]
fn config_file_supplies_paths_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("guide.toml");
    let text = format!(
        "[paths]\nscenario = {:?}\nmodel = {:?}\nrules = {:?}\n\n[pipeline]\nmode = \"from-config\"\n",
        data("tableI.scenario"),
        data("tableI.model"),
        data("tableI.rules")
    );
    fs::write(&cfg, text).unwrap();
    let stream = data("tableI_clean.detstream");
    let out = stepguide(&["--config", s(&cfg), "run", "--stream", s(&stream)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("mode from-config"));
    let out = stepguide(&["--config", s(&cfg), "run", "--stream", s(&stream), "--mode", "flag", "--workers", "3"]);
    assert!(stdout(&out).contains("mode flag"));

    fs::write(&cfg, "[pipeline]\nworkres = 2\n").unwrap();
    assert_eq!(stepguide(&["--config", s(&cfg), "run", "--stream", s(&stream)]).status.code(), Some(2));
}

#[test]
fn synthetic_motion_satisfies_an_action_step() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("saw.scenario");
    fs::write(
        &scenario,
        r#"{"version": 1, "id": "saw-only", "title": "Saw",
            "vocabulary": {"objects": [], "actions": ["idle", "drilling", "sawing", "picking", "placing", "marking", "measuring"]},
            "steps": [{"id": 1, "instruction": "Saw.", "required_action": "sawing"}]}"#,
    )
    .unwrap();
    let spec = dir.path().join("saw.json");
    fs::write(
        &spec,
        r#"{"action": "sawing", "amplitude": 0.1, "frequency_hz": 1.0, "noise_sigma": 0.002, "duration_frames": 90, "seed": 5}"#,
    )
    .unwrap();
    let out = stepguide(&["run", "--scenario", s(&scenario), "--model", s(&data("tableI.model")), "--synthetic", s(&spec)]);
    assert_eq!(out.status.code(), Some(0), "{}{}", stdout(&out), String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("steps 1/1"));
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.detstream"), dir.path().join("b.detstream"));
    for p in [&a, &b] {
        let out = stepguide(&["gen", "--action", "drilling", "--frames", "40", "--seed", "11", "--out", s(p)]);
        assert!(out.status.success());
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), 40);
}

#[test]
fn generated_dataset_trains_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test, model) = (dir.path().join("train"), dir.path().join("test"), dir.path().join("m.model"));
    for (d, clips, seed) in [(&train, "5", "3"), (&test, "2", "77")] {
        let out = stepguide(&["gen", "--dataset", s(d), "--actions", "sawing,drilling,idle", "--clips", clips, "--seed", seed]);
        assert!(out.status.success());
    }
    let out = stepguide(&["train", "--data", s(&train), "--out", s(&model), "--epochs", "15"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(summary["labels"], serde_json::json!(["drilling", "idle", "sawing"]));

    let out = stepguide(&["eval", "--model", s(&model), "--data", s(&test), "--json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let eval: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(eval["accuracy"].as_f64().unwrap() >= 0.9, "{eval}");
}

#[test]
fn anova_over_reports() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    let sessions = [("a", "clean"), ("a", "wrong_tool"), ("b", "wrong_tool"), ("b", "clean")];
    for (i, (mode, stream)) in sessions.iter().enumerate() {
        let p = dir.path().join(format!("s{i}.json"));
        let out = replay(stream, &["--mode", mode, "--report", s(&p)]);
        assert!(out.status.success());
        reports.push(p);
    }
    let table = dir.path().join("sessions.tsv");
    let mut args = vec!["anova", "--table", s(&table)];
    args.extend(reports.iter().map(|p| s(p)));
    let out = stepguide(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(r["modes"], serde_json::json!(["a", "b"]));
    // Both groups hold the same two sessions, so their means coincide.
    assert!(r["f"].as_f64().unwrap().abs() < 1e-9, "{r}");
    assert_eq!(r["df_within"], 2);
    assert_eq!(fs::read_to_string(&table).unwrap().lines().count(), 5);
}
