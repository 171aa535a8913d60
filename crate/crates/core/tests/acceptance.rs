//! One PASS/FAIL line per acceptance criterion; exits nonzero if any fails.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use common::{brute_mode, data, gradient_check, naive_features, random_window, to_raw, RawJoints};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use stepguide::action_classifier::{ActionModel, MlpParams, SyntheticDatasetSpec, TrainingConfig};
use stepguide::analysis::{convergence_iteration, one_way_anova};
use stepguide::detection::{read_stream_file, VecProvider};
use stepguide::geometry::BBox;
use stepguide::overlay::{AnchorRule, ComponentKind, ComponentSize};
use stepguide::pose_features::{FeatureExtractor, FeatureVector};
use stepguide::runtime::{events_jsonl, Delivery, Engine, PipelineConfig, Session};
use stepguide::scenario::{ErrorCategory, EventKind};
use stepguide::smoothing::SmoothingBuffer;

type Outcome = Result<String, String>;

const ASPECT: f64 = 640.0 / 480.0;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn extract(window: &[RawJoints]) -> FeatureVector {
    let mut ex = FeatureExtractor::new(ASPECT).unwrap();
    let mut out = None;
    for (i, f) in window.iter().enumerate() {
        out = ex.push(&to_raw(f, i as u64)).unwrap();
    }
    out.unwrap()
}

fn feature_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let windows: Vec<Vec<RawJoints>> = (0..100).map(|_| random_window(&mut rng)).collect();
    let start = Instant::now();
    let got: Vec<FeatureVector> = windows.iter().map(|w| extract(w)).collect();
    let elapsed = start.elapsed().as_secs_f64();
    let mut worst: f64 = 0.0;
    for (w, g) in windows.iter().zip(&got) {
        for (a, b) in g.as_slice().iter().zip(naive_features(w, ASPECT)) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    ensure(elapsed < 1.0, || format!("took {elapsed:.3} s"))?;
    Ok(format!("100 windows, max |diff| {worst:.1e}, {:.1} ms", elapsed * 1e3))
}

fn scale_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let w = random_window(&mut rng);
        let s = rng.gen_range(0.1..10.0);
        let scaled: Vec<RawJoints> = w
            .iter()
            .map(|f| {
                let mut f = *f;
                for j in f.iter_mut().flatten() {
                    j[0] *= s;
                    j[1] *= s;
                }
                f
            })
            .collect();
        for (a, b) in extract(&w).as_slice().iter().zip(extract(&scaled).as_slice()) {
            worst = worst.max((a - b).abs() / a.abs().max(1.0));
        }
    }
    ensure(worst <= 1e-9, || format!("max relative change {worst:e}"))?;
    Ok(format!("100 windows, max relative change {worst:.1e}"))
}

fn classifier() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let input = rng.gen_range(2..10);
        let hidden = [rng.gen_range(2..8), rng.gen_range(2..8)];
        let classes = rng.gen_range(2..5);
        let mut params = MlpParams::init(input, hidden, classes, &mut rng);
        for l in &mut params.layers {
            l.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
        }
        let xs: Vec<Vec<f64>> = (0..4).map(|_| (0..input).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let batch: Vec<(&[f64], usize)> = xs.iter().map(|x| (x.as_slice(), rng.gen_range(0..classes))).collect();
        worst = worst.max(gradient_check(&batch, &params));
    }
    ensure(worst < 1e-5, || format!("gradient relative error {worst:e}"))?;

    let start = Instant::now();
    let data = SyntheticDatasetSpec::new(&["idle", "drilling", "sawing"], 5).build().map_err(|e| e.to_string())?;
    let (train, test) = data.split(0.8, 5);
    let model = ActionModel::train(&train, &TrainingConfig::default()).map_err(|e| e.to_string())?;
    let acc = model.accuracy(&test).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    ensure(acc >= 0.9 && secs < 60.0, || format!("accuracy {acc:.3} in {secs:.1} s"))?;
    Ok(format!("10 configs, gradient error {worst:.1e}; 3-class held-out accuracy {acc:.3} in {secs:.1} s"))
}

fn smoothing() -> Outcome {
    let mut checked = 0u64;
    for len in 1..=12u32 {
        for code in 0..3u32.pow(len) {
            let seq: Vec<u8> = (0..len).map(|i| (code / 3u32.pow(i) % 3) as u8).collect();
            let mut b = SmoothingBuffer::new(10);
            for (i, &l) in seq.iter().enumerate() {
                let got = b.push(l, i as u64).unwrap();
                let want = brute_mode(&seq[(i + 1).saturating_sub(10)..=i]);
                ensure(got == want, || format!("{seq:?} at {i}: {got} vs {want}"))?;
                checked += 1;
            }
        }
    }
    for len in 3..=15 {
        for pos in 0..len {
            let mut b = SmoothingBuffer::new(10);
            for i in 0..len {
                let out = b.push(u8::from(i == pos), i as u64).unwrap();
                ensure(b.len() < 3 || out == 0, || format!("blip at {pos} flipped frame {i}"))?;
            }
        }
    }
    Ok(format!("{checked} pushes over all sequences up to length 12; blips never flip"))
}

fn engine() -> Engine {
    Engine::load(&data("tableI.scenario"), &data("tableI.model"), Some(&data("tableI.rules"))).expect("shipped data")
}

fn scenario() -> Outcome {
    let e = engine();
    let clean = read_stream_file(&data("tableI_clean.detstream")).map_err(|e| e.to_string())?;
    let run = |workers| {
        let cfg = PipelineConfig { workers, ..Default::default() };
        e.run(VecProvider::new(clean.clone()), &cfg).unwrap()
    };
    let base = run(1);
    let validated = base.events.iter().filter(|ev| ev.kind() == EventKind::StepValidated).count();
    ensure(validated == 9 && base.completed, || format!("{validated}/9 validated"))?;
    ensure(base.error_total() == 0, || format!("errors {:?}", base.nonzero_errors()))?;
    let log = events_jsonl(&base.events);
    for (i, workers) in [1, 1, 1, 1, 4, 4].into_iter().enumerate() {
        ensure(events_jsonl(&run(workers).events) == log, || format!("event log differs on run {i} ({workers} workers)"))?;
    }
    let injections = [
        ("tableI_wrong_tool.detstream", ErrorCategory::WrongTool),
        ("tableI_missing_tool.detstream", ErrorCategory::MissingTool),
        ("tableI_wrong_action.detstream", ErrorCategory::WrongAction),
        ("tableI_premature_advance.detstream", ErrorCategory::PrematureAdvance),
        ("tableI_wrong_position.detstream", ErrorCategory::WrongPosition),
    ];
    for (file, cat) in injections {
        let frames = read_stream_file(&data(file)).map_err(|e| e.to_string())?;
        let r = e.run(VecProvider::new(frames), &PipelineConfig::default()).unwrap();
        ensure(r.nonzero_errors() == BTreeMap::from([(cat, 1)]), || format!("{file}: {:?}", r.nonzero_errors()))?;
    }
    Ok("clean 9/9, 0 errors, identical logs over 5 runs and 1 vs 4 workers; 5 injections each raise their one category".into())
}

fn overlay() -> Outcome {
    let rule = |offset, w, h| AnchorRule {
        id: "r".into(),
        anchor: "drill".into(),
        kind: ComponentKind::HighlightBox,
        offset,
        size: ComponentSize::Fraction { w, h },
        payload: String::new(),
        staleness_timeout_frames: 15,
    };
    let worked = rule([0.5, -0.25], 0.5, 0.5).place(&BBox::new(100.0, 100.0, 80.0, 40.0));
    ensure(worked == BBox::new(140.0, 90.0, 40.0, 20.0), || format!("worked example gave {worked:?}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    // Quarter-pixel boxes and eighth fractions keep all arithmetic exact.
    let mut q = |lo: i32, hi: i32, d: f64| rng.gen_range(lo..hi) as f64 / d;
    for _ in 0..10_000 {
        let r = rule([q(-8, 8, 8.0), q(-8, 8, 8.0)], q(1, 16, 8.0), q(1, 16, 8.0));
        let a = BBox::new(q(0, 2000, 4.0), q(0, 2000, 4.0), q(4, 800, 4.0), q(4, 800, 4.0));
        let (tx, ty, k) = (q(-800, 800, 4.0), q(-800, 800, 4.0), q(1, 5, 1.0));
        let p = r.place(&a);
        let moved = r.place(&BBox::new(a.x + tx, a.y + ty, a.w, a.h));
        ensure(moved == BBox::new(p.x + tx, p.y + ty, p.w, p.h), || format!("translation error for {a:?}"))?;
        let grown = r.place(&BBox::new(a.x, a.y, a.w * k, a.h * k));
        let want = BBox::new(a.x + k * (p.x - a.x), a.y + k * (p.y - a.y), k * p.w, k * p.h);
        ensure(grown == want, || format!("scaling error for {a:?}"))?;
    }
    Ok("worked example (140, 90, 40, 20); 10000 random translations and scalings exact".into())
}

fn anova() -> Outcome {
    let fixed: [(Vec<Vec<f64>>, f64); 5] = [
        (vec![vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 4.0]], 0.2878641347266907),
        (vec![vec![6.1, 5.9, 7.2, 6.4], vec![7.8, 8.1, 7.4, 8.9], vec![5.2, 6.0, 5.5, 5.9]], 0.0004166555771876695),
        (vec![vec![10.0, 12.0, 11.0, 13.0, 9.0], vec![14.0, 15.0, 13.0, 16.0, 17.0]], 0.003949772803445326),
        (vec![vec![2.5, 3.1, 2.8], vec![3.0, 2.9, 3.3], vec![2.7, 3.6, 3.1], vec![4.0, 3.8, 4.2]], 0.0068912414043340664),
        (vec![vec![100.0, 102.0, 98.0, 101.0, 99.0, 103.0], vec![101.0, 100.0, 104.0, 99.0, 102.0, 98.0]], 0.8892404831692783),
    ];
    let first = one_way_anova(&fixed[0].0).map_err(|e| e.to_string())?;
    ensure((first.f - 1.5).abs() < 1e-12, || format!("F = {}", first.f))?;
    let mut worst: f64 = 0.0;
    for (groups, p) in &fixed {
        worst = worst.max((one_way_anova(groups).map_err(|e| e.to_string())?.p - p).abs());
    }
    ensure(worst <= 1e-6, || format!("p deviation {worst:e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let (m1, m2) = (Normal::new(345.0, 30.0).unwrap(), Normal::new(276.0, 24.0).unwrap());
    let g1: Vec<f64> = (0..15).map(|_| m1.sample(&mut rng)).collect();
    let g2: Vec<f64> = (0..15).map(|_| m2.sample(&mut rng)).collect();
    let gap = one_way_anova(&[g1, g2]).map_err(|e| e.to_string())?;
    ensure(gap.p < 0.001, || format!("20% gap p = {}", gap.p))?;
    Ok(format!("F = 1.5; 5 p values within {worst:.1e}; 20% gap p = {:.2e}", gap.p))
}

fn convergence() -> Outcome {
    let curve = |at: usize, floor: f64, step: f64| -> Vec<f64> {
        (1..=20).map(|i| if i < at { floor + step * (at - i) as f64 } else { floor + (i % 2) as f64 }).collect()
    };
    let c1 = convergence_iteration(&curve(14, 300.0, 12.0), 5.0, 3).map_err(|e| e.to_string())?;
    let c2 = convergence_iteration(&curve(10, 250.0, 9.0), 5.0, 3).map_err(|e| e.to_string())?;
    ensure(c1 == Some(14) && c2 == Some(10), || format!("got {c1:?} and {c2:?}"))?;
    Ok("mode 1 converges at 14, mode 2 at 10 (epsilon 5 s, window 3)".into())
}

fn throughput() -> Outcome {
    let e = engine();
    let clean = read_stream_file(&data("tableI_clean.detstream")).map_err(|e| e.to_string())?;
    let mut rates = Vec::new();
    for workers in [1, 4] {
        let cfg = PipelineConfig { workers, ..Default::default() };
        let reps = 10;
        let start = Instant::now();
        let mut frames = 0;
        for _ in 0..reps {
            let s = Session::new(&e, VecProvider::new(clean.clone()), &cfg).map_err(|e| e.to_string())?;
            let sub = s.subscribe();
            let running = s.spawn();
            frames += sub.filter(|d| matches!(d, Delivery::Frame(_))).count();
            running.join();
        }
        let fps = frames as f64 / start.elapsed().as_secs_f64();
        ensure(fps >= 300.0, || format!("{fps:.0} frames/s with {workers} workers"))?;
        rates.push(format!("{fps:.0} fps with {workers} worker{}", if workers > 1 { "s" } else { "" }));
    }
    Ok(rates.join(", "))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("feature pipeline oracle", feature_oracle),
        ("feature scale invariance", scale_invariance),
        ("classifier gradient check and training", classifier),
        ("smoothing exhaustive oracle", smoothing),
        ("scenario determinism and error taxonomy", scenario),
        ("overlay equivariance", overlay),
        ("one-way ANOVA", anova),
        ("learning-curve convergence", convergence),
        ("replay throughput", throughput),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
