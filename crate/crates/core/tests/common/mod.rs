//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use stepguide::action_classifier::{loss_and_gradient, MlpParams};
use stepguide::pose_features::{Keypoint, RawSkeleton};

pub fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

/// Raw 18-slot skeleton: `None` for a missing keypoint, else `[x, y, confidence]`.
pub type RawJoints = [Option<[f64; 3]>; 18];

pub fn to_raw(joints: &RawJoints, frame_id: u64) -> RawSkeleton {
    let mut s = RawSkeleton::empty(frame_id, 0);
    for (slot, j) in s.joints.iter_mut().zip(joints) {
        *slot = j.map(|[x, y, c]| Keypoint::new(x, y, c));
    }
    s
}

/// Five frames around a loose standing pose. Some limb joints drop out after
/// the first frame; neck and hips are always present.
pub fn random_window(rng: &mut impl Rng) -> Vec<RawJoints> {
    let base: Vec<[f64; 2]> = (0..18)
        .map(|_| [rng.gen_range(0.2..0.8), rng.gen_range(0.1..0.9)])
        .collect();
    // Keep the torso long enough that the height is well away from zero.
    let neck = [rng.gen_range(0.4..0.6), rng.gen_range(0.15..0.3)];
    let hip_y = neck[1] + rng.gen_range(0.25..0.45);
    (0..5)
        .map(|f| {
            let mut out: RawJoints = [None; 18];
            for (j, b) in base.iter().enumerate() {
                let missing = f > 0 && ![1, 8, 11].contains(&j) && rng.gen_bool(0.1);
                if !missing {
                    let jitter = 0.03;
                    out[j] = Some([
                        b[0] + rng.gen_range(-jitter..jitter),
                        b[1] + rng.gen_range(-jitter..jitter),
                        rng.gen_range(0.3..1.0),
                    ]);
                }
            }
            out[1] = Some([neck[0] + rng.gen_range(-0.01..0.01), neck[1], 0.9]);
            out[8] = Some([neck[0] - 0.05, hip_y + rng.gen_range(-0.01..0.01), 0.9]);
            out[11] = Some([neck[0] + 0.05, hip_y + rng.gen_range(-0.01..0.01), 0.9]);
            out
        })
        .collect()
}

/// Straight-line evaluation of the feature equations for one window, with
/// missing joints carried forward from the previous frame.
pub fn naive_features(window: &[RawJoints], aspect: f64) -> Vec<f64> {
    // Body joints kept after dropping nose, eyes and ears.
    let keep: Vec<usize> = (1..=13).collect();
    let mut frames: Vec<Vec<Option<(f64, f64)>>> = Vec::new();
    let mut carried: Vec<Option<(f64, f64)>> = vec![None; 18];
    for raw in window {
        for j in 0..18 {
            if let Some([x, y, _]) = raw[j] {
                carried[j] = Some((x * aspect, y));
            }
        }
        let (nx, ny) = carried[1].unwrap();
        let (rx, ry) = carried[8].unwrap();
        let (lx, ly) = carried[11].unwrap();
        let (mx, my) = ((rx + lx) / 2.0, (ry + ly) / 2.0);
        let h = ((nx - mx) * (nx - mx) + (ny - my) * (ny - my)).sqrt();
        frames.push(keep.iter().map(|&j| carried[j].map(|(x, y)| (x / h, y / h))).collect());
    }
    let mut out = Vec::new();
    for f in &frames {
        for p in f {
            let (x, y) = p.unwrap_or((0.0, 0.0));
            out.push(x);
            out.push(y);
        }
    }
    for t in 1..frames.len() {
        for j in 0..keep.len() {
            match (frames[t - 1][j], frames[t][j]) {
                (Some(a), Some(b)) => {
                    out.push(b.0 - a.0);
                    out.push(b.1 - a.1);
                }
                _ => {
                    out.push(0.0);
                    out.push(0.0);
                }
            }
        }
    }
    out
}

/// Most frequent label; among tied labels the one seen last wins.
pub fn brute_mode(window: &[u8]) -> u8 {
    let mut best = (0usize, 0usize, 0u8);
    for &l in window {
        let count = window.iter().filter(|&&x| x == l).count();
        let last = window.iter().rposition(|&x| x == l).unwrap();
        if (count, last) > (best.0, best.1) {
            best = (count, last, l);
        }
    }
    best.2
}

/// `|g - n| / (|g| + |n|)` between the analytic gradient `g` and central differences `n`.
pub fn gradient_check(batch: &[(&[f64], usize)], params: &MlpParams) -> f64 {
    let (_, grad) = loss_and_gradient(batch, params).unwrap();
    let h = 1e-6;
    let (mut diff, mut norm_a, mut norm_n) = (0.0, 0.0, 0.0);
    for (i, a) in grad.values().enumerate() {
        let nudged = |d: f64| {
            let mut p = params.clone();
            *p.values_mut().nth(i).unwrap() += d;
            loss_and_gradient(batch, &p).unwrap().0
        };
        let n = (nudged(h) - nudged(-h)) / (2.0 * h);
        diff += (a - n) * (a - n);
        norm_a += a * a;
        norm_n += n * n;
    }
    diff.sqrt() / (norm_a.sqrt() + norm_n.sqrt())
}
