//! Session reports and the statistics used to compare guidance modes:
//! one-way ANOVA, learning-curve aggregation and convergence detection.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{ErrorCategory, EventKind, GuidanceEvent, Scenario, ScenarioState};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("report I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed report: {0}")]
    Parse(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(AnalysisError::InvalidInput(msg.into()))
}

/// Outcome of one guidance session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub scenario_id: String,
    pub mode: String,
    pub completed: bool,
    pub aborted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
    pub frames_processed: u64,
    pub steps_total: usize,
    pub steps_validated: usize,
    pub total_time_s: f64,
    pub step_durations_s: Vec<f64>,
    pub error_counts: BTreeMap<ErrorCategory, u32>,
    pub events: Vec<GuidanceEvent>,
}

impl SessionReport {
    /// Summarizes a session. Times come from frame timestamps, starting at `first_ms`.
    pub fn from_state(
        scenario: &Scenario,
        state: &ScenarioState,
        mode: &str,
        frames_processed: u64,
        first_ms: Option<u64>,
    ) -> Self {
        let mut error_counts: BTreeMap<ErrorCategory, u32> = ErrorCategory::ALL.iter().map(|c| (*c, 0)).collect();
        for cat in state.events().iter().filter_map(GuidanceEvent::error_category) {
            *error_counts.entry(cat).or_default() += 1;
        }
        let last = state.last_timestamp_ms();
        let end_ms = state
            .events()
            .iter()
            .rev()
            .find(|e| e.kind() == EventKind::ScenarioCompleted)
            .map_or(last, |e| e.timestamp_ms());
        let total_time_s = first_ms.map_or(0.0, |f| end_ms.saturating_sub(f) as f64 / 1000.0);
        let step_durations_s = (0..scenario.steps.len())
            .map(|i| match (state.step_started_ms(i), state.step_ended_ms(i)) {
                (Some(s), Some(e)) => e.saturating_sub(s) as f64 / 1000.0,
                (Some(s), None) => last.saturating_sub(s) as f64 / 1000.0,
                _ => 0.0,
            })
            .collect();
        Self {
            scenario_id: scenario.id.clone(),
            mode: mode.to_owned(),
            completed: state.is_completed(),
            aborted: false,
            abort_reason: None,
            frames_processed,
            steps_total: scenario.steps.len(),
            steps_validated: state.validated_count(),
            total_time_s,
            step_durations_s,
            error_counts,
            events: state.events().to_vec(),
        }
    }

    pub fn error_total(&self) -> u32 {
        self.error_counts.values().sum()
    }

    /// Categories with a nonzero count.
    pub fn nonzero_errors(&self) -> BTreeMap<ErrorCategory, u32> {
        self.error_counts.iter().filter(|(_, n)| **n > 0).map(|(c, n)| (*c, *n)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Column order of the combined `report.sessions` table.
pub const SESSIONS_HEADER: &str = "session\tscenario\tmode\tcompleted\taborted\tsteps_validated\tsteps_total\ttotal_time_s\terrors_total\tWrongTool\tMissingTool\tWrongAction\tPrematureAdvance\tWrongPosition";

/// Tab-separated table with one row per named report.
pub fn sessions_table<'a>(reports: impl IntoIterator<Item = (&'a str, &'a SessionReport)>) -> String {
    let mut out = String::from(SESSIONS_HEADER);
    out.push('\n');
    for (name, r) in reports {
        let _ = write!(
            out,
            "{name}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.scenario_id,
            r.mode,
            r.completed,
            r.aborted,
            r.steps_validated,
            r.steps_total,
            r.total_time_s,
            r.error_total()
        );
        for c in ErrorCategory::ALL {
            let _ = write!(out, "\t{}", r.error_counts.get(&c).copied().unwrap_or(0));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnovaResult {
    pub f: f64,
    pub p: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub ss_between: f64,
    pub ss_within: f64,
    pub group_means: Vec<f64>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn one_way_anova(groups: &[Vec<f64>]) -> Result<AnovaResult> {
    if groups.len() < 2 {
        return invalid("ANOVA needs at least two groups");
    }
    if let Some(g) = groups.iter().position(|g| g.len() < 2) {
        return invalid(format!("group {g} has fewer than two observations"));
    }
    if groups.iter().flatten().any(|v| !v.is_finite()) {
        return invalid("observations must be finite");
    }
    let n: usize = groups.iter().map(Vec::len).sum();
    let k = groups.len();
    let group_means: Vec<f64> = groups.iter().map(|g| mean(g)).collect();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let ss_between: f64 = groups.iter().zip(&group_means).map(|(g, m)| g.len() as f64 * (m - grand).powi(2)).sum();
    let ss_within: f64 = groups
        .iter()
        .zip(&group_means)
        .map(|(g, m)| g.iter().map(|v| (v - m).powi(2)).sum::<f64>())
        .sum();
    if !(ss_within > 0.0) {
        return invalid("within-group variance is zero");
    }
    let df_between = k - 1;
    let df_within = n - k;
    let f = (ss_between / df_between as f64) / (ss_within / df_within as f64);
    let p = f_survival(f, df_between as f64, df_within as f64);
    Ok(AnovaResult { f, p, df_between, df_within, ss_between, ss_within, group_means })
}

/// `P(X > f)` for `X ~ F(d1, d2)`.
pub fn f_survival(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    regularized_incomplete_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))
}

/// Lanczos approximation (g = 7, nine coefficients).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

const CF_TOLERANCE: f64 = 1e-10;
const CF_MAX_ITER: usize = 10_000;
const CF_TINY: f64 = 1e-300;

/// Continued fraction for the incomplete beta function, modified Lentz.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_TOLERANCE {
            break;
        }
    }
    h
}

/// `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0, "beta parameters must be positive");
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    /// 1-based repetition number.
    pub iteration: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

/// Per-iteration completion-time statistics for each mode.
///
/// Each inner list holds one participant's repetitions in order; reports are
/// grouped by their `mode` tag.
pub fn aggregate_learning_curve(series: &[Vec<SessionReport>]) -> Result<BTreeMap<String, Vec<CurvePoint>>> {
    let Some(first) = series.iter().flatten().next() else {
        return invalid("no reports given");
    };
    if let Some(other) = series.iter().flatten().find(|r| r.scenario_id != first.scenario_id) {
        return invalid(format!("mixed scenarios {} and {}", first.scenario_id, other.scenario_id));
    }
    let mut buckets: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for participant in series {
        for (i, r) in participant.iter().enumerate() {
            let mode = buckets.entry(r.mode.clone()).or_default();
            if mode.len() <= i {
                mode.resize(i + 1, Vec::new());
            }
            mode[i].push(r.total_time_s);
        }
    }
    Ok(buckets
        .into_iter()
        .map(|(mode, iterations)| {
            let points = iterations
                .into_iter()
                .enumerate()
                .filter(|(_, v)| !v.is_empty())
                .map(|(i, v)| CurvePoint {
                    iteration: i + 1,
                    mean: mean(&v),
                    min: v.iter().copied().fold(f64::INFINITY, f64::min),
                    max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    n: v.len(),
                })
                .collect();
            (mode, points)
        })
        .collect())
}

/// First 1-based iteration `i` whose window `curve[i ..= i + window - 1]`
/// spans less than `epsilon`, or `None` if the curve never settles.
pub fn convergence_iteration(curve: &[f64], epsilon: f64, window: usize) -> Result<Option<usize>> {
    if window < 2 {
        return invalid("convergence window must be at least 2");
    }
    if curve.len() < window + 1 {
        return invalid(format!("curve of length {} is shorter than window + 1 = {}", curve.len(), window + 1));
    }
    Ok(curve
        .windows(window)
        .position(|w| {
            let hi = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
            hi - lo < epsilon
        })
        .map(|i| i + 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_group_example() {
        let r = one_way_anova(&[vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 4.0]]).unwrap();
        assert!((r.f - 1.5).abs() < 1e-12);
        assert_eq!((r.df_between, r.df_within), (1, 4));
        assert!((r.p - 0.2879).abs() < 1e-4);
        assert_eq!(r.group_means, vec![2.0, 3.0]);
    }

    #[test]
    fn equal_means_give_f_zero() {
        let r = one_way_anova(&[vec![1.0, 2.0, 3.0], vec![3.0, 2.0, 1.0], vec![0.0, 4.0]]).unwrap();
        assert_eq!(r.f, 0.0);
        assert_eq!(r.p, 1.0);
    }

    #[test]
    fn anova_input_errors() {
        assert!(one_way_anova(&[vec![1.0, 2.0]]).is_err());
        assert!(one_way_anova(&[vec![1.0, 2.0], vec![3.0]]).is_err());
        assert!(one_way_anova(&[vec![1.0, 1.0], vec![3.0, 3.0]]).is_err());
        assert!(one_way_anova(&[vec![1.0, f64::NAN], vec![3.0, 4.0]]).is_err());
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(1, 1) = x, I_x(a, 1) = x^a, I_x(1, b) = 1 - (1 - x)^b
        for &x in &[0.1, 0.37, 0.5, 0.93] {
            assert!((regularized_incomplete_beta(1.0, 1.0, x) - x).abs() < 1e-10);
            assert!((regularized_incomplete_beta(2.5, 1.0, x) - x.powf(2.5)).abs() < 1e-10);
            assert!((regularized_incomplete_beta(1.0, 3.0, x) - (1.0 - (1.0 - x).powi(3))).abs() < 1e-10);
        }
        assert_eq!(regularized_incomplete_beta(2.0, 3.0, 0.0), 0.0);
        assert_eq!(regularized_incomplete_beta(2.0, 3.0, 1.0), 1.0);
    }

    #[test]
    fn convergence_examples() {
        assert_eq!(convergence_iteration(&[60.0; 6], 5.0, 3).unwrap(), Some(1));
        let falling: Vec<f64> = (0..20).map(|i| 400.0 - 10.0 * i as f64).collect();
        assert_eq!(convergence_iteration(&falling, 5.0, 3).unwrap(), None);
        assert!(convergence_iteration(&[1.0, 2.0, 3.0], 5.0, 1).is_err());
        assert!(convergence_iteration(&[1.0, 2.0, 3.0], 5.0, 3).is_err());
    }

    fn report(mode: &str, t: f64) -> SessionReport {
        SessionReport {
            scenario_id: "tableI".into(),
            mode: mode.into(),
            completed: true,
            aborted: false,
            abort_reason: None,
            frames_processed: 0,
            steps_total: 9,
            steps_validated: 9,
            total_time_s: t,
            step_durations_s: vec![],
            error_counts: ErrorCategory::ALL.iter().map(|c| (*c, 0)).collect(),
            events: vec![],
        }
    }

    #[test]
    fn flat_learning_curve() {
        let series: Vec<Vec<SessionReport>> = (0..3).map(|_| (0..5).map(|_| report("mode2", 120.0)).collect()).collect();
        let curves = aggregate_learning_curve(&series).unwrap();
        let c = &curves["mode2"];
        assert_eq!(c.len(), 5);
        assert!(c.iter().all(|p| p.mean == 120.0 && p.min == 120.0 && p.max == 120.0 && p.n == 3));
    }

    #[test]
    fn learning_curve_errors() {
        assert!(aggregate_learning_curve(&[]).is_err());
        let mut other = report("mode1", 1.0);
        other.scenario_id = "other".into();
        assert!(aggregate_learning_curve(&[vec![report("mode1", 1.0), other]]).is_err());
    }

    #[test]
    fn sessions_table_columns() {
        let mut r = report("mode1", 301.5);
        r.error_counts.insert(ErrorCategory::WrongTool, 2);
        let t = sessions_table([("p01", &r)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], SESSIONS_HEADER);
        assert_eq!(lines[1], "p01\ttableI\tmode1\ttrue\tfalse\t9\t9\t301.5\t2\t2\t0\t0\t0\t0");
    }
}
