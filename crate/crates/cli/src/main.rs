//! `stepguide` command-line entry point.

mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;
use stepguide::action_classifier::{ActionModel, Dataset, SyntheticDatasetSpec};
use stepguide::analysis::{one_way_anova, sessions_table, SessionReport};
use stepguide::detection::{
    generate_synthetic, read_stream_file, record_stream, FrameDetections, ReplayProvider, SyntheticMotionSpec,
    VecProvider,
};
use stepguide::live::LiveServer;
use stepguide::runtime::{events_jsonl, Engine, PipelineConfig, Session};
use stepguide::vocab::ActionLabel;

use config::Settings;

/// Workflow guidance from object and skeleton detections.
#[derive(Parser)]
#[command(name = "stepguide", version)]
struct Cli {
    /// Settings file; see crates/cli/stepguide.toml for every key and its default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario over a recorded or generated detection stream.
    Run(RunArgs),
    /// Train an action model from a directory of labelled streams.
    Train(TrainArgs),
    /// Report a model's accuracy on a directory of labelled streams.
    Eval(EvalArgs),
    /// One-way ANOVA over session reports grouped by mode.
    Anova(AnovaArgs),
    /// Generate synthetic detection streams.
    Gen(GenArgs),
    /// Serve a live session to operator consoles over WebSocket.
    Serve(ServeArgs),
}

#[derive(Args)]
struct EngineArgs {
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Anchor rules for AR overlays.
    #[arg(long)]
    rules: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    queue_capacity: Option<usize>,
    #[arg(long)]
    score_threshold: Option<f64>,
    /// Action smoothing window in frames.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    object_window: Option<usize>,
    #[arg(long)]
    fps_cap: Option<f64>,
    /// Mode tag written into the report.
    #[arg(long)]
    mode: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    engine: EngineArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Recorded `.detstream` input.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    stream: Option<PathBuf>,
    /// Synthetic motion spec (JSON) to generate the input from.
    #[arg(long)]
    synthetic: Option<PathBuf>,
    /// Write the session report (JSON) here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the event log (JSON lines) here.
    #[arg(long)]
    events: Option<PathBuf>,
    /// Pace frames at the fps cap and drop frames for slow consumers.
    #[arg(long)]
    live: bool,
    /// Let consoles watch the session; takes an address, default from `serve.addr`. Implies --live.
    #[arg(long, num_args = 0..=1)]
    serve: Option<Option<String>>,
}

#[derive(Args)]
struct TrainingArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Hidden layer sizes, e.g. `64,32`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    hidden: Option<Vec<usize>>,
    /// Fraction of windows held out for the reported accuracy.
    #[arg(long)]
    holdout: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of `<action>-<n>.detstream` files.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    training: TrainingArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Directory of `<action>-<n>.detstream` files.
    #[arg(long)]
    data: PathBuf,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Metric {
    /// Total completion time in seconds.
    Time,
    /// Errors raised per session.
    Errors,
}

#[derive(Args)]
struct AnovaArgs {
    /// Session report files.
    #[arg(required = true, num_args = 2..)]
    reports: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "time")]
    metric: Metric,
    /// Also write the combined sessions table here.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "source")]
struct GenSource {
    /// Synthetic motion spec (JSON).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Use the preset motion of this action.
    #[arg(long)]
    action: Option<String>,
    /// Write a training set into this directory, one file per clip.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    source: GenSource,
    /// Output file; standard output if omitted. Not used with --dataset.
    #[arg(long, conflicts_with = "dataset")]
    out: Option<PathBuf>,
    /// Actions for --dataset, comma separated.
    #[arg(long, value_delimiter = ',', requires = "dataset")]
    actions: Vec<String>,
    /// Clips per action for --dataset.
    #[arg(long, default_value_t = 8, requires = "dataset")]
    clips: usize,
    #[arg(long, default_value_t = 60)]
    frames: u32,
    #[arg(long, default_value_t = 0.002)]
    noise: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    engine: EngineArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Listen address, e.g. 127.0.0.1:8765.
    #[arg(long)]
    addr: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise: Option<f64>,
}

/// Marks errors caused by missing or unreadable inputs (exit status 2).
#[derive(Debug)]
struct BadInput(String);

impl fmt::Display for BadInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for BadInput {}

fn input<T, E>(r: std::result::Result<T, E>, what: impl FnOnce() -> String) -> Result<T>
where
    E: Into<anyhow::Error>,
{
    r.map_err(Into::into).with_context(|| BadInput(what()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            if e.downcast_ref::<BadInput>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

/// The error chain on one line. Library errors already quote their source, so
/// links whose text the line contains are skipped.
fn describe(e: &anyhow::Error) -> String {
    let mut line = String::new();
    for link in e.chain() {
        let text = link.to_string();
        if line.contains(&text) {
            continue;
        }
        if !line.is_empty() {
            line.push_str(": ");
        }
        line.push_str(&text);
    }
    line
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    let settings = match &cli.config {
        Some(p) => input(Settings::load(p), || "loading settings".into())?,
        None => Settings::default(),
    };
    match cli.command {
        Command::Run(a) => cmd_run(&settings, a),
        Command::Train(a) => cmd_train(&settings, a),
        Command::Eval(a) => cmd_eval(&settings, a),
        Command::Anova(a) => cmd_anova(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Serve(a) => cmd_serve(&settings, a),
    }
}

fn pick(flag: Option<PathBuf>, setting: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    match flag.or_else(|| setting.clone()) {
        Some(p) => Ok(p),
        None => Err(anyhow::Error::new(BadInput(format!("no {name} given (flag --{name} or paths.{name})")))),
    }
}

fn load_engine(settings: &Settings, a: EngineArgs) -> Result<Engine> {
    let scenario = pick(a.scenario, &settings.paths.scenario, "scenario")?;
    let model = pick(a.model, &settings.paths.model, "model")?;
    let rules = a.rules.or_else(|| settings.paths.rules.clone());
    input(Engine::load(&scenario, &model, rules.as_deref()), || "loading session inputs".into())
}

fn pipeline_config(settings: &Settings, a: PipelineArgs) -> Result<PipelineConfig> {
    let mut c = settings.pipeline();
    c.workers = a.workers.unwrap_or(c.workers);
    c.queue_capacity = a.queue_capacity.unwrap_or(c.queue_capacity);
    c.score_threshold = a.score_threshold.unwrap_or(c.score_threshold);
    c.action_window = a.window.unwrap_or(c.action_window);
    c.object_window = a.object_window.unwrap_or(c.object_window);
    c.fps_cap = a.fps_cap.unwrap_or(c.fps_cap);
    c.mode = a.mode.unwrap_or(c.mode);
    input(c.validate(), || "checking pipeline settings".into())?;
    Ok(c)
}

fn write_output(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_spec(path: &Path) -> Result<SyntheticMotionSpec> {
    let text = input(fs::read_to_string(path), || format!("reading {}", path.display()))?;
    input(serde_json::from_str(&text), || format!("parsing spec {}", path.display()))
}

fn cmd_run(settings: &Settings, a: RunArgs) -> Result<ExitCode> {
    let engine = load_engine(settings, a.engine)?;
    let mut config = pipeline_config(settings, a.pipeline)?;
    config.live = a.live || a.serve.is_some();

    let session = if let Some(spec) = &a.synthetic {
        let frames = input(generate_synthetic(&read_spec(spec)?), || format!("generating from {}", spec.display()))?;
        Session::new(&engine, VecProvider::new(frames), &config)?
    } else {
        let path = a.stream.as_ref().expect("clap requires --stream or --synthetic");
        let provider = input(ReplayProvider::open(path), || format!("opening {}", path.display()))?;
        Session::new(&engine, provider, &config)?
    };

    let server = match a.serve {
        Some(addr) => {
            let addr = addr.unwrap_or_else(|| settings.serve.addr.clone());
            let s = LiveServer::broadcast(engine.clone(), session.hub(), &addr)
                .with_context(|| format!("listening on {addr}"))?;
            eprintln!("watching on ws://{}", s.local_addr());
            Some(s)
        }
        None => None,
    };
    let report = session.run();
    if let Some(s) = server {
        s.shutdown();
    }

    print_summary(&report);
    if let Some(p) = &a.report {
        write_output(p, &(report.to_json() + "\n"))?;
    }
    if let Some(p) = &a.events {
        write_output(p, &events_jsonl(&report.events))?;
    }
    if let Some(reason) = &report.abort_reason {
        eprintln!("error: session aborted: {reason}");
    }
    Ok(if report.completed && !report.aborted { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn print_summary(r: &SessionReport) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "scenario {}  mode {}  frames {}", r.scenario_id, r.mode, r.frames_processed);
    let _ = writeln!(
        out,
        "steps {}/{}  completed {}  aborted {}  time {:.3} s",
        r.steps_validated, r.steps_total, r.completed, r.aborted, r.total_time_s
    );
    let errors: Vec<String> = r.error_counts.iter().map(|(c, n)| format!("{c:?} {n}")).collect();
    let _ = writeln!(out, "errors {}", errors.join("  "));
}

/// `<action>-<n>.detstream` or `<action>.detstream`, sorted by file name.
fn labelled_streams(dir: &Path) -> Result<Vec<(ActionLabel, PathBuf)>> {
    let entries = input(fs::read_dir(dir), || format!("reading {}", dir.display()))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("detstream") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_owned();
        let action = match stem.rsplit_once('-') {
            Some((a, n)) if !a.is_empty() && n.chars().all(|c| c.is_ascii_digit()) => a.to_owned(),
            _ => stem,
        };
        files.push((ActionLabel::new(action), path));
    }
    files.sort_by(|a, b| a.1.cmp(&b.1));
    if files.is_empty() {
        return Err(anyhow::Error::new(BadInput(format!("no .detstream files in {}", dir.display()))));
    }
    Ok(files)
}

fn load_dataset(labels: Vec<ActionLabel>, files: &[(ActionLabel, PathBuf)]) -> Result<Dataset> {
    let mut ds = Dataset::new(labels);
    for (action, path) in files {
        let frames: Vec<FrameDetections> = input(read_stream_file(path), || format!("reading {}", path.display()))?;
        let n = ds.push_stream(&frames, action).with_context(|| format!("{}", path.display()))?;
        info!("{}: {n} windows of {action}", path.display());
    }
    Ok(ds)
}

#[derive(Serialize)]
struct TrainSummary {
    labels: Vec<ActionLabel>,
    windows: usize,
    train: usize,
    held_out: usize,
    held_out_accuracy: Option<f64>,
    final_loss: f64,
}

fn cmd_train(settings: &Settings, a: TrainArgs) -> Result<ExitCode> {
    let mut t = settings.training.clone();
    let f = a.training;
    t.epochs = f.epochs.unwrap_or(t.epochs);
    t.learning_rate = f.learning_rate.unwrap_or(t.learning_rate);
    t.batch_size = f.batch_size.unwrap_or(t.batch_size);
    t.seed = f.seed.unwrap_or(t.seed);
    t.holdout = f.holdout.unwrap_or(t.holdout);
    if let Some(h) = f.hidden {
        t.hidden = [h[0], h[1]];
    }
    if !(0.0..1.0).contains(&t.holdout) {
        bail!("holdout must lie in [0, 1)");
    }

    let files = labelled_streams(&a.data)?;
    let labels: Vec<ActionLabel> = files.iter().map(|(l, _)| l.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let data = load_dataset(labels.clone(), &files)?;
    let (train, held_out) = data.split(1.0 - t.holdout, t.seed);
    let (model, history) = ActionModel::train_with_history(&train, &t.config())?;
    model.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let summary = TrainSummary {
        labels,
        windows: data.len(),
        train: train.len(),
        held_out: held_out.len(),
        held_out_accuracy: if held_out.is_empty() { None } else { Some(model.accuracy(&held_out)?) },
        final_loss: history.last().copied().unwrap_or(f64::NAN),
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct EvalSummary {
    labels: Vec<ActionLabel>,
    /// Rows are true classes, columns predictions.
    confusion: Vec<Vec<usize>>,
    accuracy: f64,
    class_accuracy: BTreeMap<ActionLabel, Option<f64>>,
}

fn cmd_eval(settings: &Settings, a: EvalArgs) -> Result<ExitCode> {
    let path = pick(a.model, &settings.paths.model, "model")?;
    let model = input(ActionModel::load(&path), || format!("loading {}", path.display()))?;
    let files = labelled_streams(&a.data)?;
    if let Some((l, p)) = files.iter().find(|(l, _)| !model.labels.contains(l)) {
        return Err(anyhow::Error::new(BadInput(format!("{} is labelled {l}, which the model does not know", p.display()))));
    }
    let data = load_dataset(model.labels.clone(), &files)?;
    let c = model.confusion(&data)?;
    let summary = EvalSummary {
        labels: c.labels.clone(),
        confusion: c.counts.clone(),
        accuracy: c.accuracy(),
        class_accuracy: (0..c.labels.len()).map(|i| (c.labels[i].clone(), c.class_accuracy(i))).collect(),
    };
    if a.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
        return Ok(ExitCode::SUCCESS);
    }
    let width = c.labels.iter().map(|l| l.as_str().len()).max().unwrap_or(4).max(6);
    let mut out = std::io::stdout().lock();
    write!(out, "{:width$}", "true\\pred")?;
    for l in &c.labels {
        write!(out, " {:>width$}", l.as_str())?;
    }
    writeln!(out, " {:>8}", "recall")?;
    for (i, row) in c.counts.iter().enumerate() {
        write!(out, "{:width$}", c.labels[i].as_str())?;
        for n in row {
            write!(out, " {n:>width$}")?;
        }
        match c.class_accuracy(i) {
            Some(acc) => writeln!(out, " {acc:>8.4}")?,
            None => writeln!(out, " {:>8}", "-")?,
        }
    }
    writeln!(out, "accuracy {:.4} over {} windows", c.accuracy(), c.total())?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct AnovaSummary {
    metric: &'static str,
    modes: Vec<String>,
    sizes: Vec<usize>,
    group_means: Vec<f64>,
    f: f64,
    p: f64,
    df_between: usize,
    df_within: usize,
}

fn cmd_anova(a: AnovaArgs) -> Result<ExitCode> {
    let mut reports = Vec::new();
    for p in &a.reports {
        let r = input(SessionReport::load(p), || format!("reading report {}", p.display()))?;
        let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or("session").to_owned();
        reports.push((name, r));
    }
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (_, r) in &reports {
        let v = match a.metric {
            Metric::Time => r.total_time_s,
            Metric::Errors => r.error_total() as f64,
        };
        groups.entry(r.mode.clone()).or_default().push(v);
    }
    if let Some(p) = &a.table {
        write_output(p, &sessions_table(reports.iter().map(|(n, r)| (n.as_str(), r))))?;
    }
    let values: Vec<Vec<f64>> = groups.values().cloned().collect();
    let result = one_way_anova(&values).context("comparing modes")?;
    let summary = AnovaSummary {
        metric: match a.metric {
            Metric::Time => "time",
            Metric::Errors => "errors",
        },
        modes: groups.keys().cloned().collect(),
        sizes: values.iter().map(Vec::len).collect(),
        group_means: result.group_means,
        f: result.f,
        p: result.p,
        df_between: result.df_between,
        df_within: result.df_within,
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(ExitCode::SUCCESS)
}

fn write_stream(out: Option<&Path>, frames: &[FrameDetections]) -> Result<()> {
    match out {
        Some(p) => {
            let file = fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
            let mut w = std::io::BufWriter::new(file);
            record_stream(frames, &mut w)?;
            w.flush()?;
        }
        None => record_stream(frames, std::io::stdout().lock())?,
    }
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Result<ExitCode> {
    if let Some(dir) = &a.source.dataset {
        if a.actions.is_empty() {
            bail!("--dataset needs --actions");
        }
        let actions: Vec<&str> = a.actions.iter().map(String::as_str).collect();
        let spec = SyntheticDatasetSpec {
            clips: a.clips,
            clip_frames: a.frames,
            noise_sigma: a.noise,
            ..SyntheticDatasetSpec::new(&actions, a.seed)
        };
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let clips = spec.clip_specs()?;
        for (i, clip) in clips.iter().enumerate() {
            let path = dir.join(format!("{}-{:03}.detstream", clip.action, i % a.clips));
            write_stream(Some(&path), &generate_synthetic(clip)?)?;
        }
        eprintln!("wrote {} streams to {}", clips.len(), dir.display());
        return Ok(ExitCode::SUCCESS);
    }
    let spec = match (&a.source.spec, &a.source.action) {
        (Some(p), _) => read_spec(p)?,
        (None, Some(action)) => SyntheticMotionSpec::preset(action, a.frames, a.noise, a.seed)?,
        (None, None) => unreachable!("clap requires a source"),
    };
    write_stream(a.out.as_deref(), &generate_synthetic(&spec)?)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_serve(settings: &Settings, a: ServeArgs) -> Result<ExitCode> {
    let engine = load_engine(settings, a.engine)?;
    let config = pipeline_config(settings, a.pipeline)?;
    let mut ws = settings.serve.clone();
    ws.seed = a.seed.unwrap_or(ws.seed);
    ws.noise_sigma = a.noise.unwrap_or(ws.noise_sigma);
    let addr = a.addr.unwrap_or(ws.addr.clone());
    let server = LiveServer::bind(engine, config, ws.workspace(), &addr).with_context(|| format!("listening on {addr}"))?;
    println!("operator console endpoint ws://{}", server.local_addr());
    server.wait();
    Ok(ExitCode::SUCCESS)
}
