//! Settings file. Every key is optional; missing keys take the defaults
//! documented in `stepguide.toml`. Relative paths are resolved against the
//! directory of the file they appear in.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;
use stepguide::action_classifier::TrainingConfig;
use stepguide::live::WorkspaceConfig;
use stepguide::runtime::PipelineConfig;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub paths: Paths,
    pub pipeline: Pipeline,
    pub smoothing: Smoothing,
    pub training: Training,
    pub serve: Serve,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub scenario: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub rules: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Pipeline {
    pub score_threshold: f64,
    pub queue_capacity: usize,
    pub workers: usize,
    pub fps_cap: f64,
    pub mode: String,
}

impl Default for Pipeline {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self { score_threshold: p.score_threshold, queue_capacity: p.queue_capacity, workers: p.workers, fps_cap: p.fps_cap, mode: p.mode }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Smoothing {
    /// Action label window.
    pub window: usize,
    pub object_window: usize,
}

impl Default for Smoothing {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self { window: p.action_window, object_window: p.object_window }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Training {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub hidden: [usize; 2],
    /// Fraction of windows held out for the reported accuracy.
    pub holdout: f64,
}

impl Default for Training {
    fn default() -> Self {
        let t = TrainingConfig::default();
        Self {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: t.seed,
            hidden: t.hidden,
            holdout: 0.2,
        }
    }
}

impl Training {
    pub fn config(&self) -> TrainingConfig {
        TrainingConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            hidden: self.hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Serve {
    pub addr: String,
    pub width: u32,
    pub height: u32,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for Serve {
    fn default() -> Self {
        let w = WorkspaceConfig::default();
        Self { addr: "127.0.0.1:8765".into(), width: w.width, height: w.height, noise_sigma: w.noise_sigma, seed: w.seed }
    }
}

impl Serve {
    pub fn workspace(&self) -> WorkspaceConfig {
        WorkspaceConfig { width: self.width, height: self.height, noise_sigma: self.noise_sigma, seed: self.seed, ..Default::default() }
    }
}

impl Settings {
    pub fn parse(text: &str, base: &Path) -> anyhow::Result<Self> {
        let mut s: Settings = toml::from_str(text)?;
        for p in [&mut s.paths.scenario, &mut s.paths.model, &mut s.paths.rules].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            score_threshold: self.pipeline.score_threshold,
            action_window: self.smoothing.window,
            object_window: self.smoothing.object_window,
            queue_capacity: self.pipeline.queue_capacity,
            workers: self.pipeline.workers,
            live: false,
            fps_cap: self.pipeline.fps_cap,
            mode: self.pipeline.mode.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_file_matches_builtin_defaults() {
        let text = include_str!("../stepguide.toml");
        let s = Settings::parse(text, Path::new("/base")).unwrap();
        assert_eq!(s.paths.scenario, Some(PathBuf::from("/base/../core/data/tableI.scenario")));
        let without_paths = Settings { paths: Paths::default(), ..s };
        assert_eq!(without_paths, Settings::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Settings::parse("[pipeline]\nwrokers = 2\n", Path::new(".")).is_err());
        assert!(Settings::parse("[smoothing]\nwindow = 4\n", Path::new(".")).unwrap().pipeline().action_window == 4);
    }
}
