//! Session configuration read from a TOML file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uwintent_core::head_dtw::TemplateConfig;
use uwintent_core::mapper::Scheme;
use uwintent_core::mfcc::MfccConfig;
use uwintent_core::nn::TrainConfig;
use uwintent_core::pipeline::PipelineConfig;

use crate::error::{AppError, AppResult};

/// Everything a session needs. Every field may be omitted from the file;
/// relative paths are resolved against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub scheme: Scheme,
    pub seed: u64,
    /// Head-motion template artifact.
    pub templates: Option<PathBuf>,
    /// Throat-vibration scale model artifact.
    pub model: Option<PathBuf>,
    pub bind: String,
    /// Telemetry port; 0 picks a free one.
    pub port: u16,
    /// Optional directory of static dashboard assets served at `/`.
    pub static_dir: Option<PathBuf>,
    /// Stream seconds per wall-clock second in live sessions.
    pub speed: f64,
    /// Wall-clock period of the session loop, seconds.
    pub tick_s: f64,
    /// Stream-time spacing of `state` telemetry, seconds.
    pub state_interval_s: f64,
    /// Stream-time spacing of `health` telemetry, seconds.
    pub health_interval_s: f64,
    /// Telemetry messages buffered per client before the oldest are dropped.
    pub telemetry_capacity: usize,
    pub pipeline: PipelineConfig,
    pub mfcc: MfccConfig,
    pub train: TrainConfig,
    #[serde(rename = "template_build")]
    pub template_build: TemplateConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Multimodal,
            seed: 7,
            templates: None,
            model: None,
            bind: "127.0.0.1".into(),
            port: 8765,
            static_dir: None,
            speed: 1.0,
            tick_s: 0.02,
            state_interval_s: 0.05,
            health_interval_s: 1.0,
            telemetry_capacity: 1024,
            pipeline: PipelineConfig::default(),
            mfcc: MfccConfig::default(),
            train: TrainConfig::default(),
            template_build: TemplateConfig::default(),
        }
    }
}

impl SessionConfig {
    pub fn from_toml(text: &str, base: &Path) -> AppResult<Self> {
        let mut cfg: SessionConfig = toml::from_str(text).map_err(|e| AppError::data(format!("config: {e}")))?;
        for p in [&mut cfg.templates, &mut cfg.model, &mut cfg.static_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| AppError::data(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new("")))
    }

    /// The pipeline settings with the session's scheme applied.
    pub fn pipeline_for(&self, scheme: Scheme) -> PipelineConfig {
        PipelineConfig {
            scheme,
            ..self.pipeline.clone()
        }
    }

    pub fn validate(&self) -> AppResult<()> {
        self.pipeline.validate()?;
        for (name, v) in [
            ("speed", self.speed),
            ("tick_s", self.tick_s),
            ("state_interval_s", self.state_interval_s),
            ("health_interval_s", self.health_interval_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(AppError::data(format!("config: {name} must be positive")));
            }
        }
        if self.telemetry_capacity == 0 {
            return Err(AppError::data("config: telemetry_capacity must be at least 1"));
        }
        Ok(())
    }
}
