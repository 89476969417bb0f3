use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::trainer::TrainConfig;
use crate::worlds::{Environment, Grid2D, Grid2DConfig, World3D, World3DConfig, WorldError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Grid2d,
    World3d,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub kind: EnvKind,
    /// Seed of the evaluation environment.
    pub seed: u64,
    pub grid2d: Grid2DConfig,
    pub world3d: World3DConfig,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self { kind: EnvKind::World3d, seed: 0, grid2d: Grid2DConfig::default(), world3d: World3DConfig::default() }
    }
}

impl EnvSection {
    pub fn build(&self) -> Result<Box<dyn Environment>, WorldError> {
        Ok(match self.kind {
            EnvKind::Grid2d => Box::new(Grid2D::new(self.grid2d.clone())?),
            EnvKind::World3d => Box::new(World3D::new(self.world3d.clone())?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Frames per attention-frequency window.
    pub window: usize,
    pub total_frames: usize,
    pub n_shot: Vec<usize>,
    /// Resampled task splits per n_shot.
    pub splits: usize,
    pub views_per_class: usize,
    /// Seeds the evaluated policy's action sampling and the task splits.
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { window: 1000, total_frames: 30_000, n_shot: vec![1, 3, 5, 7], splits: 20, views_per_class: 8, seed: 0 }
    }
}

/// File names are relative to `run_dir`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    pub run_dir: PathBuf,
    pub checkpoint: String,
    pub metrics: String,
    pub features: String,
}

impl Default for IoSection {
    fn default() -> Self {
        Self {
            run_dir: PathBuf::from("runs/default"),
            checkpoint: "checkpoint.bin".into(),
            metrics: "metrics.csv".into(),
            features: "features.csv".into(),
        }
    }
}

impl IoSection {
    pub fn checkpoint_path(&self) -> PathBuf {
        self.run_dir.join(&self.checkpoint)
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.run_dir.join(&self.metrics)
    }

    pub fn features_path(&self) -> PathBuf {
        self.run_dir.join(&self.features)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub env: EnvSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub io: IoSection,
}

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("override {key}: {message}")]
    Override { key: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

/// Parse a config document, then apply `key=value` overrides by dotted path.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<ExperimentConfig, ConfigError> {
    let (text, name) = match path {
        Some(p) => (std::fs::read_to_string(p).map_err(|source| ConfigError::Read { path: p.to_path_buf(), source })?, p.display().to_string()),
        None => (String::new(), "<defaults>".to_string()),
    };
    // deserializing the text itself keeps line numbers in the error
    toml::from_str::<ExperimentConfig>(&text).map_err(|e| ConfigError::Parse { path: name.clone(), message: e.to_string() })?;
    let mut doc: toml::Table = toml::from_str(&text).expect("parsed above");
    for (key, raw) in overrides {
        set_dotted(&mut doc, key, parse_value(raw)).map_err(|message| ConfigError::Override { key: key.clone(), message })?;
    }
    let cfg: ExperimentConfig =
        toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| ConfigError::Parse { path: name, message: e.to_string() })?;
    cfg.validate()?;
    Ok(cfg)
}

/// TOML literal if it parses as one, else a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}")).ok().and_then(|mut t| t.remove("v")).unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_dotted(doc: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), String> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err("empty path segment".into());
    }
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut table = doc;
    for p in parents {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| format!("{p} is not a table"))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.train.validate().map_err(|e| inv(&e))?;
        self.env.grid2d.validate().map_err(|e| inv(&e))?;
        self.env.world3d.validate().map_err(|e| inv(&e))?;
        if self.eval.window == 0 || self.eval.total_frames < self.eval.window {
            return Err(ConfigError::Invalid("eval.total_frames must cover at least one eval.window (≥ 1)".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
