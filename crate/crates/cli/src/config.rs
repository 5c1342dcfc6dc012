use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use otgan::training::TrainConfig;

pub const OUT_DIR_ENV: &str = "OTGAN_OUT_DIR";
const FALLBACK_OUT_DIR: &str = "otgan-out";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    /// OT-GAN and baseline GAN with a shared seed and freeze schedule.
    Consistency,
    /// The configured mode alone.
    Single,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Falls back to `$OTGAN_OUT_DIR`, then `./otgan-out`.
    pub output_dir: Option<PathBuf>,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::Consistency,
            output_dir: None,
            train: TrainConfig::default(),
        }
    }
}

/// Why a config could not be used.
#[derive(Debug)]
pub enum ConfigError {
    Read(PathBuf, std::io::Error),
    /// Parse failure with its 1-based line and column.
    Parse { path: PathBuf, line: usize, column: usize, message: String },
    Invalid(String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Read(p, e) => write!(f, "{}: {e}", p.display()),
            ConfigError::Parse { path, line, column, message } => {
                write!(f, "{}:{line}:{column}: {message}", path.display())
            }
            ConfigError::Invalid(m) => write!(f, "invalid config: {m}"),
        }
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read(path.to_path_buf(), e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: strip_position(&e.to_string()),
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn resolved_output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(FALLBACK_OUT_DIR))
    }
}

// serde_json appends " at line L column C"; the diagnostic prints it up front.
fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let d = ExperimentConfig::default();
        let text = serde_json::to_string_pretty(&d).unwrap();
        assert_eq!(ExperimentConfig::parse(&text, Path::new("d.json")).unwrap(), d);
    }

    #[test]
    fn unknown_key_reports_line() {
        let text = "{\n  \"train\": {\n    \"batch_sise\": 3\n  }\n}";
        match ExperimentConfig::parse(text, Path::new("c.json")) {
            Err(ConfigError::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("batch_sise"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn partial_config_fills_defaults() {
        let c = ExperimentConfig::parse(r#"{"train": {"seed": 9, "sinkhorn": {"epsilon": 0.01}}}"#, Path::new("p"))
            .unwrap();
        assert_eq!(c.train.seed, 9);
        assert_eq!(c.train.sinkhorn.epsilon, 0.01);
        assert_eq!(c.train.sinkhorn.max_iters, 500);
        assert_eq!(c.train.batch_size, 50);
    }
}
