//! The pipeline config file and its command-line overrides.

use std::path::{Path, PathBuf};

use restlog_core::executor::{AuthConfig, ExtractionConfig};
use restlog_core::fuzz::FuzzConfig;
use restlog_core::ingest::{FieldMap, LogFormat};
use restlog_core::resources::ClassifierConfig;
use restlog_core::slicing::{DEFAULT_DT_MLT_MS, DEFAULT_DT_STW_MS};
use restlog_core::testbed::PlantedFault;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogInput {
    pub path: PathBuf,
    pub format: LogFormat,
}

impl std::str::FromStr for LogInput {
    type Err = String;

    /// `PATH:FORMAT`, e.g. `access.log:nginx`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (path, format) = s
            .rsplit_once(':')
            .ok_or_else(|| format!("expected PATH:FORMAT, got {s:?}"))?;
        Ok(LogInput {
            path: path.into(),
            format: format.parse()?,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    #[default]
    Http,
    /// The bundled gitlite service, reset before every sequence.
    InProcess,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetConfig {
    pub kind: TargetKind,
    pub base_url: Option<String>,
    pub timeout_ms: u64,
    pub auth: AuthConfig,
    pub extraction: ExtractionConfig,
    /// Faults planted in the in-process target.
    pub faults: Vec<PlantedFault>,
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig {
            kind: TargetKind::Http,
            base_url: None,
            timeout_ms: 10_000,
            auth: AuthConfig::default(),
            extraction: ExtractionConfig::default(),
            faults: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub spec: Option<PathBuf>,
    pub logs: Vec<LogInput>,
    pub field_map: FieldMap,
    pub classifier: ClassifierConfig,
    /// Slicing thresholds in seconds.
    pub dt_mlt: u64,
    pub dt_stw: u64,
    /// Parameters whose value identifies the user when the log has no user field.
    pub token_params: Vec<String>,
    pub fuzz: FuzzConfig,
    pub target: TargetConfig,
    /// Stage artifacts live here.
    pub work_dir: PathBuf,
    pub report_dir: PathBuf,
    pub rng_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            spec: None,
            logs: Vec::new(),
            field_map: FieldMap::default(),
            classifier: ClassifierConfig::default(),
            dt_mlt: (DEFAULT_DT_MLT_MS / 1000) as u64,
            dt_stw: (DEFAULT_DT_STW_MS / 1000) as u64,
            token_params: Vec::new(),
            fuzz: FuzzConfig::default(),
            target: TargetConfig::default(),
            work_dir: "restlog-work".into(),
            report_dir: "restlog-report".into(),
            rng_seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Reads a TOML config; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(spec) = cfg.spec.as_mut() {
            rebase(spec);
        }
        for log in &mut cfg.logs {
            rebase(&mut log.path);
        }
        rebase(&mut cfg.work_dir);
        rebase(&mut cfg.report_dir);
        Ok(cfg)
    }

    pub fn spec_path(&self) -> Result<&Path, CliError> {
        let p = self
            .spec
            .as_deref()
            .ok_or_else(|| CliError::Usage("no spec given (--spec or `spec` in the config)".into()))?;
        require_file(p)?;
        Ok(p)
    }

    pub fn fuzz_config(&self) -> FuzzConfig {
        FuzzConfig {
            rng_seed: self.rng_seed,
            ..self.fuzz.clone()
        }
    }
}

pub fn require_file(p: &Path) -> Result<(), CliError> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::Input(format!("{} does not exist", p.display())))
    }
}
