//! `restlog`: run the log-driven fuzzing pipeline stage by stage.
//!
//! Exit codes: 0 success, 1 usage, 2 input error, 3 target error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use restlog_core::fuzz::FuzzMode;
use restlog_core::ingest::LogFormat;
use restlog_core::testbed::PlantedFault;

use config::{LogInput, PipelineConfig, TargetKind};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("input: {0}")]
    Input(String),
    #[error("target: {0}")]
    Target(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Target(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "restlog",
    version,
    about = "Business-aware REST API fuzzing driven by request logs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by the pipeline stages; each overrides its config-file key.
#[derive(Args, Clone, Default)]
struct Common {
    /// TOML pipeline config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// OpenAPI/Swagger document (JSON or YAML).
    #[arg(long, global = true)]
    spec: Option<PathBuf>,
    /// Directory holding stage artifacts.
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    /// Directory for coverage.json, bugs.json and stats.json.
    #[arg(long, global = true)]
    report_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    rng_seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the resource tree and parameter dependencies from the spec.
    Analyze {
        #[command(flatten)]
        common: Common,
    },
    /// Ingest request logs and cut them into slices.
    Slice {
        #[command(flatten)]
        common: Common,
        /// Log file as PATH:FORMAT (nginx or json); repeatable, replaces the config list.
        #[arg(long = "log")]
        logs: Vec<LogInput>,
        /// Maximum lead time between consecutive slice entries, seconds.
        #[arg(long)]
        dt_mlt: Option<u64>,
        /// Sliding window span, seconds.
        #[arg(long)]
        dt_stw: Option<u64>,
        /// Also write a compact slice listing (slice_id, strategy, entry_ids).
        #[arg(long)]
        dump_slices: Option<PathBuf>,
    },
    /// Complete slices into executable seeds.
    Enhance {
        #[command(flatten)]
        common: Common,
    },
    /// Execute slices, seeds, or a full mutation campaign against the target.
    Fuzz {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        target: TargetFlags,
        #[arg(long, default_value = "fuzz")]
        mode: FuzzMode,
        /// Campaign budget in milliseconds of target time.
        #[arg(long)]
        budget_ms: Option<u64>,
    },
    /// Print the reports of the last campaign.
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// The bundled gitlite service.
    Testbed {
        #[command(subcommand)]
        action: TestbedAction,
    },
}

#[derive(Args, Clone, Default)]
struct TargetFlags {
    /// Base URL of the service under test.
    #[arg(long)]
    base_url: Option<String>,
    /// Header carrying the token, e.g. PRIVATE-TOKEN.
    #[arg(long)]
    auth_header: Option<String>,
    /// Environment variable holding the token.
    #[arg(long)]
    token_env: Option<String>,
    #[arg(long)]
    timeout_ms: Option<u64>,
    /// Run against the in-process gitlite service instead of HTTP.
    #[arg(long, conflicts_with = "base_url")]
    in_process: bool,
    /// Planted fault for the in-process service; repeatable.
    #[arg(long = "fault", value_parser = parse_fault)]
    faults: Vec<PlantedFault>,
}

#[derive(Subcommand)]
enum TestbedAction {
    /// Print or write the gitlite OpenAPI document.
    Spec {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate request logs by replaying a scenario script.
    GenLogs {
        /// Scenario script (JSON); the shipped scenario by default.
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long, default_value = "json")]
        format: LogFormat,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve gitlite over HTTP until killed.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long = "fault", value_parser = parse_fault)]
        faults: Vec<PlantedFault>,
    },
}

fn parse_fault(s: &str) -> Result<PlantedFault, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn resolve(common: &Common) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = &common.spec {
        cfg.spec = Some(s.clone());
    }
    if let Some(d) = &common.work_dir {
        cfg.work_dir = d.clone();
    }
    if let Some(d) = &common.report_dir {
        cfg.report_dir = d.clone();
    }
    if let Some(s) = common.rng_seed {
        cfg.rng_seed = s;
    }
    Ok(cfg)
}

fn apply_target(cfg: &mut PipelineConfig, t: &TargetFlags) {
    if t.in_process {
        cfg.target.kind = TargetKind::InProcess;
    }
    if let Some(u) = &t.base_url {
        cfg.target.kind = TargetKind::Http;
        cfg.target.base_url = Some(u.clone());
    }
    if let Some(h) = &t.auth_header {
        cfg.target.auth.header = Some(h.clone());
    }
    if let Some(e) = &t.token_env {
        cfg.target.auth.token_env = Some(e.clone());
    }
    if let Some(ms) = t.timeout_ms {
        cfg.target.timeout_ms = ms;
    }
    if !t.faults.is_empty() {
        cfg.target.faults = t.faults.clone();
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Analyze { common } => commands::analyze_cmd(&resolve(&common)?),
        Command::Slice {
            common,
            logs,
            dt_mlt,
            dt_stw,
            dump_slices,
        } => {
            let mut cfg = resolve(&common)?;
            if !logs.is_empty() {
                cfg.logs = logs;
            }
            cfg.dt_mlt = dt_mlt.unwrap_or(cfg.dt_mlt);
            cfg.dt_stw = dt_stw.unwrap_or(cfg.dt_stw);
            commands::slice_cmd(&cfg, dump_slices.as_deref())
        }
        Command::Enhance { common } => commands::enhance_cmd(&resolve(&common)?),
        Command::Fuzz {
            common,
            target,
            mode,
            budget_ms,
        } => {
            let mut cfg = resolve(&common)?;
            apply_target(&mut cfg, &target);
            if let Some(b) = budget_ms {
                cfg.fuzz.budget_ms = b;
            }
            commands::fuzz_cmd(&cfg, mode)
        }
        Command::Report { common } => commands::report_cmd(&resolve(&common)?),
        Command::Testbed { action } => match action {
            TestbedAction::Spec { out } => commands::testbed_spec(out.as_deref()),
            TestbedAction::GenLogs {
                script,
                format,
                seed,
                out,
            } => commands::testbed_gen_logs(script.as_deref(), format, seed, out.as_deref()),
            TestbedAction::Serve { addr, faults } => commands::testbed_serve(&addr, &faults),
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("restlog: {e}");
            ExitCode::from(e.code())
        }
    }
}
