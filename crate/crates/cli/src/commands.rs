//! One function per subcommand. Stages talk to each other only through the
//! artifacts in the work directory.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Duration;

use restlog_core::enhance::Seed;
use restlog_core::executor::{ExecError, Executor, HttpTarget, InProcessTarget, Target};
use restlog_core::fuzz::{FuzzError, FuzzMode};
use restlog_core::ingest::{LogFormat, ParameterCorpus};
use restlog_core::pipeline::{self, Knowledge};
use restlog_core::report::BugReport;
use restlog_core::resources::{analyze, DependencyMap, ResourceModel, ResourceTree};
use restlog_core::rng_from_seed;
use restlog_core::slicing::{LogSlice, SliceSet};
use restlog_core::spec_model::{parse_spec, DocFormat, ServiceSpec};
use restlog_core::testbed::{generate_hrlogs, PlantedFault, ScenarioScript, TestbedServer, GITLITE_OPENAPI};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{require_file, PipelineConfig, TargetKind};
use crate::CliError;

pub const RESOURCES: &str = "resources.json";
pub const DEPS: &str = "deps.json";
pub const ENTRIES: &str = "entries.jsonl";
pub const CORPUS: &str = "corpus.json";
pub const INGEST_STATS: &str = "ingest_stats.json";
pub const SLICES: &str = "slices.jsonl";
pub const SEEDS: &str = "seeds.jsonl";

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).map_err(|e| CliError::Input(e.to_string()))?;
        out.push(b'\n');
    }
    write_file(path, &out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn artifact_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| {
        CliError::Input(format!(
            "cannot read artifact {}: {e}; run the earlier stage first",
            path.display()
        ))
    })
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&artifact_text(path)?)
        .map_err(|e| CliError::Input(format!("{} is not a valid artifact: {e}", path.display())))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    artifact_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::Input(format!("{}:{}: not a valid artifact row: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn load_spec(cfg: &PipelineConfig) -> Result<ServiceSpec, CliError> {
    let path = cfg.spec_path()?;
    let bytes = fs::read(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    parse_spec(&bytes, DocFormat::from_path(path)).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_model(cfg: &PipelineConfig) -> Result<ResourceModel, CliError> {
    let tree: ResourceTree = read_json(&cfg.work_dir.join(RESOURCES))?;
    let deps: DependencyMap = read_json(&cfg.work_dir.join(DEPS))?;
    Ok(ResourceModel { tree, deps })
}

pub fn analyze_cmd(cfg: &PipelineConfig) -> Result<(), CliError> {
    let spec = load_spec(cfg)?;
    let classifier = cfg.classifier.build();
    let model = analyze(&spec, classifier.as_ref()).map_err(|e| CliError::Input(e.to_string()))?;
    write_json(&cfg.work_dir.join(RESOURCES), &model.tree)?;
    write_json(&cfg.work_dir.join(DEPS), &model.deps)?;
    println!(
        "analyze: {} operations, {} resources, {} parameter bindings -> {}",
        spec.operations.len(),
        model.tree.resources.len(),
        model.deps.len(),
        cfg.work_dir.display()
    );
    Ok(())
}

pub fn slice_cmd(cfg: &PipelineConfig, dump_slices: Option<&Path>) -> Result<(), CliError> {
    let spec = load_spec(cfg)?;
    let model = load_model(cfg)?;
    let mut logs = Vec::with_capacity(cfg.logs.len());
    for input in &cfg.logs {
        require_file(&input.path)?;
        let text = fs::read_to_string(&input.path)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", input.path.display())))?;
        logs.push((text, input.format));
    }
    let ing = pipeline::ingest(&logs, &cfg.field_map, &spec, &model);
    for e in &ing.errors {
        log::warn!("skipped log line: {e}");
    }
    let slices = pipeline::slice(
        &ing.pre,
        &cfg.token_params,
        cfg.dt_mlt as i64 * 1000,
        cfg.dt_stw as i64 * 1000,
    );
    write_jsonl(&cfg.work_dir.join(ENTRIES), &ing.pre.entries)?;
    write_json(&cfg.work_dir.join(CORPUS), &ing.pre.corpus)?;
    write_json(
        &cfg.work_dir.join(INGEST_STATS),
        &json!({
            "entries": ing.pre.entries.len(),
            "slices": slices.len(),
            "drops": ing.pre.drops,
            "errors": ing.errors.iter().map(|e| e.to_string()).collect::<Vec<_>>(),
        }),
    )?;
    write_jsonl(&cfg.work_dir.join(SLICES), &slices.slices)?;
    if let Some(path) = dump_slices {
        let rows: Vec<Value> = slices
            .slices
            .iter()
            .map(|s| json!({"slice_id": s.slice_id, "strategy": s.strategy, "entry_ids": s.entry_ids()}))
            .collect();
        write_jsonl(path, &rows)?;
    }
    let d = ing.pre.drops;
    println!(
        "slice: {} entries, {} slices; dropped {} malformed, {} not in spec, {} non-2XX",
        ing.pre.entries.len(),
        slices.len(),
        d.malformed,
        d.not_in_spec,
        d.non_2xx
    );
    Ok(())
}

fn load_slices(cfg: &PipelineConfig) -> Result<SliceSet, CliError> {
    Ok(SliceSet {
        slices: read_jsonl::<LogSlice>(&cfg.work_dir.join(SLICES))?,
    })
}

pub fn enhance_cmd(cfg: &PipelineConfig) -> Result<(), CliError> {
    let spec = load_spec(cfg)?;
    let model = load_model(cfg)?;
    let corpus: ParameterCorpus = read_json(&cfg.work_dir.join(CORPUS))?;
    let slices = load_slices(cfg)?;
    let k = Knowledge {
        spec: &spec,
        model: &model,
        corpus: &corpus,
    };
    let (seeds, failures) = pipeline::enhance(k, &slices, cfg.rng_seed);
    for (slice, e) in &failures {
        log::warn!("slice {slice} not completed: {e}");
    }
    write_jsonl(&cfg.work_dir.join(SEEDS), &seeds)?;
    println!(
        "enhance: {} seeds from {} slices ({} prepended creation entries, {} slices not completed)",
        seeds.len(),
        slices.len(),
        seeds.iter().map(Seed::prepended).sum::<usize>(),
        failures.len()
    );
    Ok(())
}

fn build_target(cfg: &PipelineConfig) -> Result<Box<dyn Target>, CliError> {
    match cfg.target.kind {
        TargetKind::InProcess => Ok(Box::new(InProcessTarget::new(cfg.target.faults.iter().copied()))),
        TargetKind::Http => {
            let url = cfg
                .target
                .base_url
                .as_deref()
                .ok_or_else(|| CliError::Usage("HTTP target needs --base-url or target.base_url".into()))?;
            if cfg.target.timeout_ms == 0 {
                return Err(CliError::Usage("target timeout must be positive".into()));
            }
            let t = HttpTarget::new(url, &cfg.target.auth, Duration::from_millis(cfg.target.timeout_ms))
                .map_err(|e| CliError::Target(e.to_string()))?;
            Ok(Box::new(t))
        }
    }
}

pub fn fuzz_cmd(cfg: &PipelineConfig, mode: FuzzMode) -> Result<(), CliError> {
    let spec = load_spec(cfg)?;
    let model = load_model(cfg)?;
    let corpus: ParameterCorpus = read_json(&cfg.work_dir.join(CORPUS))?;
    let slices = load_slices(cfg)?;
    let seeds: Vec<Seed> = match mode {
        FuzzMode::Init => Vec::new(),
        FuzzMode::Enh | FuzzMode::Fuzz => read_jsonl(&cfg.work_dir.join(SEEDS))?,
    };
    let stats_path = cfg.work_dir.join(INGEST_STATS);
    let drops = if stats_path.is_file() {
        let v: Value = read_json(&stats_path)?;
        serde_json::from_value(v["drops"].clone()).unwrap_or_default()
    } else {
        Default::default()
    };
    let k = Knowledge {
        spec: &spec,
        model: &model,
        corpus: &corpus,
    };
    let mut executor = Executor::new(&spec, &model.tree, build_target(cfg)?);
    executor.extraction = cfg.target.extraction.clone();
    let fuzz_cfg = cfg.fuzz_config();
    let (reporter, stats) = match pipeline::campaign(k, mode, &slices, &seeds, &mut executor, &fuzz_cfg) {
        Ok(r) => r,
        Err(FuzzError::EmptyPool) => {
            return Err(CliError::Input(
                "no seeds to fuzz; run enhance on a non-empty log".into(),
            ))
        }
        Err(FuzzError::Exec(e @ (ExecError::TargetUnreachable(_) | ExecError::AuthMissing(_)))) => {
            return Err(CliError::Target(e.to_string()))
        }
        Err(e) => return Err(CliError::Input(e.to_string())),
    };
    reporter
        .export(&cfg.report_dir, &stats, &drops)
        .map_err(|e| CliError::Input(format!("cannot write reports to {}: {e}", cfg.report_dir.display())))?;
    println!(
        "fuzz ({mode:?}): {} sequences, {} requests, {} ms campaign time -> {}",
        stats.executed_sequences,
        stats.executed_requests,
        stats.campaign_time_ms,
        cfg.report_dir.display()
    );
    print!("{}", reporter.summary());
    Ok(())
}

pub fn report_cmd(cfg: &PipelineConfig) -> Result<(), CliError> {
    let coverage: Value = read_json(&cfg.report_dir.join("coverage.json"))?;
    let bugs: Vec<BugReport> = read_json(&cfg.report_dir.join("bugs.json"))?;
    let mut out = std::io::stdout().lock();
    let covered: Vec<&str> = coverage["covered"]
        .as_array()
        .map(|a| a.iter().filter_map(Value::as_str).collect())
        .unwrap_or_default();
    let total = coverage["total"].as_u64().unwrap_or(0);
    let _ = writeln!(out, "coverage: {}/{total} operations", covered.len());
    for op in &covered {
        let at = coverage["timeline"][op].as_u64().unwrap_or(0);
        let _ = writeln!(out, "  + {op} (first 2XX at {at} ms)");
    }
    let _ = writeln!(out, "bugs: {}", bugs.len());
    for b in &bugs {
        let _ = writeln!(
            out,
            "  {} {} x{}: {} (first at {} ms, witness of {} requests, trigger #{})",
            b.key.status,
            b.key.operation,
            b.count,
            b.key.message,
            b.first_seen_ms,
            b.witness.len(),
            b.trigger_index
        );
    }
    Ok(())
}

pub fn testbed_spec(out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(p) => write_file(p, GITLITE_OPENAPI.as_bytes()),
        None => {
            print!("{GITLITE_OPENAPI}");
            Ok(())
        }
    }
}

pub fn testbed_gen_logs(
    script: Option<&Path>,
    format: LogFormat,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let script = match script {
        Some(p) => {
            require_file(p)?;
            let text =
                fs::read_to_string(p).map_err(|e| CliError::Input(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
        }
        None => ScenarioScript::default_scenario(),
    };
    let mut text = generate_hrlogs(&script, format, &mut rng_from_seed(seed)).join("\n");
    text.push('\n');
    match out {
        Some(p) => write_file(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn testbed_serve(addr: &str, faults: &[PlantedFault]) -> Result<(), CliError> {
    let server = TestbedServer::start(addr, faults.iter().copied())
        .map_err(|e| CliError::Input(format!("cannot bind {addr}: {e}")))?;
    println!("gitlite listening on {}", server.base_url());
    server.run_forever();
    Ok(())
}
