//! Acceptance checks, one PASS/FAIL line each. Runs without network or LLM.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::{Duration, Instant};

use proptest::test_runner::{Config, TestRunner};
use rand::Rng;
use restlog_core::enhance::{validate_completion, Completer};
use restlog_core::executor::{Executor, InProcessTarget};
use restlog_core::fuzz::{FuzzConfig, FuzzMode, FuzzStats};
use restlog_core::ingest::{parse_log, FieldMap, IngestError, LogEntry, LogFormat, RawRequestRecord, ResourceInstance};
use restlog_core::pipeline;
use restlog_core::report::Reporter;
use restlog_core::resources::{analyze, HeuristicClassifier, ResourceModel};
use restlog_core::slicing::{mlts, stws, LogSlice, SliceSet, Strategy, DEFAULT_DT_MLT_MS, DEFAULT_DT_STW_MS};
use restlog_core::spec_model::{parse_spec, DocFormat, Method, OperationId, ServiceSpec};
use restlog_core::testbed::{generate_hrlogs, PlantedFault, ScenarioScript, GITLITE_OPENAPI};
use restlog_core::{rng_from_seed, RandomSource};
use serde_json::{json, Value};

mod common;

const RNG_SEED: u64 = 20_240_601;
const BUDGET_MS: u64 = 60_000;
const MERGE: &str = "PUT /projects/{id}/merge_requests/{iid}/merge";
const COMMIT: &str = "POST /projects/{id}/commits";
const MR_CREATE: &str = "POST /projects/{id}/merge_requests";
const APPROVE: &str = "POST /projects/{id}/merge_requests/{iid}/approve";

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

struct Gitlite {
    spec: ServiceSpec,
    model: ResourceModel,
}

fn gitlite() -> Gitlite {
    let spec = parse_spec(GITLITE_OPENAPI.as_bytes(), DocFormat::Json).expect("gitlite spec");
    let model = analyze(&spec, &HeuristicClassifier::default()).expect("heuristic analysis");
    Gitlite { spec, model }
}

fn scenario_logs(seed: u64) -> String {
    generate_hrlogs(
        &ScenarioScript::default_scenario(),
        LogFormat::Json,
        &mut rng_from_seed(seed),
    )
    .join("\n")
}

struct CampaignRun {
    slices: SliceSet,
    reporter: Reporter,
    stats: FuzzStats,
}

fn run_campaign(g: &Gitlite, logs: &str, mode: FuzzMode, seed: u64) -> CampaignRun {
    let ing = pipeline::ingest(
        &[(logs.to_string(), LogFormat::Json)],
        &FieldMap::default(),
        &g.spec,
        &g.model,
    );
    let slices = pipeline::slice(&ing.pre, &[], DEFAULT_DT_MLT_MS, DEFAULT_DT_STW_MS);
    let k = pipeline::Knowledge {
        spec: &g.spec,
        model: &g.model,
        corpus: &ing.pre.corpus,
    };
    let (seeds, _) = pipeline::enhance(k, &slices, seed);
    let cfg = FuzzConfig {
        budget_ms: BUDGET_MS,
        rng_seed: seed,
        ..Default::default()
    };
    let mut executor = Executor::new(
        &g.spec,
        &g.model.tree,
        Box::new(InProcessTarget::new([PlantedFault::DoubleMerge])),
    );
    let (reporter, stats) = pipeline::campaign(k, mode, &slices, &seeds, &mut executor, &cfg).expect("campaign runs");
    CampaignRun {
        slices,
        reporter,
        stats,
    }
}

fn slice_ops(s: &LogSlice) -> Vec<&str> {
    s.entries.iter().map(|e| e.op.as_str()).collect()
}

fn binds(e: &LogEntry, param: &str, resource: &str, id: &str) -> bool {
    e.binding(param) == Some(&ResourceInstance::new(resource, id))
}

fn check(ok: bool, what: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what.into())
    }
}

// 1. Reconstruction of the commit/MR + approve/merge example.
fn criterion_1(g: &Gitlite) -> Outcome {
    let started = Instant::now();
    let run = run_campaign(g, &scenario_logs(RNG_SEED), FuzzMode::Fuzz, RNG_SEED);
    let has_s1 =
        run.slices.slices.iter().any(|s| {
            slice_ops(s) == [COMMIT, MR_CREATE] && s.entries.iter().all(|e| binds(e, "id", "/projects", "15"))
        });
    let has_s2 = run.slices.slices.iter().any(|s| {
        slice_ops(s) == [APPROVE, MERGE]
            && s.entries
                .iter()
                .all(|e| binds(e, "id", "/projects", "15") && binds(e, "iid", "/projects/{id}/merge_requests", "3"))
    });
    check(has_s1, "no slice {commit, merge-request} on project 15")?;
    check(has_s2, "no slice {approve, merge} on merge request 3")?;
    let cov = &run.reporter.coverage;
    check(
        cov.covered.contains(&OperationId::from(MERGE)),
        "merge never returned 2XX",
    )?;
    check(
        cov.covered.len() == g.spec.operations.len(),
        format!("coverage {}/{}", cov.covered.len(), cov.total),
    )?;

    let ablation = run_campaign(g, "", FuzzMode::Fuzz, RNG_SEED);
    check(
        !ablation.reporter.coverage.covered.contains(&OperationId::from(MERGE)),
        "merge covered without any logs",
    )?;
    let elapsed = started.elapsed();
    check(elapsed <= Duration::from_secs(120), format!("took {elapsed:?}"))?;
    Ok(format!(
        "S1 and S2 sliced; coverage {}/{} with merge 2XX after {} sequences; log-free ablation covers {}/{} without merge; {:.1}s",
        cov.covered.len(),
        cov.total,
        run.stats.executed_sequences,
        ablation.reporter.coverage.covered.len(),
        ablation.reporter.coverage.total,
        elapsed.as_secs_f64()
    ))
}

// 2. Slicing against an independent re-trace, 600 random queues.
fn criterion_2() -> Outcome {
    let started = Instant::now();
    let mut runner = TestRunner::new(Config {
        cases: 600,
        failure_persistence: None,
        ..Config::default()
    });
    let strategy = (common::queue_strategy(), common::dt_strategy());
    let cases = std::cell::Cell::new(0u32);
    let result = runner.run(&strategy, |(raw, dt)| {
        cases.set(cases.get() + 1);
        let q = common::build_queue(&raw);
        let ids = |v: Vec<LogSlice>| v.iter().map(|s| s.entry_ids()).collect::<Vec<_>>();
        let (m, s) = (mlts(&q, dt), stws(&q, dt));
        proptest::prop_assert_eq!(ids(m.clone()), common::oracle(&q, dt, false));
        proptest::prop_assert_eq!(ids(s.clone()), common::oracle(&q, dt, true));
        let inv = common::check_slice_invariants(&q, &m, dt, false)
            .and_then(|_| common::check_slice_invariants(&q, &s, dt, true));
        proptest::prop_assert!(inv.is_ok(), "{:?}", inv);
        Ok(())
    });
    result.map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    check(elapsed <= Duration::from_secs(60), format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} queues, zero violations, {:.2}s",
        cases.get(),
        elapsed.as_secs_f64()
    ))
}

/// A random slice over gitlite's operations: path parameters bound to a
/// small pool of project and merge-request instances.
fn random_slice(g: &Gitlite, c: &Completer, rng: &mut RandomSource, id: u64) -> LogSlice {
    let ops = g.spec.list_operations();
    let n = rng.random_range(1..=8);
    let mut t = 0;
    let entries = (0..n)
        .map(|k| {
            let op = ops[rng.random_range(0..ops.len())];
            t += rng.random_range(0..60_000);
            let mut params = c.sample_params(op, rng);
            let mut phi: BTreeMap<String, Option<ResourceInstance>> =
                params.keys().map(|p| (p.clone(), None)).collect();
            for p in op.path_params() {
                let resource = g
                    .model
                    .deps
                    .resource_of(&op.id, p)
                    .expect("gitlite path params are bound");
                let value = rng.random_range(1..=4).to_string();
                params.insert(p.to_string(), value.clone());
                phi.insert(p.to_string(), Some(ResourceInstance::new(resource, value)));
            }
            LogEntry {
                entry_id: k,
                t,
                op: op.id.clone(),
                params,
                phi,
                user: "u".into(),
                user_hint: None,
                source_line: k as usize,
            }
        })
        .collect();
    LogSlice {
        slice_id: id,
        entries,
        strategy: Strategy::Mlts,
        user: "u".into(),
    }
}

// 3. Every completed random slice passes the completion validator.
fn criterion_3(g: &Gitlite) -> Outcome {
    let ing = pipeline::ingest(
        &[(scenario_logs(RNG_SEED), LogFormat::Json)],
        &FieldMap::default(),
        &g.spec,
        &g.model,
    );
    let c = Completer::new(&g.spec, &g.model.tree, &g.model.deps, &ing.pre.corpus);
    let mut rng = rng_from_seed(RNG_SEED);
    let mut violations = Vec::new();
    let mut prepended = 0;
    const SLICES: u64 = 600;
    for i in 0..SLICES {
        let slice = random_slice(g, &c, &mut rng, i);
        let seed = c.rcsc(&slice, &mut rng).map_err(|e| e.to_string())?;
        prepended += seed.created.len();
        let v = validate_completion(&slice, &seed, &g.model.tree, &g.model.deps);
        if !v.is_empty() {
            violations.push((i, v));
        }
    }
    check(violations.is_empty(), format!("violations: {:?}", violations.first()))?;
    Ok(format!(
        "{SLICES} random slices completed ({prepended} creation entries prepended), zero violations"
    ))
}

#[allow(clippy::too_many_arguments)]
fn rec(
    line: usize,
    timestamp: i64,
    method: Method,
    uri: &str,
    status: u16,
    user: Option<&str>,
    params: Value,
) -> RawRequestRecord {
    RawRequestRecord {
        timestamp,
        method,
        uri: uri.into(),
        status,
        body_params: params.as_object().cloned().unwrap_or_default().into_iter().collect(),
        user_hint: user.map(str::to_string),
        source_line: line,
    }
}

fn compare_fixture(
    text: &str,
    format: LogFormat,
    expected: &[RawRequestRecord],
    expected_errors: &[(usize, &str)],
) -> Result<(), String> {
    let parsed = parse_log(text, format, &FieldMap::default());
    check(
        parsed.records.len() == expected.len(),
        format!("{} records, expected {}", parsed.records.len(), expected.len()),
    )?;
    for (got, want) in parsed.records.iter().zip(expected) {
        check(
            got == want,
            format!("line {}: got {got:?}, expected {want:?}", want.source_line),
        )?;
    }
    let errs: Vec<(usize, &str)> = parsed
        .errors
        .iter()
        .map(|e| match e {
            IngestError::MalformedLine { line, .. } => (*line, "malformed"),
            IngestError::MissingField { line, .. } => (*line, "missing"),
        })
        .collect();
    check(
        errs == expected_errors,
        format!("errors {errs:?}, expected {expected_errors:?}"),
    )
}

// 4. Field-exact parsing of the two 20-line fixtures.
fn criterion_4() -> Outcome {
    use Method::*;
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let nginx = std::fs::read_to_string(fixtures.join("access_20.log")).map_err(|e| e.to_string())?;
    let none = Value::Null;
    let nginx_expected = [
        rec(
            1,
            1_792_317_600_000,
            Get,
            "/projects?search=legacy",
            200,
            Some("alice"),
            none.clone(),
        ),
        rec(
            2,
            1_792_317_640_000,
            Post,
            "/projects/15/commits",
            201,
            Some("alice"),
            none.clone(),
        ),
        rec(
            3,
            1_792_317_645_000,
            Get,
            "/projects/16",
            200,
            Some("alice"),
            none.clone(),
        ),
        rec(
            4,
            1_792_317_650_000,
            Post,
            "/projects/15/merge_requests",
            201,
            Some("alice"),
            none.clone(),
        ),
        rec(6, 1_792_318_200_000, Post, "/projects", 201, Some("bob"), none.clone()),
        rec(
            7,
            1_792_318_208_000,
            Post,
            "/projects/17/commits",
            201,
            Some("bob"),
            none.clone(),
        ),
        rec(
            9,
            1_792_318_221_000,
            Get,
            "/projects/17/merge_requests?state=opened",
            200,
            Some("bob"),
            none.clone(),
        ),
        rec(
            10,
            1_792_318_224_000,
            Get,
            "/projects/17/merge_requests/1",
            200,
            Some("bob"),
            none.clone(),
        ),
        rec(12, 1_792_318_805_000, Get, "/projects/99", 404, None, none.clone()),
        rec(
            13,
            1_792_318_810_000,
            Post,
            "/projects/16/merge_requests",
            400,
            None,
            none.clone(),
        ),
        rec(
            14,
            1_792_318_815_000,
            Put,
            "/projects/16/merge_requests/1/merge",
            405,
            None,
            none.clone(),
        ),
        rec(
            16,
            1_792_319_400_000,
            Post,
            "/projects/16/merge_requests/1/approve",
            200,
            Some("carol"),
            none.clone(),
        ),
        rec(
            17,
            1_792_319_406_000,
            Put,
            "/projects/16/merge_requests/1/merge",
            200,
            Some("carol"),
            none.clone(),
        ),
        rec(
            18,
            1_792_319_406_000,
            Delete,
            "/projects/16",
            405,
            Some("carol"),
            none.clone(),
        ),
        rec(
            20,
            1_792_324_860_000,
            Get,
            "/projects/%31%36",
            200,
            Some("carol"),
            none.clone(),
        ),
    ];
    let nginx_errors = [
        (5, "malformed"),
        (8, "malformed"),
        (11, "malformed"),
        (15, "malformed"),
        (19, "malformed"),
    ];
    compare_fixture(&nginx, LogFormat::Nginx, &nginx_expected, &nginx_errors).map_err(|e| format!("nginx: {e}"))?;

    let jsonl = std::fs::read_to_string(fixtures.join("requests_20.jsonl")).map_err(|e| e.to_string())?;
    let json_expected = [
        rec(
            1,
            1_792_317_600_000,
            Get,
            "/projects",
            200,
            Some("alice"),
            json!({"search": "legacy"}),
        ),
        rec(
            2,
            1_792_317_640_250,
            Post,
            "/projects/15/commits",
            201,
            Some("alice"),
            json!({"branch": "feature-login", "commit_message": "Add login form", "action": "create"}),
        ),
        rec(
            3,
            1_792_317_645_000,
            Get,
            "/projects/16",
            200,
            Some("alice"),
            none.clone(),
        ),
        rec(
            4,
            1_792_317_650_000,
            Post,
            "/projects/15/merge_requests",
            201,
            Some("alice"),
            json!({"source_branch": "feature-login", "target_branch": "main", "title": "Login form"}),
        ),
        rec(
            6,
            1_792_317_720_000,
            Post,
            "/projects",
            201,
            Some("bob"),
            json!({"name": "bob-tools", "visibility": "private"}),
        ),
        rec(
            7,
            1_792_318_928_000,
            Post,
            "/projects/17/commits",
            201,
            Some("42"),
            json!({"branch": "fix-typo", "commit_message": "Fix typo", "action": "update"}),
        ),
        rec(
            9,
            1_792_317_741_000,
            Get,
            "/projects/17/merge_requests?state=opened",
            200,
            Some("bob"),
            none.clone(),
        ),
        rec(
            11,
            1_792_317_744_000,
            Get,
            "/projects/17/merge_requests/1",
            200,
            Some("bob"),
            json!({}),
        ),
        rec(12, 1_792_318_805_000, Get, "/projects/99", 404, None, none.clone()),
        rec(
            14,
            1_792_318_810_000,
            Post,
            "/projects/16/merge_requests",
            400,
            None,
            json!({"source_branch": "main", "target_branch": "main", "title": "Noop"}),
        ),
        rec(
            16,
            1_792_319_400_000,
            Post,
            "/projects/16/merge_requests/1/approve",
            200,
            Some("carol"),
            none.clone(),
        ),
        rec(
            17,
            1_792_319_406_000,
            Put,
            "/projects/16/merge_requests/1/merge",
            200,
            Some("carol"),
            json!({"squash": true, "sha": null}),
        ),
        rec(
            19,
            1_792_319_460_000,
            Get,
            "/projects/16",
            200,
            None,
            json!({"per_page": 5}),
        ),
    ];
    let json_errors = [
        (5, "malformed"),
        (8, "missing"),
        (10, "malformed"),
        (13, "malformed"),
        (15, "malformed"),
        (18, "missing"),
        (20, "malformed"),
    ];
    compare_fixture(&jsonl, LogFormat::Json, &json_expected, &json_errors).map_err(|e| format!("json: {e}"))?;
    Ok(format!(
        "nginx {}/20 records + {} malformed, json {}/20 records + {} malformed, all fields and line numbers exact",
        nginx_expected.len(),
        nginx_errors.len(),
        json_expected.len(),
        json_errors.len()
    ))
}

// 5. Coverage grows strictly from raw slices to seeds to fuzzing.
fn criterion_5(g: &Gitlite) -> Outcome {
    let started = Instant::now();
    let logs = scenario_logs(RNG_SEED);
    let cov = |mode| run_campaign(g, &logs, mode, RNG_SEED).reporter.coverage.covered.len();
    let (init, enh, fuzz) = (cov(FuzzMode::Init), cov(FuzzMode::Enh), cov(FuzzMode::Fuzz));
    check(init < enh && enh < fuzz, format!("init={init} enh={enh} fuzz={fuzz}"))?;
    let elapsed = started.elapsed();
    check(elapsed <= Duration::from_secs(180), format!("took {elapsed:?}"))?;
    Ok(format!(
        "operations covered: init {init} < enh {enh} < fuzz {fuzz} of {}; {:.1}s",
        g.spec.operations.len(),
        elapsed.as_secs_f64()
    ))
}

// 6. The planted double merge is reported once, with a replayable witness.
fn criterion_6(g: &Gitlite) -> Outcome {
    let run = run_campaign(g, &scenario_logs(RNG_SEED), FuzzMode::Fuzz, RNG_SEED);
    let server_errors: Vec<_> = run.reporter.bugs.values().filter(|b| b.key.status >= 500).collect();
    check(
        server_errors.len() == 1,
        format!("{} 5XX bug reports", server_errors.len()),
    )?;
    let bug = server_errors[0];
    check(
        bug.key.status == 500 && bug.key.operation.as_str() == MERGE && bug.key.message == "double-merge nil state",
        format!("unexpected bug key {:?}", bug.key),
    )?;
    check(bug.count >= 1, "count is zero")?;
    let requests: Vec<_> = bug.witness.iter().map(|r| r.request.clone()).collect();
    let mut ex = Executor::new(
        &g.spec,
        &g.model.tree,
        Box::new(InProcessTarget::new([PlantedFault::DoubleMerge])),
    );
    let replies = ex.replay(&requests).map_err(|e| e.to_string())?;
    let replayed = &replies[bug.trigger_index];
    check(
        replayed.status == 500 && replayed.body == bug.witness[bug.trigger_index].body,
        format!("replay gave {} {}", replayed.status, replayed.body),
    )?;
    Ok(format!(
        "one 5XX report ({} x{}: {:?}); witness of {} requests replays the 500 on fresh state",
        bug.key.operation,
        bug.count,
        bug.key.message,
        requests.len()
    ))
}

fn exported(run: &CampaignRun) -> Result<(Vec<u8>, Vec<u8>), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    run.reporter
        .export(dir.path(), &run.stats, &Default::default())
        .map_err(|e| e.to_string())?;
    let read = |f: &str| std::fs::read(dir.path().join(f)).map_err(|e| e.to_string());
    Ok((read("coverage.json")?, read("bugs.json")?))
}

// 7. Identical seeds give byte-identical reports.
fn criterion_7(g: &Gitlite) -> Outcome {
    let mut compared = Vec::new();
    let logs_a = scenario_logs(RNG_SEED);
    let logs_b = scenario_logs(RNG_SEED);
    check(logs_a == logs_b, "log generation is not deterministic")?;
    for mode in [FuzzMode::Init, FuzzMode::Enh, FuzzMode::Fuzz] {
        let a = exported(&run_campaign(g, &logs_a, mode, RNG_SEED))?;
        let b = exported(&run_campaign(g, &logs_b, mode, RNG_SEED))?;
        check(a == b, format!("{mode:?} reports differ between runs"))?;
        compared.push(format!("{mode:?}"));
    }
    let ablation_a = exported(&run_campaign(g, "", FuzzMode::Fuzz, RNG_SEED))?;
    let ablation_b = exported(&run_campaign(g, "", FuzzMode::Fuzz, RNG_SEED))?;
    check(ablation_a == ablation_b, "log-free campaign reports differ")?;
    Ok(format!(
        "coverage.json and bugs.json byte-identical across reruns ({} + log-free fuzz)",
        compared.join(", ")
    ))
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    // `cargo test --workspace -- --list` and similar harness probes
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let g = gitlite();
    let criteria: Vec<Criterion> = vec![
        ("1 example reconstruction", Box::new(|| criterion_1(&g))),
        ("2 slicing oracle", Box::new(criterion_2)),
        ("3 completion validator", Box::new(|| criterion_3(&g))),
        ("4 log parsing fidelity", Box::new(criterion_4)),
        ("5 stage ablation", Box::new(|| criterion_5(&g))),
        ("6 bug detection and dedup", Box::new(|| criterion_6(&g))),
        ("7 determinism", Box::new(|| criterion_7(&g))),
    ];
    let mut failed = BTreeSet::new();
    for (name, f) in &criteria {
        match f() {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(why) => {
                println!("FAIL criterion {name}: {why}");
                failed.insert(*name);
            }
        }
    }
    println!(
        "acceptance: {} passed, {} failed",
        criteria.len() - failed.len(),
        failed.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
