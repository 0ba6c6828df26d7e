//! Operation coverage, deduplicated 5XX bugs, and report files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::executor::ResponseRecord;
use crate::ingest::DropCounters;
use crate::spec_model::{OperationId, ServiceSpec};

static UUID: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[0-9a-f]{8}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{12}").expect("uuid regex"));
static HEX: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b0x[0-9a-f]+\b").expect("hex regex"));
static NUM: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").expect("number regex"));
static SPACE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s+").expect("space regex"));

const MESSAGE_PREFIX_BYTES: usize = 200;

/// Error text used for bug keying: the `message` or `error` field of a JSON
/// body, else the body's first 200 bytes; lowercased, with UUIDs, hex
/// literals and digit runs replaced by placeholders and whitespace collapsed.
pub fn normalize_message(body: &str) -> String {
    let text = match serde_json::from_str::<serde_json::Value>(body) {
        Ok(serde_json::Value::Object(m)) => match m.get("message").or_else(|| m.get("error")) {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(other) => other.to_string(),
            None => prefix(body),
        },
        _ => prefix(body),
    };
    let text = text.to_lowercase();
    let text = UUID.replace_all(&text, "<uuid>");
    let text = HEX.replace_all(&text, "<hex>");
    let text = NUM.replace_all(&text, "<num>");
    SPACE.replace_all(text.trim(), " ").into_owned()
}

fn prefix(body: &str) -> String {
    let mut end = body.len().min(MESSAGE_PREFIX_BYTES);
    while !body.is_char_boundary(end) {
        end -= 1;
    }
    body[..end].to_string()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub covered: BTreeSet<OperationId>,
    pub total: usize,
    /// Campaign time (ms) of each operation's first 2XX.
    pub first_cover_time: BTreeMap<OperationId, u64>,
}

impl CoverageReport {
    pub fn ratio(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.covered.len() as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BugKey {
    pub operation: OperationId,
    pub status: u16,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugReport {
    pub key: BugKey,
    pub count: u64,
    pub first_seen_ms: u64,
    /// Position of the triggering response within `witness`.
    pub trigger_index: usize,
    /// The sequence that first triggered the bug, requests and responses.
    pub witness: Vec<ResponseRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReportEvent {
    NewCoverage(OperationId),
    NewBug(BugKey),
}

#[derive(Debug, Clone, Default)]
pub struct Reporter {
    operations: BTreeSet<OperationId>,
    pub coverage: CoverageReport,
    pub bugs: BTreeMap<BugKey, BugReport>,
    /// Responses per status code (0 = transport error).
    pub status_tally: BTreeMap<u16, u64>,
}

impl Reporter {
    pub fn new(spec: &ServiceSpec) -> Self {
        Reporter {
            operations: spec.operations.keys().cloned().collect(),
            coverage: CoverageReport {
                total: spec.operations.len(),
                ..Default::default()
            },
            ..Default::default()
        }
    }

    /// Records one response observed at campaign time `clock_ms`; `sequence`
    /// is the executed sequence it belongs to, kept as witness for new bugs.
    pub fn record_response(&mut self, sequence: &[ResponseRecord], index: usize, clock_ms: u64) -> Option<ReportEvent> {
        let r = &sequence[index];
        *self.status_tally.entry(r.status).or_insert(0) += 1;
        match r.status {
            200..=299 if self.operations.contains(&r.op) => {
                if self.coverage.covered.insert(r.op.clone()) {
                    self.coverage.first_cover_time.insert(r.op.clone(), clock_ms);
                    return Some(ReportEvent::NewCoverage(r.op.clone()));
                }
                None
            }
            500..=599 => {
                let key = BugKey {
                    operation: r.op.clone(),
                    status: r.status,
                    message: normalize_message(&r.body),
                };
                if let Some(bug) = self.bugs.get_mut(&key) {
                    bug.count += 1;
                    return None;
                }
                self.bugs.insert(
                    key.clone(),
                    BugReport {
                        key: key.clone(),
                        count: 1,
                        first_seen_ms: clock_ms,
                        trigger_index: index,
                        witness: sequence.to_vec(),
                    },
                );
                Some(ReportEvent::NewBug(key))
            }
            _ => None,
        }
    }

    /// Records a whole executed sequence that started at `start_ms`; each
    /// response is timestamped after its own latency.
    pub fn record_sequence(&mut self, sequence: &[ResponseRecord], start_ms: u64) -> Vec<ReportEvent> {
        let mut clock = start_ms;
        let mut events = Vec::new();
        for i in 0..sequence.len() {
            clock += sequence[i].latency_ms;
            events.extend(self.record_response(sequence, i, clock));
        }
        events
    }

    pub fn bug_list(&self) -> Vec<&BugReport> {
        self.bugs.values().collect()
    }

    /// Writes `coverage.json`, `bugs.json` and `stats.json` into `dir`.
    pub fn export<S: Serialize>(&self, dir: &Path, stats: &S, drops: &DropCounters) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let coverage = serde_json::json!({
            "covered": self.coverage.covered,
            "covered_count": self.coverage.covered.len(),
            "total": self.coverage.total,
            "timeline": self.coverage.first_cover_time,
        });
        let stats = serde_json::json!({
            "fuzz": stats,
            "drops": drops,
            "status_tally": self.status_tally.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>(),
        });
        write_json(&dir.join("coverage.json"), &coverage)?;
        write_json(&dir.join("bugs.json"), &self.bug_list())?;
        write_json(&dir.join("stats.json"), &stats)
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "coverage: {}/{} operations ({:.1}%)",
            self.coverage.covered.len(),
            self.coverage.total,
            self.coverage.ratio() * 100.0
        );
        for op in &self.operations {
            let mark = if self.coverage.covered.contains(op) { "+" } else { "-" };
            let _ = writeln!(out, "  {mark} {op}");
        }
        let _ = writeln!(out, "bugs: {}", self.bugs.len());
        for b in self.bugs.values() {
            let _ = writeln!(
                out,
                "  {} {} x{}: {}",
                b.key.status, b.key.operation, b.count, b.key.message
            );
        }
        out
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::ConcreteRequest;
    use crate::spec_model::Method;

    fn rec(op: &str, status: u16, body: &str) -> ResponseRecord {
        ResponseRecord {
            entry_index: 0,
            op: op.into(),
            status,
            body: body.into(),
            extracted_ids: BTreeMap::new(),
            latency_ms: 5,
            request: ConcreteRequest {
                method: Method::Get,
                path: "/".into(),
                query: BTreeMap::new(),
                body: None,
            },
            fallbacks: vec![],
        }
    }

    fn reporter() -> Reporter {
        let spec = crate::spec_model::parse_spec(
            br#"{"openapi":"3.0.0","paths":{"/projects":{"post":{}},"/projects/{id}/merge_requests/{iid}/merge":{"put":{}}}}"#,
            crate::spec_model::DocFormat::Json,
        )
        .unwrap();
        Reporter::new(&spec)
    }

    const MERGE: &str = "PUT /projects/{id}/merge_requests/{iid}/merge";

    #[test]
    fn normalization_rules() {
        assert_eq!(
            normalize_message(r#"{"message":"Project 15 not found"}"#),
            "project <num> not found"
        );
        assert_eq!(normalize_message(""), "");
        assert_eq!(
            normalize_message("NilClass error at 0x1f"),
            normalize_message("NilClass   error at 0x2A")
        );
        assert_eq!(normalize_message("NilClass error at 0x1f"), "nilclass error at <hex>");
        assert_eq!(
            normalize_message(r#"{"error":"lock 123e4567-e89b-12d3-a456-426614174000 held"}"#),
            "lock <uuid> held"
        );
        let page = format!("<html>{}</html>", "x".repeat(400));
        assert_eq!(normalize_message(&page).len(), 200);
        assert_eq!(normalize_message("é".repeat(150).as_str()).chars().count(), 100);
    }

    #[test]
    fn first_success_is_new_coverage() {
        let mut r = reporter();
        let seq = vec![rec("POST /projects", 201, "{}"), rec("POST /projects", 201, "{}")];
        let events = r.record_sequence(&seq, 100);
        assert_eq!(events, [ReportEvent::NewCoverage("POST /projects".into())]);
        assert_eq!(r.coverage.first_cover_time[&OperationId::from("POST /projects")], 105);
        // operations outside the spec never count
        r.record_sequence(&[rec("GET /other", 200, "")], 0);
        assert_eq!(r.coverage.covered.len(), 1);
        assert_eq!(r.coverage.total, 2);
    }

    #[test]
    fn identical_bugs_are_deduplicated() {
        let mut r = reporter();
        let body = r#"{"message":"double-merge nil state"}"#;
        let first = r.record_sequence(&[rec(MERGE, 200, "{}"), rec(MERGE, 500, body)], 0);
        assert_eq!(first.len(), 2);
        assert!(r.record_sequence(&[rec(MERGE, 500, body)], 10).is_empty());
        r.record_sequence(&[rec(MERGE, 500, "NilClass error at 0x1f")], 20);
        r.record_sequence(&[rec(MERGE, 500, "NilClass error at 0x2a")], 30);
        assert_eq!(r.bugs.len(), 2);
        let bug = r.bug_list()[0];
        assert_eq!(bug.key.message, "double-merge nil state");
        assert_eq!(bug.count, 2);
        assert_eq!(bug.trigger_index, 1);
        assert_eq!(bug.witness.len(), 2);
        assert_eq!(r.status_tally[&500], 4);
        // 4XX only tallied
        assert!(r.record_sequence(&[rec(MERGE, 405, "{}")], 0).is_empty());
    }

    #[test]
    fn export_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let r = reporter();
        r.export(dir.path(), &serde_json::json!({}), &DropCounters::default())
            .unwrap();
        let cov = std::fs::read_to_string(dir.path().join("coverage.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&cov).unwrap();
        assert_eq!(v["covered_count"], 0);
        assert_eq!(std::fs::read_to_string(dir.path().join("bugs.json")).unwrap(), "[]\n");
        r.export(dir.path(), &serde_json::json!({}), &DropCounters::default())
            .unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("coverage.json")).unwrap(), cov);
    }
}
