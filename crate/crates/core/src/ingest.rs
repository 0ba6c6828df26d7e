//! Historical request log ingestion.
//!
//! Raw lines (Nginx "combined" or JSON-lines) become [`RawRequestRecord`]s.
//! [`preprocess`] then keeps the successful requests to operations the
//! specification declares, resolves the resource instances each request
//! touches, and mines the parameter corpus. [`split_user_queues`] finally
//! partitions the entries per user.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use chrono::{DateTime, TimeZone, Utc};
use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::resources::DependencyMap;
use crate::spec_model::{Method, OperationId, ServiceSpec};
use crate::RandomSource;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum IngestError {
    #[error("line {line}: malformed log line: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: String },
}

impl IngestError {
    pub fn line(&self) -> usize {
        match self {
            IngestError::MalformedLine { line, .. } | IngestError::MissingField { line, .. } => *line,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogFormat {
    Nginx,
    Json,
}

impl std::str::FromStr for LogFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nginx" => Ok(LogFormat::Nginx),
            "json" => Ok(LogFormat::Json),
            other => Err(format!("unknown log format {other:?} (expected nginx or json)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRequestRecord {
    /// UTC epoch milliseconds.
    pub timestamp: i64,
    pub method: Method,
    /// Path plus optional query string.
    pub uri: String,
    pub status: u16,
    pub body_params: BTreeMap<String, Value>,
    pub user_hint: Option<String>,
    pub source_line: usize,
}

/// JSON keys used by [`parse_json_line`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMap {
    pub time: String,
    pub method: String,
    pub path: String,
    pub status: String,
    pub params: String,
    pub user: String,
}

impl Default for FieldMap {
    fn default() -> Self {
        FieldMap {
            time: "time".into(),
            method: "method".into(),
            path: "path".into(),
            status: "status".into(),
            params: "params".into(),
            user: "user_id".into(),
        }
    }
}

const NGINX_TIME: &str = "%d/%b/%Y:%H:%M:%S %z";

static COMBINED: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r#"^(?P<addr>\S+) (?P<ident>\S+) (?P<user>\S+) \[(?P<time>[^\]]+)\] "(?P<method>\S+) (?P<uri>\S+)(?: (?P<proto>[^"]*))?" (?P<status>\d{3}) (?P<bytes>\d+|-) "(?P<referer>(?:[^"\\]|\\.)*)" "(?P<agent>(?:[^"\\]|\\.)*)"(?:\s.*)?$"#,
    )
    .expect("combined log regex")
});

fn malformed(line: usize, reason: impl Into<String>) -> IngestError {
    IngestError::MalformedLine {
        line,
        reason: reason.into(),
    }
}

fn check_record(r: &RawRequestRecord) -> Result<(), IngestError> {
    if !(100..=599).contains(&r.status) {
        return Err(malformed(r.source_line, format!("status {} out of range", r.status)));
    }
    if r.timestamp <= 0 {
        return Err(malformed(r.source_line, "timestamp not positive"));
    }
    Ok(())
}

pub fn parse_nginx_line(line: &str, line_no: usize) -> Result<RawRequestRecord, IngestError> {
    let caps = COMBINED
        .captures(line.trim_end_matches(['\r', '\n']))
        .ok_or_else(|| malformed(line_no, "does not match the combined log format"))?;
    let time = DateTime::parse_from_str(&caps["time"], NGINX_TIME)
        .map_err(|e| malformed(line_no, format!("bad time {:?}: {e}", &caps["time"])))?;
    let method: Method = caps["method"].parse().map_err(|e: String| malformed(line_no, e))?;
    let status: u16 = caps["status"].parse().map_err(|_| malformed(line_no, "bad status"))?;
    let user = &caps["user"];
    let record = RawRequestRecord {
        timestamp: time.timestamp_millis(),
        method,
        uri: caps["uri"].to_string(),
        status,
        body_params: BTreeMap::new(),
        user_hint: (user != "-").then(|| user.to_string()),
        source_line: line_no,
    };
    check_record(&record)?;
    Ok(record)
}

/// Renders a record as a combined-format line.
pub fn render_nginx_line(r: &RawRequestRecord, remote_addr: &str, bytes: usize) -> String {
    let time = Utc
        .timestamp_millis_opt(r.timestamp)
        .single()
        .unwrap_or_default()
        .format(NGINX_TIME);
    format!(
        "{remote_addr} - {user} [{time}] \"{method} {uri} HTTP/1.1\" {status} {bytes} \"-\" \"restlog-testbed/1.0\"",
        user = r.user_hint.as_deref().unwrap_or("-"),
        method = r.method,
        uri = r.uri,
        status = r.status,
    )
}

fn parse_time_value(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) => n.as_i64().or_else(|| n.as_f64().map(|f| f as i64)),
        Value::String(s) => DateTime::parse_from_rfc3339(s)
            .or_else(|_| DateTime::parse_from_str(s, NGINX_TIME))
            .map(|t| t.timestamp_millis())
            .ok(),
        _ => None,
    }
}

fn scalar_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Accepts either an object or a GitLab-style list of `{key, value}` pairs.
fn params_from_value(v: &Value) -> BTreeMap<String, Value> {
    match v {
        Value::Object(m) => m.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        Value::Array(items) => items
            .iter()
            .filter_map(|item| {
                let key = item.get("key")?.as_str()?;
                Some((key.to_string(), item.get("value").cloned().unwrap_or(Value::Null)))
            })
            .collect(),
        _ => BTreeMap::new(),
    }
}

pub fn parse_json_line(line: &str, line_no: usize, fields: &FieldMap) -> Result<RawRequestRecord, IngestError> {
    let value: Value = serde_json::from_str(line).map_err(|e| malformed(line_no, format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| malformed(line_no, "not a JSON object"))?;
    let field = |key: &str| {
        obj.get(key).ok_or_else(|| IngestError::MissingField {
            line: line_no,
            field: key.to_string(),
        })
    };

    let timestamp = parse_time_value(field(&fields.time)?).ok_or_else(|| malformed(line_no, "unparseable time"))?;
    let method: Method = field(&fields.method)?
        .as_str()
        .ok_or_else(|| malformed(line_no, "method is not a string"))?
        .parse()
        .map_err(|e: String| malformed(line_no, e))?;
    let uri = field(&fields.path)?
        .as_str()
        .ok_or_else(|| malformed(line_no, "path is not a string"))?
        .to_string();
    let status = match field(&fields.status)? {
        Value::Number(n) => n.as_u64(),
        Value::String(s) => s.parse().ok(),
        _ => None,
    }
    .and_then(|s| u16::try_from(s).ok())
    .ok_or_else(|| malformed(line_no, "bad status"))?;
    let body_params = obj.get(&fields.params).map(params_from_value).unwrap_or_default();
    let user_hint = obj.get(&fields.user).and_then(scalar_string);

    let record = RawRequestRecord {
        timestamp,
        method,
        uri,
        status,
        body_params,
        user_hint,
        source_line: line_no,
    };
    check_record(&record)?;
    Ok(record)
}

pub fn render_json_line(r: &RawRequestRecord, fields: &FieldMap) -> String {
    let time = Utc
        .timestamp_millis_opt(r.timestamp)
        .single()
        .unwrap_or_default()
        .to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
    let mut obj = serde_json::Map::new();
    obj.insert(fields.time.clone(), Value::String(time));
    obj.insert(fields.method.clone(), Value::String(r.method.to_string()));
    obj.insert(fields.path.clone(), Value::String(r.uri.clone()));
    obj.insert(fields.status.clone(), Value::from(r.status));
    obj.insert(
        fields.params.clone(),
        Value::Object(r.body_params.clone().into_iter().collect()),
    );
    if let Some(u) = &r.user_hint {
        obj.insert(fields.user.clone(), Value::String(u.clone()));
    }
    Value::Object(obj).to_string()
}

/// Result of parsing a whole log text; malformed lines are collected, not fatal.
#[derive(Debug, Clone, Default)]
pub struct ParsedLog {
    pub records: Vec<RawRequestRecord>,
    pub errors: Vec<IngestError>,
}

pub fn parse_log(text: &str, format: LogFormat, fields: &FieldMap) -> ParsedLog {
    let mut out = ParsedLog::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = match format {
            LogFormat::Nginx => parse_nginx_line(line, i + 1),
            LogFormat::Json => parse_json_line(line, i + 1, fields),
        };
        match parsed {
            Ok(r) => out.records.push(r),
            Err(e) => {
                log::warn!("skipping {e}");
                out.errors.push(e);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ResourceInstance {
    pub resource: String,
    #[serde(rename = "id")]
    pub id_value: String,
}

impl ResourceInstance {
    pub fn new(resource: impl Into<String>, id_value: impl Into<String>) -> Self {
        ResourceInstance {
            resource: resource.into(),
            id_value: id_value.into(),
        }
    }
}

/// One historical request: timestamp, operation, parameters, and the
/// parameter-to-instance mapping. The instance set is derived from `phi`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub entry_id: u64,
    pub t: i64,
    pub op: OperationId,
    pub params: BTreeMap<String, String>,
    pub phi: BTreeMap<String, Option<ResourceInstance>>,
    pub user: String,
    #[serde(skip)]
    pub user_hint: Option<String>,
    #[serde(skip)]
    pub source_line: usize,
}

impl LogEntry {
    pub fn instances(&self) -> BTreeSet<&ResourceInstance> {
        self.phi.values().flatten().collect()
    }

    pub fn shares_instance_with(&self, set: &BTreeSet<ResourceInstance>) -> bool {
        self.phi.values().flatten().any(|i| set.contains(i))
    }

    pub fn binding(&self, param: &str) -> Option<&ResourceInstance> {
        self.phi.get(param).and_then(Option::as_ref)
    }
}

/// Parameter combinations and values observed in successful requests.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCorpus {
    pub combos: BTreeMap<OperationId, BTreeSet<BTreeSet<String>>>,
    pub values: BTreeMap<OperationId, BTreeMap<String, Vec<String>>>,
}

impl ParameterCorpus {
    pub fn record(&mut self, op: &OperationId, params: &BTreeMap<String, String>) {
        self.combos
            .entry(op.clone())
            .or_default()
            .insert(params.keys().cloned().collect());
        let pools = self.values.entry(op.clone()).or_default();
        for (k, v) in params {
            pools.entry(k.clone()).or_default().push(v.clone());
        }
    }

    pub fn combos_for(&self, op: &OperationId) -> Vec<&BTreeSet<String>> {
        self.combos.get(op).map(|c| c.iter().collect()).unwrap_or_default()
    }

    pub fn pool(&self, op: &OperationId, param: &str) -> &[String] {
        self.values
            .get(op)
            .and_then(|p| p.get(param))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn sample_combo(&self, op: &OperationId, rng: &mut RandomSource) -> Option<BTreeSet<String>> {
        let combos = self.combos_for(op);
        if combos.is_empty() {
            return None;
        }
        Some(combos[rng.random_range(0..combos.len())].clone())
    }

    /// Samples with multiplicity, so frequent values are preferred.
    pub fn sample_value(&self, op: &OperationId, param: &str, rng: &mut RandomSource) -> Option<String> {
        let pool = self.pool(op, param);
        if pool.is_empty() {
            return None;
        }
        Some(pool[rng.random_range(0..pool.len())].clone())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropCounters {
    pub malformed: u64,
    pub not_in_spec: u64,
    pub non_2xx: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Preprocessed {
    pub entries: Vec<LogEntry>,
    pub corpus: ParameterCorpus,
    pub drops: DropCounters,
}

fn value_string(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        other => Some(other.to_string()),
    }
}

/// Path bindings win over query parameters, which win over body parameters.
fn resolved_params(
    bindings: &BTreeMap<String, String>,
    uri: &str,
    body: &BTreeMap<String, Value>,
) -> (BTreeMap<String, String>, BTreeSet<String>) {
    let mut params: BTreeMap<String, String> = body
        .iter()
        .filter_map(|(k, v)| Some((k.clone(), value_string(v)?)))
        .collect();
    if let Some((_, query)) = uri.split_once('?') {
        for (k, v) in form_urlencoded::parse(query.as_bytes()) {
            params.insert(k.into_owned(), v.into_owned());
        }
    }
    for (k, v) in bindings {
        params.insert(k.clone(), v.clone());
    }
    (params, bindings.keys().cloned().collect())
}

pub fn preprocess(records: &[RawRequestRecord], spec: &ServiceSpec, deps: &DependencyMap) -> Preprocessed {
    let mut out = Preprocessed::default();
    for r in records {
        let Some(m) = spec.match_uri(r.method, &r.uri) else {
            out.drops.not_in_spec += 1;
            continue;
        };
        if !(200..300).contains(&r.status) {
            out.drops.non_2xx += 1;
            continue;
        }
        let (params, path_names) = resolved_params(&m.path_bindings, &r.uri, &r.body_params);

        let corpus_params: BTreeMap<String, String> = params
            .iter()
            .filter(|(k, _)| !path_names.contains(*k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        out.corpus.record(&m.operation, &corpus_params);

        let phi = params
            .iter()
            .map(|(k, v)| {
                let inst = deps
                    .resource_of(&m.operation, k)
                    .map(|res| ResourceInstance::new(res, v.clone()));
                (k.clone(), inst)
            })
            .collect();
        out.entries.push(LogEntry {
            entry_id: out.entries.len() as u64,
            t: r.timestamp,
            op: m.operation,
            params,
            phi,
            user: r.user_hint.clone().unwrap_or_else(|| ANONYMOUS.to_string()),
            user_hint: r.user_hint.clone(),
            source_line: r.source_line,
        });
    }
    out
}

pub const ANONYMOUS: &str = "anonymous";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserQueue {
    pub user: String,
    pub entries: Vec<LogEntry>,
}

/// Partitions entries per user. The user is the logged user hint, else the
/// first of `token_params` present in the entry's parameters, else
/// [`ANONYMOUS`].
pub fn split_user_queues(entries: &[LogEntry], token_params: &[String]) -> BTreeMap<String, UserQueue> {
    let mut queues: BTreeMap<String, UserQueue> = BTreeMap::new();
    for e in entries {
        let user = e
            .user_hint
            .clone()
            .or_else(|| token_params.iter().find_map(|p| e.params.get(p).cloned()))
            .unwrap_or_else(|| {
                if e.user.is_empty() {
                    ANONYMOUS.to_string()
                } else {
                    e.user.clone()
                }
            });
        let mut entry = e.clone();
        entry.user = user.clone();
        queues
            .entry(user.clone())
            .or_insert_with(|| UserQueue {
                user,
                entries: Vec::new(),
            })
            .entries
            .push(entry);
    }
    for q in queues.values_mut() {
        q.entries.sort_by_key(|e| (e.t, e.source_line, e.entry_id));
    }
    queues
}
