//! Serial execution of completed sequences with runtime binding resolution.
//!
//! A bound parameter takes the identifier extracted from the response of the
//! entry that created its instance. When that entry failed or returned no
//! identifier, the logged value is sent instead and the fallback is flagged.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::enhance::{PhiPrime, Seed};
use crate::ingest::LogEntry;
use crate::resources::{HeuristicClassifier, ResourceTree};
use crate::spec_model::{fill_template, parse_template, Method, ParamLocation, SchemaType, Segment, ServiceSpec};
use crate::testbed::{GitliteState, PlantedFault};

/// Status recorded when no HTTP response was received.
pub const TRANSPORT_ERROR: u16 = 0;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ExecError {
    #[error("target unreachable after {0} consecutive transport failures")]
    TargetUnreachable(usize),
    #[error("authentication token missing: environment variable {0} is not set")]
    AuthMissing(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConcreteRequest {
    pub method: Method,
    pub path: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub query: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<Value>,
}

impl ConcreteRequest {
    pub fn uri(&self) -> String {
        if self.query.is_empty() {
            return self.path.clone();
        }
        let qs = form_urlencoded::Serializer::new(String::new())
            .extend_pairs(self.query.iter())
            .finish();
        format!("{}?{qs}", self.path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub entry_index: usize,
    pub op: crate::spec_model::OperationId,
    /// HTTP status, or [`TRANSPORT_ERROR`].
    pub status: u16,
    pub body: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extracted_ids: BTreeMap<String, String>,
    pub latency_ms: u64,
    pub request: ConcreteRequest,
    /// Bound parameters that fell back to their logged value.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fallbacks: Vec<String>,
}

impl ResponseRecord {
    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

/// One executable sequence: entries, their binding map, and the bindings a
/// fault mutation disabled.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSequence {
    pub entries: Vec<LogEntry>,
    #[serde(with = "crate::enhance::phi_prime_serde")]
    pub phi_prime: PhiPrime,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub unbound: BTreeSet<(usize, String)>,
}

impl From<&Seed> for TestSequence {
    fn from(seed: &Seed) -> Self {
        TestSequence {
            entries: seed.entries.clone(),
            phi_prime: seed.phi_prime.clone(),
            unbound: BTreeSet::new(),
        }
    }
}

/// Raw reply from a target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetReply {
    pub status: u16,
    pub body: String,
    pub latency_ms: u64,
}

pub trait Target {
    /// Called before each sequence; in-process targets start from fresh state.
    fn begin_sequence(&mut self);
    /// `Err` carries a transport-level failure description.
    fn send(&mut self, req: &ConcreteRequest) -> Result<TargetReply, String>;
}

/// The gitlite testbed, in process. Every request costs a fixed simulated
/// latency so campaign budgets are deterministic.
pub struct InProcessTarget {
    faults: Vec<PlantedFault>,
    state: GitliteState,
    pub latency_ms: u64,
}

pub const IN_PROCESS_LATENCY_MS: u64 = 5;

impl InProcessTarget {
    pub fn new(faults: impl IntoIterator<Item = PlantedFault>) -> Self {
        let faults: Vec<PlantedFault> = faults.into_iter().collect();
        InProcessTarget {
            state: GitliteState::new(faults.iter().copied()),
            faults,
            latency_ms: IN_PROCESS_LATENCY_MS,
        }
    }

    pub fn state(&self) -> &GitliteState {
        &self.state
    }
}

impl Target for InProcessTarget {
    fn begin_sequence(&mut self) {
        self.state = GitliteState::new(self.faults.iter().copied());
    }

    fn send(&mut self, req: &ConcreteRequest) -> Result<TargetReply, String> {
        let path = crate::spec_model::decode(&req.path);
        let resp = self.state.handle(req.method, &path, &req.query, req.body.as_ref());
        Ok(TargetReply {
            status: resp.status,
            body: resp.body.to_string(),
            latency_ms: self.latency_ms,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthConfig {
    /// Header name, e.g. `Authorization` or `PRIVATE-TOKEN`.
    pub header: Option<String>,
    /// Environment variable holding the token.
    pub token_env: Option<String>,
    /// Prefix placed before the token, e.g. `Bearer `.
    #[serde(default)]
    pub prefix: String,
}

impl AuthConfig {
    pub fn resolve(&self) -> Result<Option<(String, String)>, ExecError> {
        let (Some(header), Some(env)) = (&self.header, &self.token_env) else {
            return Ok(None);
        };
        let token = std::env::var(env).map_err(|_| ExecError::AuthMissing(env.clone()))?;
        Ok(Some((header.clone(), format!("{}{token}", self.prefix))))
    }
}

/// A live HTTP service; its state persists across sequences.
pub struct HttpTarget {
    base_url: String,
    auth: Option<(String, String)>,
    agent: ureq::Agent,
}

impl HttpTarget {
    pub fn new(base_url: &str, auth: &AuthConfig, timeout: Duration) -> Result<Self, ExecError> {
        assert!(!timeout.is_zero(), "HTTP timeout must be positive");
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpTarget {
            base_url: base_url.trim_end_matches('/').to_string(),
            auth: auth.resolve()?,
            agent,
        })
    }
}

impl Target for HttpTarget {
    fn begin_sequence(&mut self) {}

    fn send(&mut self, req: &ConcreteRequest) -> Result<TargetReply, String> {
        let url = format!("{}{}", self.base_url, req.uri());
        let mut builder = ureq::http::Request::builder().method(req.method.as_str()).uri(&url);
        if let Some((h, v)) = &self.auth {
            builder = builder.header(h.as_str(), v.as_str());
        }
        let body = match &req.body {
            Some(b) => {
                builder = builder.header("Content-Type", "application/json");
                b.to_string()
            }
            None => String::new(),
        };
        let request = builder.body(body).map_err(|e| e.to_string())?;
        let started = Instant::now();
        let mut resp = self.agent.run(request).map_err(|e| e.to_string())?;
        let body = resp.body_mut().read_to_string().unwrap_or_default();
        Ok(TargetReply {
            status: resp.status().as_u16(),
            body,
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    /// Keys probed in order for every resource; `<singular>_id` is appended.
    pub default_keys: Vec<String>,
    /// Per-resource key lists replacing the defaults.
    #[serde(default)]
    pub overrides: BTreeMap<String, Vec<String>>,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            default_keys: vec!["id".into(), "iid".into()],
            overrides: BTreeMap::new(),
        }
    }
}

impl ExtractionConfig {
    pub fn keys_for(&self, resource: &str) -> Vec<String> {
        if let Some(keys) = self.overrides.get(resource) {
            return keys.clone();
        }
        let mut keys = self.default_keys.clone();
        if let Some(Segment::Literal(last)) = parse_template(resource).last() {
            keys.push(format!("{}_id", HeuristicClassifier::default().singular(last)));
        }
        keys
    }
}

/// Probes a JSON body for the resource's identifier. Keys may be
/// `/`-separated paths into nested objects.
pub fn extract_instance_id(body: &str, resource: &str, cfg: &ExtractionConfig) -> Option<String> {
    let value: Value = serde_json::from_str(body).ok()?;
    cfg.keys_for(resource).iter().find_map(|key| {
        let pointer = format!("/{}", key.trim_start_matches('/'));
        match value.pointer(&pointer)? {
            Value::String(s) => Some(s.clone()),
            Value::Number(n) => Some(n.to_string()),
            Value::Bool(b) => Some(b.to_string()),
            _ => None,
        }
    })
}

/// Converts a textual value to the JSON type its schema declares; values
/// that do not parse are sent as strings.
pub fn coerce(value: &str, schema: SchemaType) -> Value {
    match schema {
        SchemaType::String => Value::String(value.to_string()),
        SchemaType::Integer => value
            .parse::<i64>()
            .map(Value::from)
            .unwrap_or_else(|_| Value::String(value.to_string())),
        SchemaType::Number => value
            .parse::<f64>()
            .ok()
            .and_then(serde_json::Number::from_f64)
            .map(Value::Number)
            .unwrap_or_else(|| Value::String(value.to_string())),
        SchemaType::Boolean => match value {
            "true" => Value::Bool(true),
            "false" => Value::Bool(false),
            _ => Value::String(value.to_string()),
        },
        SchemaType::Array | SchemaType::Object => {
            serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()))
        }
    }
}

pub struct Executor<'a> {
    pub spec: &'a ServiceSpec,
    pub tree: &'a ResourceTree,
    pub extraction: ExtractionConfig,
    pub target: Box<dyn Target + 'a>,
    /// Consecutive transport failures tolerated before giving up.
    pub max_transport_failures: usize,
    consecutive_failures: usize,
}

impl<'a> Executor<'a> {
    pub fn new(spec: &'a ServiceSpec, tree: &'a ResourceTree, target: Box<dyn Target + 'a>) -> Self {
        Executor {
            spec,
            tree,
            extraction: ExtractionConfig::default(),
            target,
            max_transport_failures: 5,
            consecutive_failures: 0,
        }
    }

    /// Builds the concrete request for entry `k` given the records so far.
    pub fn build_request(
        &self,
        seq: &TestSequence,
        k: usize,
        done: &[ResponseRecord],
    ) -> (ConcreteRequest, Vec<String>) {
        let entry = &seq.entries[k];
        let op = self.spec.operation(&entry.op);
        let (method, segments) = match op {
            Some(op) => (op.method, op.path.clone()),
            None => {
                let (m, t) = entry.op.as_str().split_once(' ').unwrap_or(("GET", entry.op.as_str()));
                (m.parse().unwrap_or(Method::Get), parse_template(t))
            }
        };
        let path_names: BTreeSet<&str> = segments
            .iter()
            .filter_map(|s| match s {
                Segment::Param(p) => Some(p.as_str()),
                Segment::Literal(_) => None,
            })
            .collect();

        let mut fallbacks = Vec::new();
        let mut path_values = BTreeMap::new();
        let mut query = BTreeMap::new();
        let mut body = serde_json::Map::new();
        for (name, raw) in &entry.params {
            let mut value = raw.clone();
            if let Some(&j) = seq.phi_prime.get(&(k, name.clone())) {
                if !seq.unbound.contains(&(k, name.clone())) {
                    match self.resolved_id(seq, j, done) {
                        Some(id) => value = id,
                        None => fallbacks.push(name.clone()),
                    }
                }
            }
            let decl = op.and_then(|o| o.param(name));
            let location = match decl {
                Some(d) => d.location,
                None if path_names.contains(name.as_str()) => ParamLocation::Path,
                None if method.has_body() => ParamLocation::Body,
                None => ParamLocation::Query,
            };
            match location {
                ParamLocation::Path => {
                    path_values.insert(name.clone(), value);
                }
                ParamLocation::Query | ParamLocation::Header => {
                    query.insert(name.clone(), value);
                }
                ParamLocation::Body => {
                    let schema = decl.map_or(SchemaType::String, |d| d.schema_type);
                    body.insert(name.clone(), coerce(&value, schema));
                }
            }
        }
        let request = ConcreteRequest {
            method,
            path: format!(
                "{}{}",
                self.spec.base_path.trim_end_matches('/'),
                fill_template(&segments, &path_values)
            ),
            query,
            body: (method.has_body()
                && (!body.is_empty()
                    || op.is_some_and(|o| o.parameters.iter().any(|p| p.location == ParamLocation::Body))))
            .then_some(Value::Object(body)),
        };
        (request, fallbacks)
    }

    fn resolved_id(&self, seq: &TestSequence, j: usize, done: &[ResponseRecord]) -> Option<String> {
        let record = done.get(j).filter(|r| r.is_success())?;
        let resource = self.tree.created_by(&seq.entries[j].op)?;
        record.extracted_ids.get(&resource.name).cloned()
    }

    /// Executes the entries strictly in order on the target.
    pub fn execute(&mut self, seq: &TestSequence) -> Result<Vec<ResponseRecord>, ExecError> {
        self.target.begin_sequence();
        let mut records: Vec<ResponseRecord> = Vec::with_capacity(seq.entries.len());
        for k in 0..seq.entries.len() {
            let (request, fallbacks) = self.build_request(seq, k, &records);
            let entry = &seq.entries[k];
            let record = match self.target.send(&request) {
                Ok(reply) => {
                    self.consecutive_failures = 0;
                    let mut extracted_ids = BTreeMap::new();
                    if (200..300).contains(&reply.status) {
                        if let Some(res) = self.tree.created_by(&entry.op) {
                            if let Some(id) = extract_instance_id(&reply.body, &res.name, &self.extraction) {
                                extracted_ids.insert(res.name.clone(), id);
                            }
                        }
                    }
                    ResponseRecord {
                        entry_index: k,
                        op: entry.op.clone(),
                        status: reply.status,
                        body: reply.body,
                        extracted_ids,
                        latency_ms: reply.latency_ms,
                        request,
                        fallbacks,
                    }
                }
                Err(e) => {
                    self.consecutive_failures += 1;
                    log::warn!("transport error on {}: {e}", entry.op);
                    if self.consecutive_failures >= self.max_transport_failures {
                        return Err(ExecError::TargetUnreachable(self.consecutive_failures));
                    }
                    ResponseRecord {
                        entry_index: k,
                        op: entry.op.clone(),
                        status: TRANSPORT_ERROR,
                        body: e,
                        extracted_ids: BTreeMap::new(),
                        latency_ms: 0,
                        request,
                        fallbacks,
                    }
                }
            };
            records.push(record);
        }
        Ok(records)
    }

    /// Re-sends recorded requests verbatim on a fresh sequence.
    pub fn replay(&mut self, requests: &[ConcreteRequest]) -> Result<Vec<TargetReply>, ExecError> {
        self.target.begin_sequence();
        let mut out = Vec::with_capacity(requests.len());
        for r in requests {
            let reply = self.target.send(r).map_err(|e| {
                log::warn!("replay transport error: {e}");
                ExecError::TargetUnreachable(1)
            })?;
            out.push(reply);
        }
        Ok(out)
    }
}
