//! "gitlite": a small deterministic REST service with an approve-before-merge
//! business rule, plus a generator of synthetic request logs for it.
//!
//! Merging requires that the merge request was approved and that its source
//! branch received at least one commit. Merging twice trips a planted 500.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::ingest::{render_json_line, render_nginx_line, FieldMap, LogFormat, RawRequestRecord};
use crate::spec_model::{fill_template, parse_template, Method, OperationId, Segment};
use crate::RandomSource;

pub const GITLITE_OPENAPI: &str = include_str!("../testbed/gitlite.openapi.json");
pub const GITLITE_SCENARIO: &str = include_str!("../testbed/scenario.json");

pub const VISIBILITIES: [&str; 3] = ["private", "internal", "public"];
pub const COMMIT_ACTIONS: [&str; 3] = ["create", "update", "delete"];
pub const MR_STATES: [&str; 2] = ["opened", "merged"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantedFault {
    /// Merging an already merged request answers 500 instead of 405.
    DoubleMerge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Project {
    pub id: u64,
    pub name: String,
    pub visibility: String,
    /// Branches that received at least one commit.
    pub committed_branches: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Commit {
    pub id: u64,
    pub branch: String,
    pub message: String,
    pub action: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MergeRequest {
    pub iid: u64,
    pub source_branch: String,
    pub target_branch: String,
    pub title: String,
    pub approved: bool,
    pub merged: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct GitliteState {
    pub projects: BTreeMap<u64, Project>,
    pub commits: BTreeMap<(u64, u64), Commit>,
    pub merge_requests: BTreeMap<(u64, u64), MergeRequest>,
    pub faults: BTreeSet<PlantedFault>,
    next_project: u64,
    next_commit: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestbedResponse {
    pub status: u16,
    pub body: Value,
}

fn reply(status: u16, body: Value) -> TestbedResponse {
    TestbedResponse { status, body }
}

fn error(status: u16, message: &str) -> TestbedResponse {
    reply(status, json!({ "message": message }))
}

/// A string-valued field from query or body; scalars are stringified.
fn field(params: &BTreeMap<String, Value>, name: &str) -> Option<String> {
    match params.get(name)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn id_segment(s: &str) -> Option<u64> {
    s.parse().ok().filter(|&n| n > 0)
}

impl GitliteState {
    pub fn new(faults: impl IntoIterator<Item = PlantedFault>) -> Self {
        GitliteState {
            faults: faults.into_iter().collect(),
            ..Default::default()
        }
    }

    /// Handles one request. `query` and `body` parameters are merged, body
    /// taking precedence; the path must not carry a query string.
    pub fn handle(
        &mut self,
        method: Method,
        path: &str,
        query: &BTreeMap<String, String>,
        body: Option<&Value>,
    ) -> TestbedResponse {
        let mut params: BTreeMap<String, Value> = query
            .iter()
            .map(|(k, v)| (k.clone(), Value::String(v.clone())))
            .collect();
        if let Some(Value::Object(m)) = body {
            params.extend(m.iter().map(|(k, v)| (k.clone(), v.clone())));
        }
        let segs: Vec<&str> = path.trim_matches('/').split('/').collect();
        use Method::*;
        match (method, segs.as_slice()) {
            (Get, ["projects"]) => self.list_projects(&params),
            (Post, ["projects"]) => self.create_project(&params),
            (Get, ["projects", id]) => match self.project(id) {
                Some(p) => reply(200, project_json(p)),
                None => error(404, "404 Project Not Found"),
            },
            (Post, ["projects", id, "commits"]) => self.create_commit(id, &params),
            (Get, ["projects", id, "merge_requests"]) => self.list_mrs(id, &params),
            (Post, ["projects", id, "merge_requests"]) => self.create_mr(id, &params),
            (Get, ["projects", id, "merge_requests", iid]) => match self.mr(id, iid) {
                Ok(mr) => reply(200, mr_json(id, mr)),
                Err(r) => r,
            },
            (Post, ["projects", id, "merge_requests", iid, "approve"]) => match self.mr_mut(id, iid) {
                Ok(mr) => {
                    mr.approved = true;
                    let body = mr_json(id, mr);
                    reply(200, body)
                }
                Err(r) => r,
            },
            (Put, ["projects", id, "merge_requests", iid, "merge"]) => self.merge(id, iid),
            _ if self.known_shape(&segs) => error(405, "405 Method Not Allowed"),
            _ => error(404, "404 Not Found"),
        }
    }

    fn known_shape(&self, segs: &[&str]) -> bool {
        matches!(
            segs,
            ["projects"]
                | ["projects", _]
                | ["projects", _, "commits"]
                | ["projects", _, "merge_requests"]
                | ["projects", _, "merge_requests", _]
                | ["projects", _, "merge_requests", _, "approve" | "merge"]
        )
    }

    fn project(&self, id: &str) -> Option<&Project> {
        self.projects.get(&id_segment(id)?)
    }

    fn mr_key(&self, id: &str, iid: &str) -> Result<(u64, u64), TestbedResponse> {
        let p = self.project(id).ok_or_else(|| error(404, "404 Project Not Found"))?.id;
        let key = (p, id_segment(iid).unwrap_or(0));
        if self.merge_requests.contains_key(&key) {
            Ok(key)
        } else {
            Err(error(404, "404 Merge Request Not Found"))
        }
    }

    fn mr(&self, id: &str, iid: &str) -> Result<&MergeRequest, TestbedResponse> {
        let key = self.mr_key(id, iid)?;
        Ok(&self.merge_requests[&key])
    }

    fn mr_mut(&mut self, id: &str, iid: &str) -> Result<&mut MergeRequest, TestbedResponse> {
        let key = self.mr_key(id, iid)?;
        Ok(self.merge_requests.get_mut(&key).expect("key checked"))
    }

    fn list_projects(&self, params: &BTreeMap<String, Value>) -> TestbedResponse {
        let per_page = match field(params, "per_page") {
            Some(v) => match v.parse::<usize>() {
                Ok(n) if (1..=100).contains(&n) => n,
                _ => return error(400, "per_page is invalid"),
            },
            None => 20,
        };
        let search = field(params, "search").unwrap_or_default();
        let items: Vec<Value> = self
            .projects
            .values()
            .filter(|p| p.name.contains(&search))
            .take(per_page)
            .map(project_json)
            .collect();
        reply(200, Value::Array(items))
    }

    fn create_project(&mut self, params: &BTreeMap<String, Value>) -> TestbedResponse {
        let Some(name) = field(params, "name").filter(|n| !n.is_empty()) else {
            return error(400, "name is missing");
        };
        let visibility = field(params, "visibility").unwrap_or_else(|| "private".to_string());
        if !VISIBILITIES.contains(&visibility.as_str()) {
            return error(400, "visibility does not have a valid value");
        }
        self.next_project += 1;
        let p = Project {
            id: self.next_project,
            name,
            visibility,
            committed_branches: BTreeSet::new(),
        };
        let body = project_json(&p);
        self.projects.insert(p.id, p);
        reply(201, body)
    }

    fn create_commit(&mut self, id: &str, params: &BTreeMap<String, Value>) -> TestbedResponse {
        let Some(pid) = self.project(id).map(|p| p.id) else {
            return error(404, "404 Project Not Found");
        };
        let Some(branch) = field(params, "branch").filter(|b| !b.is_empty()) else {
            return error(400, "branch is missing");
        };
        let Some(message) = field(params, "commit_message") else {
            return error(400, "commit_message is missing");
        };
        let action = field(params, "action").unwrap_or_else(|| "create".to_string());
        if !COMMIT_ACTIONS.contains(&action.as_str()) {
            return error(400, "action does not have a valid value");
        }
        self.next_commit += 1;
        let c = Commit {
            id: self.next_commit,
            branch: branch.clone(),
            message,
            action,
        };
        let body = json!({
            "id": c.id, "project_id": pid, "branch": c.branch,
            "message": c.message, "action": c.action,
        });
        self.commits.insert((pid, c.id), c);
        self.projects
            .get_mut(&pid)
            .expect("project exists")
            .committed_branches
            .insert(branch);
        reply(201, body)
    }

    fn list_mrs(&self, id: &str, params: &BTreeMap<String, Value>) -> TestbedResponse {
        let Some(pid) = self.project(id).map(|p| p.id) else {
            return error(404, "404 Project Not Found");
        };
        let state = field(params, "state");
        if let Some(s) = &state {
            if !MR_STATES.contains(&s.as_str()) {
                return error(400, "state does not have a valid value");
            }
        }
        let pid_s = pid.to_string();
        let items: Vec<Value> = self
            .merge_requests
            .range((pid, 0)..=(pid, u64::MAX))
            .map(|(_, mr)| mr)
            .filter(|mr| match state.as_deref() {
                Some("merged") => mr.merged,
                Some(_) => !mr.merged,
                None => true,
            })
            .map(|mr| mr_json(&pid_s, mr))
            .collect();
        reply(200, Value::Array(items))
    }

    fn create_mr(&mut self, id: &str, params: &BTreeMap<String, Value>) -> TestbedResponse {
        let Some(pid) = self.project(id).map(|p| p.id) else {
            return error(404, "404 Project Not Found");
        };
        let (Some(source), Some(target)) = (field(params, "source_branch"), field(params, "target_branch")) else {
            return error(400, "source_branch and target_branch are required");
        };
        let Some(title) = field(params, "title").filter(|t| !t.is_empty()) else {
            return error(400, "title is missing");
        };
        if source == target {
            return error(400, "source_branch and target_branch must differ");
        }
        let iid = self
            .merge_requests
            .range((pid, 0)..=(pid, u64::MAX))
            .map(|((_, i), _)| *i)
            .max()
            .unwrap_or(0)
            + 1;
        let mr = MergeRequest {
            iid,
            source_branch: source,
            target_branch: target,
            title,
            approved: false,
            merged: false,
        };
        let body = mr_json(&pid.to_string(), &mr);
        self.merge_requests.insert((pid, iid), mr);
        reply(201, body)
    }

    fn merge(&mut self, id: &str, iid: &str) -> TestbedResponse {
        let key = match self.mr_key(id, iid) {
            Ok(k) => k,
            Err(r) => return r,
        };
        let committed = self.projects[&key.0].committed_branches.clone();
        let double_merge = self.faults.contains(&PlantedFault::DoubleMerge);
        let mr = self.merge_requests.get_mut(&key).expect("key checked");
        if mr.merged {
            return if double_merge {
                error(500, "double-merge nil state")
            } else {
                error(405, "merge blocked: already merged")
            };
        }
        if !mr.approved {
            return error(405, "merge blocked: not approved");
        }
        if !committed.contains(&mr.source_branch) {
            return error(405, "merge blocked: source branch has no commits");
        }
        mr.merged = true;
        let body = mr_json(id, mr);
        reply(200, body)
    }
}

fn project_json(p: &Project) -> Value {
    json!({ "id": p.id, "name": p.name, "visibility": p.visibility })
}

fn mr_json(project: &str, mr: &MergeRequest) -> Value {
    json!({
        "iid": mr.iid,
        "project_id": project.parse::<u64>().unwrap_or(0),
        "source_branch": mr.source_branch,
        "target_branch": mr.target_branch,
        "title": mr.title,
        "state": if mr.merged { "merged" } else { "opened" },
        "approved": mr.approved,
    })
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioStep {
    pub user: String,
    pub op: OperationId,
    /// Path parameters by name, and the query (GET) or body (other methods)
    /// parameters.
    pub params: BTreeMap<String, String>,
    /// Delay after the same user's previous step, or after the start time.
    pub think_time_ms: i64,
    /// Executed but not written to the log when false (rotated away).
    #[serde(default = "default_true")]
    pub logged: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub start_time_ms: i64,
    pub steps: Vec<ScenarioStep>,
    #[serde(default)]
    pub faults: Vec<PlantedFault>,
}

impl ScenarioScript {
    /// The shipped scenario: a commit and merge request on project 15,
    /// approved and merged half an hour later, amid other users' traffic.
    pub fn default_scenario() -> Self {
        serde_json::from_str(GITLITE_SCENARIO).expect("shipped scenario parses")
    }
}

/// Splits a step into a concrete request path, query and body.
fn concretize(step: &ScenarioStep) -> (Method, String, BTreeMap<String, String>, BTreeMap<String, Value>) {
    let (method_s, template) = step.op.as_str().split_once(' ').unwrap_or(("GET", step.op.as_str()));
    let method: Method = method_s.parse().unwrap_or(Method::Get);
    let segments = parse_template(template);
    let path_names: BTreeSet<&str> = segments
        .iter()
        .filter_map(|s| match s {
            Segment::Param(p) => Some(p.as_str()),
            Segment::Literal(_) => None,
        })
        .collect();
    let path = fill_template(&segments, &step.params);
    let rest = step.params.iter().filter(|(k, _)| !path_names.contains(k.as_str()));
    let (mut query, mut body) = (BTreeMap::new(), BTreeMap::new());
    for (k, v) in rest {
        if method.has_body() {
            body.insert(k.clone(), Value::String(v.clone()));
        } else {
            query.insert(k.clone(), v.clone());
        }
    }
    (method, path, query, body)
}

/// Runs the script on fresh state and renders one log line per logged step.
/// Users advance on independent clocks; steps are executed and emitted in
/// timestamp order (script order on ties).
pub fn generate_hrlogs(script: &ScenarioScript, format: LogFormat, rng: &mut RandomSource) -> Vec<String> {
    let mut clocks: BTreeMap<&str, i64> = BTreeMap::new();
    let mut timed: Vec<(i64, usize)> = Vec::with_capacity(script.steps.len());
    for (i, step) in script.steps.iter().enumerate() {
        let clock = clocks.entry(step.user.as_str()).or_insert(script.start_time_ms);
        *clock += step.think_time_ms.max(0);
        timed.push((*clock, i));
    }
    timed.sort();

    let mut state = GitliteState::new(script.faults.iter().copied());
    let fields = FieldMap::default();
    let mut lines = Vec::new();
    for (t, i) in timed {
        let step = &script.steps[i];
        let (method, path, query, body) = concretize(step);
        let body_value = (!body.is_empty()).then(|| Value::Object(body.clone().into_iter().collect()));
        let resp = state.handle(method, &path, &query, body_value.as_ref());
        if !step.logged {
            continue;
        }
        let uri = if query.is_empty() {
            path
        } else {
            let qs = form_urlencoded::Serializer::new(String::new())
                .extend_pairs(query.iter())
                .finish();
            format!("{path}?{qs}")
        };
        let record = RawRequestRecord {
            timestamp: t,
            method,
            uri,
            status: resp.status,
            body_params: body,
            user_hint: Some(step.user.clone()),
            source_line: lines.len() + 1,
        };
        lines.push(match format {
            LogFormat::Nginx => {
                let addr = format!("10.0.{}.{}", rng.random_range(0..4), rng.random_range(2..250));
                render_nginx_line(&record, &addr, resp.body.to_string().len())
            }
            LogFormat::Json => render_json_line(&record, &fields),
        });
    }
    lines
}

/// Gitlite behind a localhost HTTP listener; state persists across requests.
pub struct TestbedServer {
    server: Arc<tiny_http::Server>,
    handle: Option<JoinHandle<()>>,
    pub state: Arc<Mutex<GitliteState>>,
    port: u16,
}

impl TestbedServer {
    /// Binds `addr` (port 0 picks a free port) and serves in a background
    /// thread until [`TestbedServer::stop`] or drop.
    pub fn start(addr: &str, faults: impl IntoIterator<Item = PlantedFault>) -> std::io::Result<Self> {
        let server = tiny_http::Server::http(addr).map_err(std::io::Error::other)?;
        let port = server.server_addr().to_ip().map(|a| a.port()).unwrap_or(0);
        let server = Arc::new(server);
        let state = Arc::new(Mutex::new(GitliteState::new(faults)));
        let handle = {
            let server = Arc::clone(&server);
            let state = Arc::clone(&state);
            std::thread::spawn(move || {
                for request in server.incoming_requests() {
                    serve_one(request, &state);
                }
            })
        };
        Ok(TestbedServer {
            server,
            handle: Some(handle),
            state,
            port,
        })
    }

    pub fn base_url(&self) -> String {
        format!("http://127.0.0.1:{}", self.port)
    }

    pub fn stop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }

    /// Blocks serving requests on the calling thread.
    pub fn run_forever(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for TestbedServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn serve_one(mut request: tiny_http::Request, state: &Mutex<GitliteState>) {
    let mut raw = String::new();
    let resp = match request.as_reader().read_to_string(&mut raw) {
        Err(_) => error(400, "unreadable body"),
        Ok(_) => {
            let url = request.url().to_string();
            let (path, qs) = url.split_once('?').unwrap_or((url.as_str(), ""));
            let path = crate::spec_model::decode(path);
            let query: BTreeMap<String, String> = form_urlencoded::parse(qs.as_bytes()).into_owned().collect();
            let body: Option<Value> = if raw.trim().is_empty() {
                None
            } else {
                serde_json::from_str(&raw).ok()
            };
            match (
                request.method().as_str().parse::<Method>(),
                raw.trim().is_empty() || body.is_some(),
            ) {
                (Ok(m), true) => {
                    state
                        .lock()
                        .unwrap_or_else(|e| e.into_inner())
                        .handle(m, &path, &query, body.as_ref())
                }
                (Ok(_), false) => error(400, "body is not JSON"),
                (Err(_), _) => error(405, "405 Method Not Allowed"),
            }
        }
    };
    let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
    let response = tiny_http::Response::from_string(resp.body.to_string())
        .with_status_code(resp.status)
        .with_header(header);
    let _ = request.respond(response);
}
