//! Resource identification and parameter-to-resource dependency inference.
//!
//! Resources are named by the path template of the operation that creates
//! them (`/projects`, `/projects/{id}/merge_requests`, ...). A resource whose
//! name is a segment-wise prefix of another becomes its parent. Which POSTs
//! create and which GETs list is decided by a [`Classifier`]: the default
//! heuristic one works offline and is deterministic, the LLM-backed one asks
//! a chat-completion endpoint using the prompts from [`build_prompt`].

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::spec_model::{
    parse_template, render_template, ApiOperation, Method, OperationId, ParamDecl, ParamLocation, Segment, ServiceSpec,
};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("classifier unavailable: {0}")]
    Unavailable(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("prompt context is missing field `{0}`")]
    MissingContextField(&'static str),
}

pub const DEFAULT_ACTION_VERBS: &[&str] = &[
    "share", "approve", "merge", "retry", "cancel", "star", "unstar", "archive", "transfer",
];

const DEFAULT_SINGULAR_OVERRIDES: &[(&str, &str)] = &[
    ("branches", "branch"),
    ("statuses", "status"),
    ("addresses", "address"),
    ("repositories", "repository"),
    ("entries", "entry"),
    ("policies", "policy"),
    ("categories", "category"),
    ("libraries", "library"),
    ("aliases", "alias"),
    ("indices", "index"),
];

/// Which creation/retrieval/dependency decisions to make and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClassifierConfig {
    Heuristic {
        #[serde(default = "default_verbs")]
        action_verbs: Vec<String>,
        #[serde(default)]
        singular_overrides: BTreeMap<String, String>,
    },
    Llm {
        endpoint: String,
        model: String,
        api_key_env: String,
        #[serde(default = "default_llm_timeout")]
        timeout_ms: u64,
        #[serde(default = "default_llm_retries")]
        retries: u32,
    },
}

fn default_verbs() -> Vec<String> {
    DEFAULT_ACTION_VERBS.iter().map(|s| s.to_string()).collect()
}

fn default_llm_timeout() -> u64 {
    30_000
}

fn default_llm_retries() -> u32 {
    2
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig::Heuristic {
            action_verbs: default_verbs(),
            singular_overrides: BTreeMap::new(),
        }
    }
}

impl ClassifierConfig {
    pub fn build(&self) -> Box<dyn Classifier> {
        match self {
            ClassifierConfig::Heuristic {
                action_verbs,
                singular_overrides,
            } => Box::new(HeuristicClassifier::new(
                action_verbs.clone(),
                singular_overrides.clone(),
            )),
            ClassifierConfig::Llm {
                endpoint,
                model,
                api_key_env,
                timeout_ms,
                retries,
            } => Box::new(LlmClassifier {
                endpoint: endpoint.clone(),
                model: model.clone(),
                api_key_env: api_key_env.clone(),
                timeout: Duration::from_millis(*timeout_ms),
                retries: *retries,
            }),
        }
    }
}

pub trait Classifier {
    fn is_creation(&self, op: &ApiOperation) -> Result<bool, ClassifierError>;
    fn is_retrieval(&self, op: &ApiOperation) -> Result<bool, ClassifierError>;
    /// Returns the name of the resource `param` of `op` refers to, if any.
    fn dependency(
        &self,
        op: &ApiOperation,
        param: &ParamDecl,
        tree: &ResourceTree,
    ) -> Result<Option<String>, ClassifierError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resource {
    pub name: String,
    pub creation_op: OperationId,
    pub retrieval_op: Option<OperationId>,
    pub parent: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceTree {
    pub resources: BTreeMap<String, Resource>,
    pub roots: Vec<String>,
    pub children: BTreeMap<String, Vec<String>>,
}

impl ResourceTree {
    pub fn get(&self, name: &str) -> Option<&Resource> {
        self.resources.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.resources.contains_key(name)
    }

    pub fn roots(&self) -> impl Iterator<Item = &Resource> {
        self.roots.iter().filter_map(|r| self.resources.get(r))
    }

    /// Root resources have depth 0.
    pub fn depth(&self, name: &str) -> usize {
        let mut depth = 0;
        let mut cur = self.resources.get(name).and_then(|r| r.parent.as_deref());
        while let Some(p) = cur {
            depth += 1;
            cur = self.resources.get(p).and_then(|r| r.parent.as_deref());
        }
        depth
    }

    pub fn is_ancestor(&self, ancestor: &str, of: &str) -> bool {
        let mut cur = self.resources.get(of).and_then(|r| r.parent.as_deref());
        while let Some(p) = cur {
            if p == ancestor {
                return true;
            }
            cur = self.resources.get(p).and_then(|r| r.parent.as_deref());
        }
        false
    }

    /// The resource created by `op`, if it is a creation operation.
    pub fn created_by(&self, op: &OperationId) -> Option<&Resource> {
        self.resources.values().find(|r| &r.creation_op == op)
    }
}

/// Parameter-to-resource mapping, total over every declared parameter.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DependencyMap {
    pub entries: BTreeMap<(OperationId, String), Option<String>>,
}

#[derive(Serialize, Deserialize)]
struct DependencyRow {
    op: OperationId,
    param: String,
    resource: Option<String>,
}

impl Serialize for DependencyMap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<DependencyRow> = self
            .entries
            .iter()
            .map(|((op, param), resource)| DependencyRow {
                op: op.clone(),
                param: param.clone(),
                resource: resource.clone(),
            })
            .collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for DependencyMap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = Vec::<DependencyRow>::deserialize(d)?;
        Ok(DependencyMap {
            entries: rows.into_iter().map(|r| ((r.op, r.param), r.resource)).collect(),
        })
    }
}

impl DependencyMap {
    pub fn resource_of(&self, op: &OperationId, param: &str) -> Option<&str> {
        self.entries
            .get(&(op.clone(), param.to_string()))
            .and_then(|r| r.as_deref())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Output of the whole analysis stage.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceModel {
    pub tree: ResourceTree,
    pub deps: DependencyMap,
}

pub fn identify_creation_operations(
    spec: &ServiceSpec,
    classifier: &dyn Classifier,
) -> Result<BTreeSet<OperationId>, ClassifierError> {
    let mut out = BTreeSet::new();
    for op in spec.operations.values().filter(|o| o.method == Method::Post) {
        if classifier.is_creation(op)? {
            out.insert(op.id.clone());
        }
    }
    Ok(out)
}

pub fn identify_retrieval_operations(
    spec: &ServiceSpec,
    classifier: &dyn Classifier,
) -> Result<BTreeSet<OperationId>, ClassifierError> {
    let mut out = BTreeSet::new();
    for op in spec.operations.values().filter(|o| o.method == Method::Get) {
        if classifier.is_retrieval(op)? {
            out.insert(op.id.clone());
        }
    }
    Ok(out)
}

/// Segment shape with parameter names erased, used for prefix comparisons.
fn shape(segments: &[Segment]) -> Vec<Option<&str>> {
    segments
        .iter()
        .map(|s| match s {
            Segment::Literal(l) => Some(l.as_str()),
            Segment::Param(_) => None,
        })
        .collect()
}

fn is_proper_prefix(prefix: &[Segment], of: &[Segment]) -> bool {
    prefix.len() < of.len() && shape(prefix) == shape(&of[..prefix.len()])
}

pub fn build_resource_tree(
    spec: &ServiceSpec,
    creations: &BTreeSet<OperationId>,
    retrievals: &BTreeSet<OperationId>,
) -> ResourceTree {
    let mut resources = BTreeMap::new();
    for id in creations {
        let Some(op) = spec.operation(id) else { continue };
        let name = op.template();
        let retrieval_op = retrievals
            .iter()
            .filter_map(|r| spec.operation(r))
            .find(|r| shape(&r.path) == shape(&op.path))
            .map(|r| r.id.clone());
        resources.insert(
            name.clone(),
            Resource {
                name,
                creation_op: id.clone(),
                retrieval_op,
                parent: None,
            },
        );
    }

    let names: Vec<(String, Vec<Segment>)> = resources.keys().map(|n| (n.clone(), parse_template(n))).collect();
    for (name, segs) in &names {
        let parent = names
            .iter()
            .filter(|(other, osegs)| other != name && is_proper_prefix(osegs, segs))
            .max_by_key(|(other, osegs)| (osegs.len(), std::cmp::Reverse(other.clone())))
            .map(|(other, _)| other.clone());
        if let Some(r) = resources.get_mut(name) {
            r.parent = parent;
        }
    }

    let mut roots = Vec::new();
    let mut children: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in resources.values() {
        match &r.parent {
            Some(p) => children.entry(p.clone()).or_default().push(r.name.clone()),
            None => roots.push(r.name.clone()),
        }
    }
    ResourceTree {
        resources,
        roots,
        children,
    }
}

pub fn infer_param_dependencies(
    spec: &ServiceSpec,
    tree: &ResourceTree,
    classifier: &dyn Classifier,
) -> Result<DependencyMap, ClassifierError> {
    let mut entries = BTreeMap::new();
    for op in spec.operations.values() {
        for param in &op.parameters {
            let resource = classifier.dependency(op, param, tree)?.filter(|r| tree.contains(r));
            entries.insert((op.id.clone(), param.name.clone()), resource);
        }
    }
    Ok(DependencyMap { entries })
}

/// Runs the three analysis steps with one classifier.
pub fn analyze(spec: &ServiceSpec, classifier: &dyn Classifier) -> Result<ResourceModel, ClassifierError> {
    let creations = identify_creation_operations(spec, classifier)?;
    let retrievals = identify_retrieval_operations(spec, classifier)?;
    let tree = build_resource_tree(spec, &creations, &retrievals);
    let deps = infer_param_dependencies(spec, &tree, classifier)?;
    Ok(ResourceModel { tree, deps })
}

#[derive(Debug, Clone)]
pub struct HeuristicClassifier {
    action_verbs: BTreeSet<String>,
    singular_overrides: BTreeMap<String, String>,
}

impl Default for HeuristicClassifier {
    fn default() -> Self {
        HeuristicClassifier::new(default_verbs(), BTreeMap::new())
    }
}

impl HeuristicClassifier {
    pub fn new(action_verbs: Vec<String>, overrides: BTreeMap<String, String>) -> Self {
        let mut singular_overrides: BTreeMap<String, String> = DEFAULT_SINGULAR_OVERRIDES
            .iter()
            .map(|(p, s)| (p.to_string(), s.to_string()))
            .collect();
        singular_overrides.extend(overrides);
        HeuristicClassifier {
            action_verbs: action_verbs.into_iter().collect(),
            singular_overrides,
        }
    }

    pub fn singular(&self, word: &str) -> String {
        if let Some(s) = self.singular_overrides.get(word) {
            return s.clone();
        }
        word.strip_suffix('s').unwrap_or(word).to_string()
    }

    fn resource_singular(&self, resource: &str) -> Option<String> {
        match parse_template(resource).last() {
            Some(Segment::Literal(l)) => Some(self.singular(l)),
            _ => None,
        }
    }
}

impl Classifier for HeuristicClassifier {
    fn is_creation(&self, op: &ApiOperation) -> Result<bool, ClassifierError> {
        Ok(op.method == Method::Post && op.trailing_literal().is_some_and(|l| !self.action_verbs.contains(l)))
    }

    fn is_retrieval(&self, op: &ApiOperation) -> Result<bool, ClassifierError> {
        Ok(op.method == Method::Get && op.trailing_literal().is_some())
    }

    fn dependency(
        &self,
        op: &ApiOperation,
        param: &ParamDecl,
        tree: &ResourceTree,
    ) -> Result<Option<String>, ClassifierError> {
        if param.location == ParamLocation::Path {
            let Some(pos) = op
                .path
                .iter()
                .position(|s| matches!(s, Segment::Param(p) if p == &param.name))
            else {
                return Ok(None);
            };
            let prefix = shape(&op.path[..pos]);
            let hit = tree.resources.keys().find(|name| {
                shape(&parse_template(name)) == prefix
                    && (param.name == "id"
                        || param.name == "iid"
                        || self
                            .resource_singular(name)
                            .is_some_and(|s| param.name == format!("{s}_id")))
            });
            return Ok(hit.cloned());
        }

        // Query/body parameters: `<singular>_id`, `<singular>` or `*_<singular>`.
        // Among several candidates prefer the one sharing the longest prefix
        // with the operation's own path.
        let own = shape(&op.path);
        let best = tree
            .resources
            .keys()
            .filter(|name| {
                self.resource_singular(name).is_some_and(|s| {
                    param.name == format!("{s}_id") || param.name == s || param.name.ends_with(&format!("_{s}"))
                })
            })
            .max_by_key(|name| {
                let segs = parse_template(name);
                let sh = shape(&segs);
                let common = sh.iter().zip(&own).take_while(|(a, b)| a == b).count();
                (common, std::cmp::Reverse((*name).clone()))
            });
        Ok(best.cloned())
    }
}

/// Prompt kinds used by the LLM-backed classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptTemplate {
    Creation,
    Retrieval,
    Dependency,
}

#[derive(Debug, Clone, Default)]
pub struct PromptContext {
    /// e.g. `POST /projects`
    pub operation: Option<String>,
    pub description: Option<String>,
    pub param: Option<String>,
    pub resources: Option<Vec<String>>,
}

impl PromptContext {
    pub fn for_operation(op: &ApiOperation) -> Self {
        PromptContext {
            operation: Some(format!("{} {}", op.method, op.template())),
            ..Default::default()
        }
    }
}

pub fn build_prompt(template: PromptTemplate, ctx: &PromptContext) -> Result<String, PromptError> {
    let operation = ctx
        .operation
        .as_deref()
        .ok_or(PromptError::MissingContextField("operation"))?;
    let description = ctx
        .description
        .as_deref()
        .map(|d| format!("Description: {d}\n"))
        .unwrap_or_default();
    Ok(match template {
        PromptTemplate::Creation => format!(
            "You are analysing a REST API.\n\
             Operation: {operation}\n{description}\
             Does this operation create a new resource (as opposed to acting on an existing one)?\n\
             Answer with exactly one word: yes or no."
        ),
        PromptTemplate::Retrieval => format!(
            "You are analysing a REST API.\n\
             Operation: {operation}\n{description}\
             Does this operation retrieve a collection of resources without requiring a resource identifier?\n\
             Answer with exactly one word: yes or no."
        ),
        PromptTemplate::Dependency => {
            let param = ctx.param.as_deref().ok_or(PromptError::MissingContextField("param"))?;
            let resources = ctx
                .resources
                .as_ref()
                .ok_or(PromptError::MissingContextField("resources"))?;
            let listed = if resources.is_empty() {
                "(none)".to_string()
            } else {
                resources
                    .iter()
                    .map(|r| format!("- {r}"))
                    .collect::<Vec<_>>()
                    .join("\n")
            };
            format!(
                "You are analysing a REST API.\n\
                 Operation: {operation}\n{description}\
                 Parameter: {param}\n\
                 Known resources:\n{listed}\n\
                 Does the value of this parameter refer to an existing instance of one of the known resources?\n\
                 Answer with exactly the resource name from the list, or None."
            )
        }
    })
}

/// Classifier that asks a chat-completion endpoint.
#[derive(Debug, Clone)]
pub struct LlmClassifier {
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout: Duration,
    pub retries: u32,
}

enum Answer {
    YesNo,
    Resource(Vec<String>),
}

impl LlmClassifier {
    fn ask(&self, prompt: &str) -> Result<String, ClassifierError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Ok(key) = std::env::var(&self.api_key_env) {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send(body.to_string())
            .map_err(|e| ClassifierError::Unavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(ClassifierError::Unavailable(format!(
                "endpoint returned {}",
                resp.status()
            )));
        }
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ClassifierError::Unavailable(e.to_string()))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| ClassifierError::Unavailable(format!("bad response body: {e}")))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| ClassifierError::Unavailable("response has no message content".into()))
    }

    /// Queries up to `retries + 1` times and keeps the first well-formed answer.
    fn query(&self, prompt: &str, shape: Answer) -> Result<Option<String>, ClassifierError> {
        let mut last = None;
        for _ in 0..=self.retries {
            let raw = match self.ask(prompt) {
                Ok(raw) => raw,
                Err(e) => {
                    last = Some(e);
                    continue;
                }
            };
            match parse_answer(&raw, &shape) {
                Some(answer) => return Ok(answer),
                None => last = Some(ClassifierError::Unavailable(format!("malformed answer {raw:?}"))),
            }
        }
        Err(last.unwrap_or_else(|| ClassifierError::Unavailable("no attempts made".into())))
    }

    fn yes_no(&self, template: PromptTemplate, op: &ApiOperation) -> Result<bool, ClassifierError> {
        let prompt = build_prompt(template, &PromptContext::for_operation(op))
            .map_err(|e| ClassifierError::Unavailable(e.to_string()))?;
        Ok(self.query(&prompt, Answer::YesNo)?.is_some())
    }
}

/// `Some(Some(_))` for yes / a resource, `Some(None)` for no / None, `None`
/// when the reply does not have the expected shape.
fn parse_answer(raw: &str, shape: &Answer) -> Option<Option<String>> {
    let trimmed = raw.trim().trim_end_matches('.').trim_matches('`').trim();
    match shape {
        Answer::YesNo => match trimmed.to_ascii_lowercase().as_str() {
            "yes" => Some(Some("yes".into())),
            "no" => Some(None),
            _ => None,
        },
        Answer::Resource(known) => {
            if trimmed.eq_ignore_ascii_case("none") {
                Some(None)
            } else if known.iter().any(|k| k == trimmed) {
                Some(Some(trimmed.to_string()))
            } else {
                None
            }
        }
    }
}

impl Classifier for LlmClassifier {
    fn is_creation(&self, op: &ApiOperation) -> Result<bool, ClassifierError> {
        self.yes_no(PromptTemplate::Creation, op)
    }

    fn is_retrieval(&self, op: &ApiOperation) -> Result<bool, ClassifierError> {
        self.yes_no(PromptTemplate::Retrieval, op)
    }

    fn dependency(
        &self,
        op: &ApiOperation,
        param: &ParamDecl,
        tree: &ResourceTree,
    ) -> Result<Option<String>, ClassifierError> {
        let known: Vec<String> = tree.resources.keys().cloned().collect();
        let ctx = PromptContext {
            param: Some(param.name.clone()),
            resources: Some(known.clone()),
            ..PromptContext::for_operation(op)
        };
        let prompt =
            build_prompt(PromptTemplate::Dependency, &ctx).map_err(|e| ClassifierError::Unavailable(e.to_string()))?;
        self.query(&prompt, Answer::Resource(known))
    }
}

/// Renders a resource name, normalizing `:id` to `{id}`.
pub fn resource_name(template: &str) -> String {
    render_template(&parse_template(template))
}
