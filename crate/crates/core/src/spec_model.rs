//! Normalized operation model for Swagger 2.0 and OpenAPI 3.x documents,
//! plus matching of concrete request paths back to their path templates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("unsupported document version: {0}")]
    UnsupportedVersion(String),
    #[error("duplicate operation: {0}")]
    DuplicateOperation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Get,
    Post,
    Put,
    Patch,
    Delete,
    Head,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Get,
        Method::Post,
        Method::Put,
        Method::Patch,
        Method::Delete,
        Method::Head,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Get => "GET",
            Method::Post => "POST",
            Method::Put => "PUT",
            Method::Patch => "PATCH",
            Method::Delete => "DELETE",
            Method::Head => "HEAD",
        }
    }

    /// Methods whose extra parameters travel in the query string.
    pub fn has_body(self) -> bool {
        matches!(self, Method::Post | Method::Put | Method::Patch)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unsupported method {s:?}"))
    }
}

/// Identifier of an operation, rendered as `"METHOD /path/{param}"`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OperationId(pub String);

impl OperationId {
    pub fn new(method: Method, template: &str) -> Self {
        OperationId(format!("{method} {template}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for OperationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for OperationId {
    fn from(s: &str) -> Self {
        OperationId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Literal(String),
    Param(String),
}

impl Segment {
    pub fn is_literal(&self) -> bool {
        matches!(self, Segment::Literal(_))
    }
}

/// Splits a path template into segments. Both `{name}` and `:name` denote
/// a parameter.
pub fn parse_template(template: &str) -> Vec<Segment> {
    template
        .split('/')
        .filter(|s| !s.is_empty())
        .map(|s| {
            if let Some(name) = s.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
                Segment::Param(name.to_string())
            } else if let Some(name) = s.strip_prefix(':') {
                Segment::Param(name.to_string())
            } else {
                Segment::Literal(s.to_string())
            }
        })
        .collect()
}

/// Renders segments back to the canonical brace syntax.
pub fn render_template(segments: &[Segment]) -> String {
    if segments.is_empty() {
        return "/".to_string();
    }
    let mut out = String::new();
    for seg in segments {
        out.push('/');
        match seg {
            Segment::Literal(l) => out.push_str(l),
            Segment::Param(p) => {
                out.push('{');
                out.push_str(p);
                out.push('}');
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamLocation {
    Path,
    Query,
    Body,
    Header,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemaType {
    String,
    Integer,
    Number,
    Boolean,
    Array,
    Object,
}

impl SchemaType {
    fn from_schema(schema: Option<&Value>) -> SchemaType {
        let Some(schema) = schema else {
            return SchemaType::String;
        };
        match schema.get("type").and_then(Value::as_str) {
            Some("integer") => SchemaType::Integer,
            Some("number") => SchemaType::Number,
            Some("boolean") => SchemaType::Boolean,
            Some("array") => SchemaType::Array,
            Some("object") => SchemaType::Object,
            Some(_) => SchemaType::String,
            None if schema.get("properties").is_some() => SchemaType::Object,
            None => SchemaType::String,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamDecl {
    pub name: String,
    pub location: ParamLocation,
    pub schema_type: SchemaType,
    pub required: bool,
    /// Allowed values declared by an `enum` keyword, stringified.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub enum_values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiOperation {
    pub id: OperationId,
    pub method: Method,
    pub path: Vec<Segment>,
    pub parameters: Vec<ParamDecl>,
}

impl ApiOperation {
    pub fn template(&self) -> String {
        render_template(&self.path)
    }

    pub fn param(&self, name: &str) -> Option<&ParamDecl> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn path_params(&self) -> impl Iterator<Item = &str> {
        self.path.iter().filter_map(|s| match s {
            Segment::Param(p) => Some(p.as_str()),
            Segment::Literal(_) => None,
        })
    }

    /// Last literal segment of the template, if the template ends with one.
    pub fn trailing_literal(&self) -> Option<&str> {
        match self.path.last() {
            Some(Segment::Literal(l)) => Some(l),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub title: String,
    pub base_path: String,
    pub operations: BTreeMap<OperationId, ApiOperation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UriMatch {
    pub operation: OperationId,
    pub path_bindings: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocFormat {
    Json,
    Yaml,
}

impl DocFormat {
    /// Guesses the format from a file extension; anything but `.json` is YAML.
    pub fn from_path(path: &std::path::Path) -> DocFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => DocFormat::Json,
            _ => DocFormat::Yaml,
        }
    }
}

enum Flavor {
    Swagger2,
    OpenApi3,
}

pub fn parse_spec(document: &[u8], format: DocFormat) -> Result<ServiceSpec, SpecError> {
    let root: Value = match format {
        DocFormat::Json => serde_json::from_slice(document).map_err(|e| SpecError::MalformedDocument(e.to_string()))?,
        DocFormat::Yaml => serde_yaml::from_slice(document).map_err(|e| SpecError::MalformedDocument(e.to_string()))?,
    };
    if !root.is_object() {
        return Err(SpecError::MalformedDocument("top level is not an object".into()));
    }

    let flavor = if let Some(v) = root.get("swagger") {
        let v = version_string(v);
        if !v.starts_with("2.") && v != "2" {
            return Err(SpecError::UnsupportedVersion(format!("swagger {v}")));
        }
        Flavor::Swagger2
    } else if let Some(v) = root.get("openapi") {
        let v = version_string(v);
        if !v.starts_with("3.") && v != "3" {
            return Err(SpecError::UnsupportedVersion(format!("openapi {v}")));
        }
        Flavor::OpenApi3
    } else {
        return Err(SpecError::UnsupportedVersion("no swagger/openapi version field".into()));
    };

    let title = root
        .pointer("/info/title")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let base_path = match flavor {
        Flavor::Swagger2 => root
            .get("basePath")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string(),
        Flavor::OpenApi3 => root
            .pointer("/servers/0/url")
            .and_then(Value::as_str)
            .map(server_path)
            .unwrap_or_default(),
    };
    let base_path = base_path.trim_end_matches('/').to_string();

    let mut operations = BTreeMap::new();
    let mut seen = BTreeSet::new();
    let empty = serde_json::Map::new();
    let paths = match root.get("paths") {
        None | Some(Value::Null) => &empty,
        Some(Value::Object(m)) => m,
        Some(_) => return Err(SpecError::MalformedDocument("\"paths\" is not an object".into())),
    };

    for (raw_path, item) in paths {
        if !raw_path.starts_with('/') {
            return Err(SpecError::MalformedDocument(format!(
                "path {raw_path:?} does not begin with '/'"
            )));
        }
        let item = resolve(&root, item);
        let Some(item) = item.as_object() else {
            continue;
        };
        let shared_params = item
            .get("parameters")
            .and_then(Value::as_array)
            .cloned()
            .unwrap_or_default();
        let segments = parse_template(raw_path);
        let template = render_template(&segments);

        for (key, op_value) in item {
            let Ok(method) = key.parse::<Method>() else {
                continue;
            };
            if !seen.insert((method, template.clone())) {
                return Err(SpecError::DuplicateOperation(format!("{method} {template}")));
            }
            let op_value = resolve(&root, op_value);
            let mut parameters = Vec::new();
            let own = op_value
                .get("parameters")
                .and_then(Value::as_array)
                .cloned()
                .unwrap_or_default();
            // Operation-level declarations override path-level ones.
            let mut declared: Vec<Value> = own.iter().map(|p| resolve(&root, p).clone()).collect();
            for shared in &shared_params {
                let shared = resolve(&root, shared);
                let key = param_key(shared);
                if !declared.iter().any(|d| param_key(d) == key) {
                    declared.push(shared.clone());
                }
            }
            for decl in &declared {
                collect_parameter(&root, decl, &mut parameters);
            }
            if let Flavor::OpenApi3 = flavor {
                if let Some(body) = op_value.get("requestBody") {
                    let body = resolve(&root, body);
                    let required = body.get("required").and_then(Value::as_bool).unwrap_or(false);
                    if let Some(schema) = request_body_schema(body) {
                        flatten_body(&root, schema, required, &mut parameters);
                    }
                }
            }
            for seg in &segments {
                if let Segment::Param(name) = seg {
                    match parameters.iter_mut().find(|p| &p.name == name) {
                        Some(p) => {
                            p.location = ParamLocation::Path;
                            p.required = true;
                        }
                        None => parameters.push(ParamDecl {
                            name: name.clone(),
                            location: ParamLocation::Path,
                            schema_type: SchemaType::String,
                            required: true,
                            enum_values: Vec::new(),
                        }),
                    }
                }
            }
            let id = OperationId::new(method, &template);
            operations.insert(
                id.clone(),
                ApiOperation {
                    id,
                    method,
                    path: segments.clone(),
                    parameters,
                },
            );
        }
    }

    Ok(ServiceSpec {
        title,
        base_path,
        operations,
    })
}

fn version_string(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn server_path(url: &str) -> String {
    let rest = match url.find("://") {
        Some(i) => &url[i + 3..],
        None => return url.to_string(),
    };
    match rest.find('/') {
        Some(i) => rest[i..].to_string(),
        None => String::new(),
    }
}

/// Follows local `#/...` references; anything unresolvable is returned as is.
fn resolve<'a>(root: &'a Value, v: &'a Value) -> &'a Value {
    let mut current = v;
    for _ in 0..16 {
        match current.get("$ref").and_then(Value::as_str) {
            Some(r) if r.starts_with("#/") => match root.pointer(&r[1..]) {
                Some(target) => current = target,
                None => return current,
            },
            _ => return current,
        }
    }
    current
}

fn param_key(v: &Value) -> (String, String) {
    (
        v.get("name").and_then(Value::as_str).unwrap_or_default().to_string(),
        v.get("in").and_then(Value::as_str).unwrap_or_default().to_string(),
    )
}

fn enum_values(schema: Option<&Value>) -> Vec<String> {
    schema
        .and_then(|s| s.get("enum"))
        .and_then(Value::as_array)
        .map(|vals| {
            vals.iter()
                .map(|v| match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect()
        })
        .unwrap_or_default()
}

fn collect_parameter(root: &Value, decl: &Value, out: &mut Vec<ParamDecl>) {
    let Some(name) = decl.get("name").and_then(Value::as_str) else {
        return;
    };
    let required = decl.get("required").and_then(Value::as_bool).unwrap_or(false);
    let location = match decl.get("in").and_then(Value::as_str) {
        Some("path") => ParamLocation::Path,
        Some("query") => ParamLocation::Query,
        Some("header") => ParamLocation::Header,
        Some("formData") => ParamLocation::Body,
        Some("body") => {
            if let Some(schema) = decl.get("schema") {
                flatten_body(root, resolve(root, schema), required, out);
            }
            return;
        }
        // cookie parameters are not modelled
        _ => return,
    };
    // Swagger 2 puts `type` on the parameter, OpenAPI 3 inside `schema`.
    let schema = decl.get("schema").map(|s| resolve(root, s));
    let schema_type = if decl.get("type").is_some() {
        SchemaType::from_schema(Some(decl))
    } else {
        SchemaType::from_schema(schema)
    };
    let enums = if decl.get("enum").is_some() {
        enum_values(Some(decl))
    } else {
        enum_values(schema)
    };
    upsert(
        out,
        ParamDecl {
            name: name.to_string(),
            location,
            schema_type,
            required,
            enum_values: enums,
        },
    );
}

fn request_body_schema(body: &Value) -> Option<&Value> {
    let content = body.get("content")?.as_object()?;
    content
        .get("application/json")
        .or_else(|| content.iter().find(|(k, _)| k.contains("json")).map(|(_, v)| v))
        .or_else(|| content.values().next())
        .and_then(|media| media.get("schema"))
}

/// Flattens one level of an object schema into body parameters; nested
/// objects stay opaque.
fn flatten_body(root: &Value, schema: &Value, body_required: bool, out: &mut Vec<ParamDecl>) {
    let schema = resolve(root, schema);
    let Some(props) = schema.get("properties").and_then(Value::as_object) else {
        return;
    };
    let required: BTreeSet<&str> = schema
        .get("required")
        .and_then(Value::as_array)
        .map(|r| r.iter().filter_map(Value::as_str).collect())
        .unwrap_or_default();
    for (name, prop) in props {
        let prop = resolve(root, prop);
        upsert(
            out,
            ParamDecl {
                name: name.clone(),
                location: ParamLocation::Body,
                schema_type: SchemaType::from_schema(Some(prop)),
                required: body_required && required.contains(name.as_str()),
                enum_values: enum_values(Some(prop)),
            },
        );
    }
}

fn upsert(out: &mut Vec<ParamDecl>, decl: ParamDecl) {
    match out.iter_mut().find(|p| p.name == decl.name) {
        Some(existing) => *existing = decl,
        None => out.push(decl),
    }
}

impl ServiceSpec {
    pub fn operation(&self, id: &OperationId) -> Option<&ApiOperation> {
        self.operations.get(id)
    }

    /// Finds the most specific template for a concrete path. Literal segments
    /// outrank parameters position by position, left to right.
    pub fn match_uri(&self, method: Method, concrete_path: &str) -> Option<UriMatch> {
        let path = concrete_path.split(['?', '#']).next().unwrap_or_default();
        let path = if !self.base_path.is_empty() {
            match path.strip_prefix(self.base_path.as_str()) {
                Some(rest) if rest.is_empty() || rest.starts_with('/') => rest,
                _ => path,
            }
        } else {
            path
        };
        let parts: Vec<&str> = path.split('/').filter(|s| !s.is_empty()).collect();

        let mut best: Option<(Vec<bool>, &ApiOperation)> = None;
        for op in self.operations.values() {
            if op.method != method || op.path.len() != parts.len() {
                continue;
            }
            let fits = op.path.iter().zip(&parts).all(|(seg, part)| match seg {
                Segment::Literal(l) => l == &decode(part),
                Segment::Param(_) => true,
            });
            if !fits {
                continue;
            }
            let rank: Vec<bool> = op.path.iter().map(Segment::is_literal).collect();
            // Operations iterate in id order, so ties keep the smallest id.
            if best.as_ref().is_none_or(|(r, _)| rank > *r) {
                best = Some((rank, op));
            }
        }

        best.map(|(_, op)| UriMatch {
            operation: op.id.clone(),
            path_bindings: op
                .path
                .iter()
                .zip(&parts)
                .filter_map(|(seg, part)| match seg {
                    Segment::Param(name) => Some((name.clone(), decode(part))),
                    Segment::Literal(_) => None,
                })
                .collect(),
        })
    }

    /// Operations sorted by rendered path, then method.
    pub fn list_operations(&self) -> Vec<&ApiOperation> {
        let mut ops: Vec<&ApiOperation> = self.operations.values().collect();
        ops.sort_by(|a, b| a.template().cmp(&b.template()).then(a.method.cmp(&b.method)));
        ops
    }
}

/// Characters escaped when a value is placed in a path segment.
const SEGMENT: &percent_encoding::AsciiSet = &percent_encoding::NON_ALPHANUMERIC
    .remove(b'-')
    .remove(b'_')
    .remove(b'.')
    .remove(b'~');

/// Substitutes parameter values into a template; missing values become
/// empty segments.
pub fn fill_template(segments: &[Segment], values: &BTreeMap<String, String>) -> String {
    if segments.is_empty() {
        return "/".to_string();
    }
    let mut out = String::new();
    for seg in segments {
        out.push('/');
        match seg {
            Segment::Literal(l) => out.push_str(l),
            Segment::Param(p) => {
                let v = values.get(p).map(String::as_str).unwrap_or("");
                out.extend(percent_encoding::utf8_percent_encode(v, SEGMENT));
            }
        }
    }
    out
}

pub fn decode(part: &str) -> String {
    percent_encoding::percent_decode_str(part)
        .decode_utf8_lossy()
        .into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    const BRANCH_DOC: &str = r##"{
      "swagger": "2.0",
      "info": {"title": "branches", "version": "1"},
      "basePath": "/api",
      "paths": {
        "/v1/branch": {
          "get": {"parameters": [{"name": "name", "in": "query", "type": "string"}]},
          "post": {"parameters": [{"name": "body", "in": "body", "required": true,
                   "schema": {"$ref": "#/definitions/Branch"}}]}
        }
      },
      "definitions": {
        "Branch": {"type": "object", "required": ["name"],
                   "properties": {"name": {"type": "string"}, "meta": {"type": "object"}}}
      }
    }"##;

    #[test]
    fn swagger_branch_document_has_two_operations() {
        let spec = parse_spec(BRANCH_DOC.as_bytes(), DocFormat::Json).unwrap();
        assert_eq!(spec.operations.len(), 2);
        assert_eq!(spec.base_path, "/api");
        let post = &spec.operations[&OperationId::from("POST /v1/branch")];
        assert_eq!(post.parameters.len(), 2);
        let name = post.param("name").unwrap();
        assert_eq!(name.location, ParamLocation::Body);
        assert!(name.required);
        assert_eq!(post.param("meta").unwrap().schema_type, SchemaType::Object);
        assert!(!post.param("meta").unwrap().required);
    }

    #[test]
    fn empty_paths_yield_empty_spec() {
        let doc = r#"{"openapi": "3.0.1", "info": {"title": "t"}, "paths": {}}"#;
        let spec = parse_spec(doc.as_bytes(), DocFormat::Json).unwrap();
        assert!(spec.operations.is_empty());
        assert!(spec.list_operations().is_empty());
    }

    #[test]
    fn colon_params_and_body_fields_are_flattened() {
        let doc = r#"
openapi: 3.0.0
info: {title: issues}
paths:
  /projects/:id/issues:
    post:
      requestBody:
        required: true
        content:
          application/json:
            schema:
              type: object
              required: [title]
              properties:
                title: {type: string}
"#;
        let spec = parse_spec(doc.as_bytes(), DocFormat::Yaml).unwrap();
        assert_eq!(spec.operations.len(), 1);
        let op = spec.operations.values().next().unwrap();
        assert_eq!(op.id.as_str(), "POST /projects/{id}/issues");
        assert_eq!(op.method, Method::Post);
        assert_eq!(
            op.path,
            vec![
                Segment::Literal("projects".into()),
                Segment::Param("id".into()),
                Segment::Literal("issues".into())
            ]
        );
        assert_eq!(op.parameters.len(), 2);
        let title = op.param("title").unwrap();
        assert_eq!(
            (title.location, title.schema_type, title.required),
            (ParamLocation::Body, SchemaType::String, true)
        );
        let id = op.param("id").unwrap();
        assert_eq!((id.location, id.required), (ParamLocation::Path, true));
    }

    #[test]
    fn version_and_syntax_errors() {
        let bad = parse_spec(b"{not json", DocFormat::Json);
        assert!(matches!(bad, Err(SpecError::MalformedDocument(_))));
        let v1 = parse_spec(br#"{"swagger": "1.2", "paths": {}}"#, DocFormat::Json);
        assert!(matches!(v1, Err(SpecError::UnsupportedVersion(_))));
        let none = parse_spec(br#"{"paths": {}}"#, DocFormat::Json);
        assert!(matches!(none, Err(SpecError::UnsupportedVersion(_))));
        let dup = r#"{"openapi": "3.1.0", "paths": {
            "/p/{id}": {"get": {}}, "/p/:id": {"get": {}}}}"#;
        assert!(matches!(
            parse_spec(dup.as_bytes(), DocFormat::Json),
            Err(SpecError::DuplicateOperation(_))
        ));
    }

    fn projects_spec() -> ServiceSpec {
        let doc = r#"{"openapi": "3.0.0", "paths": {
            "/projects/{id}": {"get": {}},
            "/projects/new": {"get": {}},
            "/projects/{id}/merge_requests/{iid}/approve": {"post": {}}
        }}"#;
        parse_spec(doc.as_bytes(), DocFormat::Json).unwrap()
    }

    #[test]
    fn literal_segments_win() {
        let spec = projects_spec();
        let m = spec.match_uri(Method::Get, "/projects/new").unwrap();
        assert_eq!(m.operation.as_str(), "GET /projects/new");
        assert!(m.path_bindings.is_empty());
        let m = spec.match_uri(Method::Get, "/projects/15").unwrap();
        assert_eq!(m.operation.as_str(), "GET /projects/{id}");
        assert_eq!(m.path_bindings["id"], "15");
    }

    #[test]
    fn method_mismatch_is_none() {
        assert!(projects_spec().match_uri(Method::Delete, "/projects/15").is_none());
    }

    #[test]
    fn approve_path_binds_both_ids() {
        let m = projects_spec()
            .match_uri(Method::Post, "/projects/15/merge_requests/3/approve?x=1")
            .unwrap();
        assert_eq!(m.operation.as_str(), "POST /projects/{id}/merge_requests/{iid}/approve");
        assert_eq!(m.path_bindings.len(), 2);
        assert_eq!(m.path_bindings["id"], "15");
        assert_eq!(m.path_bindings["iid"], "3");
    }

    #[test]
    fn base_path_is_stripped() {
        let spec = parse_spec(BRANCH_DOC.as_bytes(), DocFormat::Json).unwrap();
        assert!(spec.match_uri(Method::Get, "/api/v1/branch").is_some());
        assert!(spec.match_uri(Method::Get, "/v1/branch").is_some());
        assert!(spec.match_uri(Method::Get, "/apiv1/branch").is_none());
    }

    #[test]
    fn listing_is_sorted_by_path_then_method() {
        let doc = r#"{"openapi": "3.0.0", "paths": {
            "/b": {"post": {}, "get": {}},
            "/a/{x}": {"delete": {}},
            "/a": {"put": {}, "get": {}}
        }}"#;
        let spec = parse_spec(doc.as_bytes(), DocFormat::Json).unwrap();
        let ids: Vec<&str> = spec.list_operations().iter().map(|o| o.id.as_str()).collect();
        assert_eq!(ids, ["GET /a", "PUT /a", "DELETE /a/{x}", "GET /b", "POST /b"]);
    }
}
