//! Single HTTP entry point over datastores, models, skills and tests.
//!
//! Routing lives in [`Gateway::dispatch`], a pure function of
//! `(method, path, body, principal)` and the registries, so it can be
//! exercised without a socket. [`server`] wraps it in axum.
//!
//! | method | path |
//! |---|---|
//! | GET, POST | `/api/datastores` |
//! | POST | `/api/datastores/{name}/documents` |
//! | POST | `/api/datastores/{name}/indices/{sparse,dense}` |
//! | POST | `/api/datastores/{name}/search` |
//! | GET, POST | `/api/models` |
//! | PUT, DELETE | `/api/models/{name}` |
//! | POST | `/api/models/{name}/predict` |
//! | GET, POST | `/api/skills` |
//! | GET, PUT, DELETE | `/api/skills/{id}` |
//! | POST | `/api/skills/{id}/query` |
//! | POST | `/api/query` |
//! | GET | `/api/skills/{id}/tests` |
//! | POST | `/api/skills/{id}/tests/run` |
//! | GET | `/api/skills/{id}/tests/report` |
//!
//! Failures carry `{"error": {"code", "message"}}`.

pub mod auth;
pub mod config;
pub mod server;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

pub use auth::{AuthError, TokenTable};
pub use config::{ConfigError, GatewayConfig};

use crate::behave::{bundled_suite, export_report, load_suite, run_suite, BehaviouralTestSuite, TestReport};
use crate::datastore::{Bm25Params, DenseParams, DocumentInput, IndexKind, Metric, Quantizer};
use crate::error::ErrorCode;
use crate::modelhub::WorkerSpec;
use crate::platform::{Platform, PlatformError};
use crate::principal::Principal;
use crate::skillrt::{QueryRequest, SkillSpec};

#[derive(Debug, Clone, PartialEq)]
pub enum ResponseBody {
    Json(Value),
    Bytes { content_type: &'static str, bytes: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayResponse {
    pub status: u16,
    pub body: ResponseBody,
}

impl GatewayResponse {
    pub fn ok(value: Value) -> Self {
        GatewayResponse { status: 200, body: ResponseBody::Json(value) }
    }

    pub fn error(status: u16, code: &str, message: impl Into<String>) -> Self {
        let body = json!({ "error": { "code": code, "message": message.into() } });
        GatewayResponse { status, body: ResponseBody::Json(body) }
    }

    fn from_error<E: ErrorCode + ?Sized>(e: &E) -> Self {
        Self::error(e.class().status(), e.code(), e.to_string())
    }

    /// JSON body; raw bytes are parsed when possible.
    pub fn json(&self) -> Value {
        match &self.body {
            ResponseBody::Json(v) => v.clone(),
            ResponseBody::Bytes { bytes, .. } => serde_json::from_slice(bytes).unwrap_or(Value::Null),
        }
    }

    /// Serialized body as sent on the wire.
    pub fn bytes(&self) -> Vec<u8> {
        match &self.body {
            ResponseBody::Json(v) => serde_json::to_vec(v).expect("json serializes"),
            ResponseBody::Bytes { bytes, .. } => bytes.clone(),
        }
    }

    pub fn error_code(&self) -> Option<String> {
        self.json()["error"]["code"].as_str().map(String::from)
    }
}

type Reply = Result<GatewayResponse, GatewayResponse>;

fn fail<E: ErrorCode>(e: E) -> GatewayResponse {
    GatewayResponse::from_error(&e)
}

fn persist_failed(e: PlatformError) -> GatewayResponse {
    GatewayResponse::error(500, "PersistFailed", e.to_string())
}

fn body<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, GatewayResponse> {
    serde_json::from_slice(bytes).map_err(|e| GatewayResponse::error(400, "InvalidBody", e.to_string()))
}

/// Like [`body`], but an empty body means `{}`.
fn body_or_empty<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, GatewayResponse> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        body(b"{}")
    } else {
        body(bytes)
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("response serializes")
}

fn require_user(principal: &Principal) -> Result<(), GatewayResponse> {
    match principal {
        Principal::User(_) => Ok(()),
        Principal::Anonymous => Err(GatewayResponse::error(401, "AuthenticationRequired", "sign in to modify resources")),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateDatastore {
    name: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AddDocuments {
    documents: Vec<DocumentInput>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SparseBuild {
    #[serde(default)]
    k1: Option<f64>,
    #[serde(default)]
    b: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DenseBuild {
    embedder: String,
    #[serde(default)]
    dim: Option<usize>,
    #[serde(default)]
    nlist: Option<usize>,
    #[serde(default)]
    metric: Metric,
    #[serde(default)]
    quantizer: Quantizer,
    #[serde(default)]
    seed: u64,
}

fn default_k() -> usize {
    10
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SearchBody {
    index: IndexKind,
    query: String,
    #[serde(default = "default_k")]
    k: usize,
    #[serde(default)]
    nprobe: Option<usize>,
}

#[derive(Deserialize)]
struct QueryManyBody {
    skills: Vec<String>,
    #[serde(flatten)]
    request: QueryRequest,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunTests {
    suite_name: String,
}

fn report_summary(report: &TestReport) -> Value {
    let tests: Vec<Value> = report
        .tests
        .iter()
        .map(|t| {
            json!({
                "name": t.name,
                "type": t.test_type,
                "capability": t.capability,
                "total": t.total,
                "failures": t.failures,
                "errors": t.errors,
                "failure_rate": t.failure_rate_display(),
            })
        })
        .collect();
    json!({ "skill_id": report.skill_id, "suite_name": report.suite_name, "tests": tests })
}

#[derive(Debug)]
pub struct Gateway {
    platform: Arc<Platform>,
    tokens: TokenTable,
    suites: BTreeMap<String, BehaviouralTestSuite>,
}

impl Gateway {
    /// A gateway with the bundled suite available.
    pub fn new(platform: Arc<Platform>, tokens: TokenTable) -> Self {
        let suite = bundled_suite();
        Gateway { platform, tokens, suites: BTreeMap::from([(suite.suite_name.clone(), suite)]) }
    }

    /// Opens the data directory, token table and suites named by `config`.
    pub fn from_config(config: &GatewayConfig) -> Result<Self, String> {
        let platform = match &config.data_dir {
            Some(dir) => Platform::open(dir).map_err(|e| e.to_string())?,
            None => Platform::in_memory(),
        };
        let tokens = TokenTable::new(config.tokens.clone()).map_err(|e| e.to_string())?;
        let mut gateway = Gateway::new(Arc::new(platform), tokens);
        for path in &config.suites {
            let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
            let suite = load_suite(&bytes).map_err(|e| format!("{}: {e}", path.display()))?;
            gateway = gateway.with_suite(suite);
        }
        Ok(gateway)
    }

    pub fn with_suite(mut self, suite: BehaviouralTestSuite) -> Self {
        self.suites.insert(suite.suite_name.clone(), suite);
        self
    }

    pub fn platform(&self) -> &Platform {
        &self.platform
    }

    pub fn suite_names(&self) -> Vec<String> {
        self.suites.keys().cloned().collect()
    }

    pub fn authenticate(&self, header: Option<&str>) -> Result<Principal, AuthError> {
        self.tokens.authenticate(header)
    }

    /// Authenticates, then dispatches.
    pub async fn handle(&self, method: &str, path: &str, authorization: Option<&str>, body: &[u8]) -> GatewayResponse {
        match self.authenticate(authorization) {
            Ok(principal) => self.dispatch(method, path, body, &principal).await,
            Err(e) => fail(e),
        }
    }

    pub async fn dispatch(&self, method: &str, path: &str, body: &[u8], principal: &Principal) -> GatewayResponse {
        let segments: Vec<&str> = path.split('/').filter(|s| !s.is_empty()).collect();
        match self.route(method, &segments, body, principal).await {
            Ok(r) | Err(r) => r,
        }
    }

    async fn route(&self, method: &str, segments: &[&str], bytes: &[u8], principal: &Principal) -> Reply {
        let Some(rest) = segments.strip_prefix(&["api"]) else {
            return Err(not_found(segments));
        };
        match (method, rest) {
            ("GET", ["datastores"]) => Ok(self.list_datastores()),
            ("POST", ["datastores"]) => self.create_datastore(bytes, principal),
            ("POST", ["datastores", name, "documents"]) => self.add_documents(name, bytes, principal),
            ("POST", ["datastores", name, "indices", kind]) => self.build_index(name, kind, bytes, principal).await,
            ("POST", ["datastores", name, "search"]) => self.search(name, bytes).await,

            ("GET", ["models"]) => Ok(GatewayResponse::ok(json!({ "models": self.platform.models.list() }))),
            ("POST", ["models"]) => self.deploy_model(bytes, principal),
            ("PUT", ["models", name]) => self.update_model(name, bytes, principal),
            ("DELETE", ["models", name]) => self.remove_model(name, principal),
            ("POST", ["models", name, "predict"]) => self.predict(name, bytes).await,

            ("GET", ["skills"]) => Ok(GatewayResponse::ok(json!({ "skills": self.platform.skills.list(principal) }))),
            ("POST", ["skills"]) => self.register_skill(bytes, principal),
            ("GET", ["skills", id]) => {
                let skill = self.platform.skills.get(id, principal).map_err(fail)?;
                Ok(GatewayResponse::ok(to_json(&skill)))
            }
            ("PUT", ["skills", id]) => self.update_skill(id, bytes, principal),
            ("DELETE", ["skills", id]) => self.remove_skill(id, principal),
            ("POST", ["skills", id, "query"]) => {
                let request: QueryRequest = body(bytes)?;
                let output = self.platform.runtime().query_skill(id, &request, principal).await.map_err(fail)?;
                Ok(GatewayResponse::ok(to_json(&output)))
            }
            ("POST", ["query"]) => self.query_many(bytes, principal).await,

            ("GET", ["skills", id, "tests"]) => self.test_summary(id, principal),
            ("POST", ["skills", id, "tests", "run"]) => self.run_tests(id, bytes, principal).await,
            ("GET", ["skills", id, "tests", "report"]) => self.download_report(id, principal),

            (_, rest) if is_known_route(rest) => {
                Err(GatewayResponse::error(405, "MethodNotAllowed", format!("{method} is not supported here")))
            }
            _ => Err(not_found(segments)),
        }
    }

    fn list_datastores(&self) -> GatewayResponse {
        GatewayResponse::ok(json!({ "datastores": self.platform.datastores.list() }))
    }

    fn create_datastore(&self, bytes: &[u8], principal: &Principal) -> Reply {
        require_user(principal)?;
        let req: CreateDatastore = body(bytes)?;
        let info = self.platform.datastores.create_datastore(&req.name).map_err(fail)?;
        self.platform.persist_datastore(&req.name).map_err(persist_failed)?;
        Ok(GatewayResponse::ok(to_json(&info)))
    }

    fn add_documents(&self, name: &str, bytes: &[u8], principal: &Principal) -> Reply {
        require_user(principal)?;
        let req: AddDocuments = body(bytes)?;
        let added = self.platform.datastores.ingest(name, req.documents).map_err(fail)?;
        self.platform.persist_datastore(name).map_err(persist_failed)?;
        let count = self.platform.datastores.document_count(name).map_err(fail)?;
        Ok(GatewayResponse::ok(json!({ "added": added, "document_count": count })))
    }

    async fn build_index(&self, name: &str, kind: &str, bytes: &[u8], principal: &Principal) -> Reply {
        let kind: IndexKind = kind.parse().map_err(|_| not_found(&["api", "datastores", name, "indices", kind]))?;
        require_user(principal)?;
        let datastores = &self.platform.datastores;
        let summary = match kind {
            IndexKind::Sparse => {
                let req: SparseBuild = body_or_empty(bytes)?;
                let defaults = Bm25Params::default();
                let params = Bm25Params { k1: req.k1.unwrap_or(defaults.k1), b: req.b.unwrap_or(defaults.b) };
                let index = datastores.build_sparse_index(name, params).map_err(fail)?;
                json!({ "datastore": name, "index": kind, "documents": index.doc_count, "params": index.params })
            }
            IndexKind::Dense => {
                let req: DenseBuild = body(bytes)?;
                let spec = self.platform.models.get(&req.embedder);
                let dim = match (req.dim, spec.as_ref().and_then(WorkerSpec::embedding_dim)) {
                    (Some(d), _) | (None, Some(d)) => d,
                    (None, None) => {
                        return Err(GatewayResponse::error(400, "InvalidBody", "`dim` is required for this embedder"))
                    }
                };
                let params =
                    DenseParams { dim, nlist: req.nlist, metric: req.metric, quantizer: req.quantizer, seed: req.seed };
                let index = datastores
                    .build_dense_index(name, &req.embedder, &params, &self.platform.models)
                    .await
                    .map_err(fail)?;
                json!({
                    "datastore": name,
                    "index": kind,
                    "documents": index.len(),
                    "embedder": index.embedder_name,
                    "dim": index.dim,
                    "nlist": index.nlist,
                    "metric": index.metric,
                    "quantizer": index.quantizer,
                    "seed": index.seed,
                })
            }
        };
        self.platform.persist_datastore(name).map_err(persist_failed)?;
        Ok(GatewayResponse::ok(summary))
    }

    async fn search(&self, name: &str, bytes: &[u8]) -> Reply {
        let req: SearchBody = body(bytes)?;
        let datastores = &self.platform.datastores;
        let results = match req.index {
            IndexKind::Sparse => datastores.sparse_search(name, &req.query, req.k).map_err(fail)?,
            IndexKind::Dense => {
                let nprobe = match req.nprobe {
                    Some(n) => n,
                    None => datastores.dense_index(name).map_err(fail)?.nlist,
                };
                datastores.dense_search(name, &req.query, req.k, nprobe, &self.platform.models).await.map_err(fail)?
            }
        };
        Ok(GatewayResponse::ok(json!({ "results": results })))
    }

    fn deploy_model(&self, bytes: &[u8], principal: &Principal) -> Reply {
        require_user(principal)?;
        let spec: WorkerSpec = body(bytes)?;
        self.platform.models.deploy(spec.clone()).map_err(fail)?;
        self.platform.persist_workers().map_err(persist_failed)?;
        Ok(GatewayResponse::ok(to_json(&spec)))
    }

    fn update_model(&self, name: &str, bytes: &[u8], principal: &Principal) -> Reply {
        require_user(principal)?;
        let mut value: Value = body(bytes)?;
        if let Some(obj) = value.as_object_mut() {
            match obj.get("name") {
                None => {
                    obj.insert("name".into(), Value::String(name.to_string()));
                }
                Some(n) if n.as_str() == Some(name) => {}
                Some(_) => return Err(GatewayResponse::error(400, "InvalidBody", "body name differs from the path")),
            }
        }
        let spec: WorkerSpec = serde_json::from_value(value)
            .map_err(|e| GatewayResponse::error(400, "InvalidBody", e.to_string()))?;
        self.platform.models.update(spec.clone()).map_err(fail)?;
        self.platform.persist_workers().map_err(persist_failed)?;
        Ok(GatewayResponse::ok(to_json(&spec)))
    }

    fn remove_model(&self, name: &str, principal: &Principal) -> Reply {
        require_user(principal)?;
        let removed = self.platform.models.remove(name).map_err(fail)?;
        self.platform.persist_workers().map_err(persist_failed)?;
        Ok(GatewayResponse::ok(json!({ "removed": removed.name })))
    }

    async fn predict(&self, name: &str, bytes: &[u8]) -> Reply {
        // Resolve the worker first so an unknown name is 404 whatever the body.
        if self.platform.models.get(name).is_none() {
            return Err(fail(crate::modelhub::ModelError::UnknownWorker(name.to_string())));
        }
        let payload: Value = body(bytes)?;
        let output = self.platform.models.route_predict(name, payload).await.map_err(fail)?;
        Ok(GatewayResponse::ok(output))
    }

    fn register_skill(&self, bytes: &[u8], principal: &Principal) -> Reply {
        require_user(principal)?;
        let spec: SkillSpec = body(bytes)?;
        let skill = self.platform.skills.register(spec, principal).map_err(fail)?;
        self.platform.persist_skills().map_err(persist_failed)?;
        Ok(GatewayResponse::ok(to_json(&skill)))
    }

    fn update_skill(&self, id: &str, bytes: &[u8], principal: &Principal) -> Reply {
        // Existence and ownership come before body validation, so nothing
        // about a hidden skill leaks through a 400.
        self.owned_skill(id, principal)?;
        let spec: SkillSpec = body(bytes)?;
        let skill = self.platform.skills.update(id, spec, principal).map_err(fail)?;
        self.platform.persist_skills().map_err(persist_failed)?;
        Ok(GatewayResponse::ok(to_json(&skill)))
    }

    fn remove_skill(&self, id: &str, principal: &Principal) -> Reply {
        let skill = self.platform.skills.remove(id, principal).map_err(fail)?;
        self.platform.persist_skills().map_err(persist_failed)?;
        self.platform.forget_report(id).map_err(persist_failed)?;
        Ok(GatewayResponse::ok(json!({ "removed": skill.id })))
    }

    fn owned_skill(&self, id: &str, principal: &Principal) -> Result<(), GatewayResponse> {
        let skill = self.platform.skills.get(id, principal).map_err(fail)?;
        if !principal.is(&skill.owner) {
            return Err(fail(crate::skillrt::SkillError::NotOwner(id.to_string())));
        }
        Ok(())
    }

    async fn query_many(&self, bytes: &[u8], principal: &Principal) -> Reply {
        let req: QueryManyBody = body(bytes)?;
        let entries = self.platform.runtime().query_many(&req.skills, &req.request, principal).await.map_err(fail)?;
        let results: Vec<Value> = entries
            .into_iter()
            .map(|e| match e.result {
                Ok(output) => json!({ "skill_id": e.skill_id, "output": output }),
                Err(err) => json!({
                    "skill_id": e.skill_id,
                    "error": { "code": err.code(), "message": err.to_string(), "status": err.class().status() },
                }),
            })
            .collect();
        Ok(GatewayResponse::ok(json!({ "results": results })))
    }

    fn test_summary(&self, id: &str, principal: &Principal) -> Reply {
        let skill = self.platform.skills.get(id, principal).map_err(fail)?;
        let suites: Vec<Value> = self
            .suites
            .values()
            .map(|s| json!({ "suite_name": s.suite_name, "tests": s.tests.len(), "cases": s.case_count() }))
            .collect();
        let latest = self.platform.report(&skill.id).map(|r| report_summary(&r));
        Ok(GatewayResponse::ok(json!({ "skill_id": skill.id, "suites": suites, "latest": latest })))
    }

    async fn run_tests(&self, id: &str, bytes: &[u8], principal: &Principal) -> Reply {
        self.platform.skills.get(id, principal).map_err(fail)?;
        let req: RunTests = body(bytes)?;
        let suite = self.suites.get(&req.suite_name).ok_or_else(|| {
            GatewayResponse::error(404, "UnknownSuite", format!("unknown suite `{}`", req.suite_name))
        })?;
        let report = run_suite(&self.platform.runtime(), id, suite, principal).await.map_err(fail)?;
        let summary = report_summary(&report);
        self.platform.store_report(report).map_err(persist_failed)?;
        Ok(GatewayResponse::ok(summary))
    }

    fn download_report(&self, id: &str, principal: &Principal) -> Reply {
        let skill = self.platform.skills.get(id, principal).map_err(fail)?;
        let report = self.platform.report(&skill.id).ok_or_else(|| {
            GatewayResponse::error(404, "ReportNotFound", format!("no test report for skill `{id}`"))
        })?;
        Ok(GatewayResponse {
            status: 200,
            body: ResponseBody::Bytes { content_type: "application/json", bytes: export_report(&report) },
        })
    }
}

fn not_found(segments: &[&str]) -> GatewayResponse {
    GatewayResponse::error(404, "RouteNotFound", format!("no route for /{}", segments.join("/")))
}

/// Whether the path exists under some method.
fn is_known_route(rest: &[&str]) -> bool {
    matches!(
        rest,
        ["datastores"]
            | ["datastores", _, "documents"]
            | ["datastores", _, "indices", "sparse" | "dense"]
            | ["datastores", _, "search"]
            | ["models"]
            | ["models", _]
            | ["models", _, "predict"]
            | ["skills"]
            | ["skills", _]
            | ["skills", _, "query"]
            | ["query"]
            | ["skills", _, "tests"]
            | ["skills", _, "tests", "run" | "report"]
    )
}
