//! Model workers: registry, management and per-name inference routing.
//!
//! Built-in stub workers run in-process. Remote workers are reached through a
//! single POST endpoint that takes `{"task", "payload"}` and answers
//! `{"output"}`.

mod embed;
mod readers;

use std::collections::BTreeMap;
use std::time::Duration;

use parking_lot::RwLock;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub use embed::{fnv1a, hash_embed, hash_embed_one, FNV_PRIME, INDEX_OFFSET_BASIS, MIN_DIM, SIGN_OFFSET_BASIS};
pub use readers::{
    echo_last_word, negation_cues, read_abstractive, read_categorical, read_extractive, read_multichoice,
    AbstractiveOutput, CategoricalOutput, Label, OptionScore, Span, NEGATION_CUES,
};

use crate::error::{ErrorClass, ErrorCode};

pub const REMOTE_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Embedding,
    Extractive,
    Categorical,
    MultipleChoice,
    Abstractive,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Embedding => "embedding",
            Task::Extractive => "extractive",
            Task::Categorical => "categorical",
            Task::MultipleChoice => "multiple-choice",
            Task::Abstractive => "abstractive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkerImpl {
    BuiltinStub,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerSpec {
    pub name: String,
    pub task: Task,
    #[serde(rename = "impl")]
    pub implementation: WorkerImpl,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
}

impl WorkerSpec {
    pub fn builtin(name: impl Into<String>, task: Task) -> Self {
        WorkerSpec {
            name: name.into(),
            task,
            implementation: WorkerImpl::BuiltinStub,
            endpoint: None,
            params: BTreeMap::new(),
        }
    }

    pub fn remote(name: impl Into<String>, task: Task, endpoint: impl Into<String>) -> Self {
        WorkerSpec {
            name: name.into(),
            task,
            implementation: WorkerImpl::Remote,
            endpoint: Some(endpoint.into()),
            params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.params.get("dim").and_then(Value::as_u64).map(|d| d as usize)
    }

    fn kind(&self) -> Option<&str> {
        self.params.get("kind").and_then(Value::as_str)
    }
}

/// Built-in workers every fresh deployment starts with.
pub fn stock_workers() -> Vec<WorkerSpec> {
    vec![
        WorkerSpec::builtin("hash-embed-64", Task::Embedding).with_param("dim", 64),
        WorkerSpec::builtin("hash-embed-256", Task::Embedding).with_param("dim", 256),
        WorkerSpec::builtin("span-reader", Task::Extractive),
        WorkerSpec::builtin("boolean-reader", Task::Categorical),
        WorkerSpec::builtin("choice-reader", Task::MultipleChoice),
        WorkerSpec::builtin("sentence-generator", Task::Abstractive),
    ]
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("worker `{0}` already exists")]
    DuplicateName(String),
    #[error("unknown worker `{0}`")]
    UnknownWorker(String),
    #[error("remote worker `{0}` has no endpoint")]
    MissingEndpoint(String),
    #[error("invalid worker spec: {0}")]
    InvalidSpec(String),
    #[error("payload does not match task: {0}")]
    PayloadMismatch(String),
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error("at least 2 options are required, got {0}")]
    TooFewOptions(usize),
    #[error("remote worker unreachable: {0}")]
    RemoteUnreachable(String),
    #[error("remote worker returned an invalid response: {0}")]
    RemoteError(String),
}

impl ErrorCode for ModelError {
    fn code(&self) -> &'static str {
        match self {
            ModelError::DuplicateName(_) => "DuplicateName",
            ModelError::UnknownWorker(_) => "UnknownWorker",
            ModelError::MissingEndpoint(_) => "MissingEndpoint",
            ModelError::InvalidSpec(_) => "ValidationFailed",
            ModelError::PayloadMismatch(_) => "PayloadMismatch",
            ModelError::InvalidPayload(_) => "InvalidPayload",
            ModelError::TooFewOptions(_) => "TooFewOptions",
            ModelError::RemoteUnreachable(_) => "RemoteUnreachable",
            ModelError::RemoteError(_) => "RemoteError",
        }
    }

    fn class(&self) -> ErrorClass {
        match self {
            ModelError::UnknownWorker(_) => ErrorClass::NotFound,
            ModelError::RemoteUnreachable(_) | ModelError::RemoteError(_) => ErrorClass::Remote,
            _ => ErrorClass::Validation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedOutput {
    pub vectors: Vec<Vec<f32>>,
}

fn default_topk() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractiveRequest {
    pub question: String,
    pub context: String,
    #[serde(default = "default_topk")]
    pub topk: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractiveOutput {
    pub spans: Vec<Span>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoricalRequest {
    pub question: String,
    pub context: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultipleChoiceRequest {
    pub question: String,
    #[serde(default)]
    pub context: String,
    pub options: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultipleChoiceOutput {
    pub ranked: Vec<OptionScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbstractiveRequest {
    pub question: String,
    pub contexts: Vec<String>,
}

/// A task-specific request payload.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictRequest {
    Embedding(EmbedRequest),
    Extractive(ExtractiveRequest),
    Categorical(CategoricalRequest),
    MultipleChoice(MultipleChoiceRequest),
    Abstractive(AbstractiveRequest),
}

impl PredictRequest {
    pub fn task(&self) -> Task {
        match self {
            PredictRequest::Embedding(_) => Task::Embedding,
            PredictRequest::Extractive(_) => Task::Extractive,
            PredictRequest::Categorical(_) => Task::Categorical,
            PredictRequest::MultipleChoice(_) => Task::MultipleChoice,
            PredictRequest::Abstractive(_) => Task::Abstractive,
        }
    }

    /// Parses `payload` as the request type of `task`.
    pub fn parse(task: Task, payload: Value) -> Result<Self, ModelError> {
        fn typed<T: DeserializeOwned>(task: Task, v: Value) -> Result<T, ModelError> {
            serde_json::from_value(v).map_err(|e| ModelError::PayloadMismatch(format!("{} payload: {e}", task.as_str())))
        }
        Ok(match task {
            Task::Embedding => PredictRequest::Embedding(typed(task, payload)?),
            Task::Extractive => PredictRequest::Extractive(typed(task, payload)?),
            Task::Categorical => PredictRequest::Categorical(typed(task, payload)?),
            Task::MultipleChoice => PredictRequest::MultipleChoice(typed(task, payload)?),
            Task::Abstractive => PredictRequest::Abstractive(typed(task, payload)?),
        })
    }

    pub fn to_value(&self) -> Value {
        match self {
            PredictRequest::Embedding(r) => serde_json::to_value(r),
            PredictRequest::Extractive(r) => serde_json::to_value(r),
            PredictRequest::Categorical(r) => serde_json::to_value(r),
            PredictRequest::MultipleChoice(r) => serde_json::to_value(r),
            PredictRequest::Abstractive(r) => serde_json::to_value(r),
        }
        .expect("request serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictOutput {
    Embedding(EmbedOutput),
    Extractive(ExtractiveOutput),
    Categorical(CategoricalOutput),
    MultipleChoice(MultipleChoiceOutput),
    Abstractive(AbstractiveOutput),
}

impl PredictOutput {
    pub fn parse(task: Task, output: Value) -> Result<Self, ModelError> {
        fn typed<T: DeserializeOwned>(v: Value) -> Result<T, ModelError> {
            serde_json::from_value(v).map_err(|e| ModelError::RemoteError(e.to_string()))
        }
        Ok(match task {
            Task::Embedding => PredictOutput::Embedding(typed(output)?),
            Task::Extractive => PredictOutput::Extractive(typed(output)?),
            Task::Categorical => PredictOutput::Categorical(typed(output)?),
            Task::MultipleChoice => PredictOutput::MultipleChoice(typed(output)?),
            Task::Abstractive => PredictOutput::Abstractive(typed(output)?),
        })
    }

    pub fn to_value(&self) -> Value {
        match self {
            PredictOutput::Embedding(o) => serde_json::to_value(o),
            PredictOutput::Extractive(o) => serde_json::to_value(o),
            PredictOutput::Categorical(o) => serde_json::to_value(o),
            PredictOutput::MultipleChoice(o) => serde_json::to_value(o),
            PredictOutput::Abstractive(o) => serde_json::to_value(o),
        }
        .expect("output serializes")
    }
}

fn validate_worker_name(name: &str) -> Result<(), ModelError> {
    let ok = (1..=128).contains(&name.len())
        && name.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'));
    if ok {
        Ok(())
    } else {
        Err(ModelError::InvalidSpec(format!("worker name `{name}` must be 1-128 characters from [A-Za-z0-9._-]")))
    }
}

fn validate_spec(spec: &WorkerSpec) -> Result<(), ModelError> {
    validate_worker_name(&spec.name)?;
    match spec.implementation {
        WorkerImpl::Remote => {
            let endpoint = spec.endpoint.as_deref().filter(|e| !e.trim().is_empty());
            let endpoint = endpoint.ok_or_else(|| ModelError::MissingEndpoint(spec.name.clone()))?;
            reqwest::Url::parse(endpoint).map_err(|e| ModelError::InvalidSpec(format!("endpoint: {e}")))?;
        }
        WorkerImpl::BuiltinStub => {
            if spec.endpoint.is_some() {
                return Err(ModelError::InvalidSpec("builtin workers take no endpoint".into()));
            }
            match (spec.task, spec.kind()) {
                (Task::Embedding, None) => match spec.embedding_dim() {
                    Some(d) if d >= MIN_DIM => {}
                    _ => return Err(ModelError::InvalidSpec(format!("embedding workers need params.dim >= {MIN_DIM}"))),
                },
                (Task::Abstractive, Some("constant")) => {
                    if spec.params.get("answer").and_then(Value::as_str).is_none() {
                        return Err(ModelError::InvalidSpec("constant workers need a string params.answer".into()));
                    }
                }
                (Task::Abstractive, Some("echo-last-word")) => {}
                (_, None) => {}
                (task, Some(kind)) => {
                    return Err(ModelError::InvalidSpec(format!(
                        "unknown builtin kind `{kind}` for {} workers",
                        task.as_str()
                    )))
                }
            }
        }
    }
    Ok(())
}

/// Runs a built-in stub. Pure in `(spec, request)`.
pub fn run_builtin(spec: &WorkerSpec, request: PredictRequest) -> Result<PredictOutput, ModelError> {
    if request.task() != spec.task {
        return Err(ModelError::PayloadMismatch(format!(
            "worker `{}` serves {}, got a {} request",
            spec.name,
            spec.task.as_str(),
            request.task().as_str()
        )));
    }
    Ok(match request {
        PredictRequest::Embedding(r) => {
            let dim = spec.embedding_dim().ok_or_else(|| ModelError::InvalidSpec("missing params.dim".into()))?;
            if dim < MIN_DIM {
                return Err(ModelError::InvalidSpec(format!("dim must be >= {MIN_DIM}")));
            }
            PredictOutput::Embedding(EmbedOutput { vectors: hash_embed(&r.texts, dim) })
        }
        PredictRequest::Extractive(r) => {
            PredictOutput::Extractive(ExtractiveOutput { spans: read_extractive(&r.question, &r.context, r.topk)? })
        }
        PredictRequest::Categorical(r) => PredictOutput::Categorical(read_categorical(&r.question, &r.context)?),
        PredictRequest::MultipleChoice(r) => PredictOutput::MultipleChoice(MultipleChoiceOutput {
            ranked: read_multichoice(&r.question, &r.context, &r.options)?,
        }),
        PredictRequest::Abstractive(r) => PredictOutput::Abstractive(match spec.kind() {
            Some("constant") => AbstractiveOutput {
                text: spec.params.get("answer").and_then(Value::as_str).unwrap_or_default().to_string(),
                score: 1.0,
            },
            Some("echo-last-word") => echo_last_word(&r.question),
            _ => read_abstractive(&r.question, &r.contexts)?,
        }),
    })
}

/// Worker registry plus the inference router.
#[derive(Debug)]
pub struct ModelHub {
    workers: RwLock<BTreeMap<String, WorkerSpec>>,
    http: reqwest::Client,
}

impl Default for ModelHub {
    fn default() -> Self {
        Self::new()
    }
}

impl ModelHub {
    pub fn new() -> Self {
        let http = reqwest::Client::builder().timeout(REMOTE_TIMEOUT).build().expect("http client");
        ModelHub { workers: RwLock::new(BTreeMap::new()), http }
    }

    pub fn with_stock_workers() -> Self {
        let hub = Self::new();
        for spec in stock_workers() {
            hub.deploy(spec).expect("stock workers are valid");
        }
        hub
    }

    pub fn deploy(&self, spec: WorkerSpec) -> Result<(), ModelError> {
        validate_spec(&spec)?;
        let mut workers = self.workers.write();
        if workers.contains_key(&spec.name) {
            return Err(ModelError::DuplicateName(spec.name));
        }
        workers.insert(spec.name.clone(), spec);
        Ok(())
    }

    /// Replaces a worker's spec. The task cannot change.
    pub fn update(&self, spec: WorkerSpec) -> Result<(), ModelError> {
        validate_spec(&spec)?;
        let mut workers = self.workers.write();
        let current = workers.get_mut(&spec.name).ok_or_else(|| ModelError::UnknownWorker(spec.name.clone()))?;
        if current.task != spec.task {
            return Err(ModelError::InvalidSpec(format!(
                "task of `{}` is fixed to {}",
                spec.name,
                current.task.as_str()
            )));
        }
        *current = spec;
        Ok(())
    }

    pub fn remove(&self, name: &str) -> Result<WorkerSpec, ModelError> {
        self.workers.write().remove(name).ok_or_else(|| ModelError::UnknownWorker(name.to_string()))
    }

    /// All workers sorted by name.
    pub fn list(&self) -> Vec<WorkerSpec> {
        self.workers.read().values().cloned().collect()
    }

    pub fn get(&self, name: &str) -> Option<WorkerSpec> {
        self.workers.read().get(name).cloned()
    }

    fn spec(&self, name: &str) -> Result<WorkerSpec, ModelError> {
        self.get(name).ok_or_else(|| ModelError::UnknownWorker(name.to_string()))
    }

    /// Routes a raw JSON payload to the named worker. Remote responses are
    /// passed through unmodified.
    pub async fn route_predict(&self, name: &str, payload: Value) -> Result<Value, ModelError> {
        let spec = self.spec(name)?;
        let request = PredictRequest::parse(spec.task, payload.clone())?;
        match spec.implementation {
            WorkerImpl::BuiltinStub => Ok(run_builtin(&spec, request)?.to_value()),
            WorkerImpl::Remote => self.call_remote(&spec, payload).await,
        }
    }

    /// Typed routing: the request must match the worker's task.
    pub async fn predict(&self, name: &str, request: PredictRequest) -> Result<PredictOutput, ModelError> {
        let spec = self.spec(name)?;
        if spec.task != request.task() {
            return Err(ModelError::PayloadMismatch(format!(
                "worker `{name}` serves {}, got a {} request",
                spec.task.as_str(),
                request.task().as_str()
            )));
        }
        match spec.implementation {
            WorkerImpl::BuiltinStub => run_builtin(&spec, request),
            WorkerImpl::Remote => {
                let output = self.call_remote(&spec, request.to_value()).await?;
                PredictOutput::parse(spec.task, output)
            }
        }
    }

    pub async fn embed(&self, name: &str, texts: Vec<String>) -> Result<Vec<Vec<f32>>, ModelError> {
        match self.predict(name, PredictRequest::Embedding(EmbedRequest { texts })).await? {
            PredictOutput::Embedding(o) => Ok(o.vectors),
            _ => unreachable!("task checked by predict"),
        }
    }

    async fn call_remote(&self, spec: &WorkerSpec, payload: Value) -> Result<Value, ModelError> {
        let endpoint = spec.endpoint.as_deref().ok_or_else(|| ModelError::MissingEndpoint(spec.name.clone()))?;
        let response = self
            .http
            .post(endpoint)
            .json(&json!({ "task": spec.task, "payload": payload }))
            .send()
            .await
            .map_err(|e| ModelError::RemoteUnreachable(e.to_string()))?;
        if !response.status().is_success() {
            return Err(ModelError::RemoteError(format!("status {}", response.status())));
        }
        let mut body: Value = response.json().await.map_err(|e| ModelError::RemoteError(e.to_string()))?;
        match body.get_mut("output") {
            Some(output) => Ok(output.take()),
            None => Err(ModelError::RemoteError("response has no `output` field".into())),
        }
    }
}
