//! Skill registry and execution.
//!
//! A skill is either an internal pipeline (optional retrieval followed by a
//! reader worker) or a remote endpoint speaking the `QueryRequest` /
//! `QueryOutput` JSON contract. Private skills are visible only to their
//! owner; every other principal gets `SkillNotFound`.

mod pipeline;
mod runtime;

use std::collections::BTreeMap;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use pipeline::run_pipeline;
pub use runtime::{http_client, validate_output, QueryManyEntry, SkillRuntime};

use crate::datastore::{DatastoreError, IndexKind};
use crate::error::{ErrorClass, ErrorCode};
use crate::modelhub::{ModelError, Task};
use crate::principal::Principal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkillType {
    Extractive,
    Categorical,
    MultipleChoice,
    Abstractive,
}

impl SkillType {
    pub fn reader_task(self) -> Task {
        match self {
            SkillType::Extractive => Task::Extractive,
            SkillType::Categorical => Task::Categorical,
            SkillType::MultipleChoice => Task::MultipleChoice,
            SkillType::Abstractive => Task::Abstractive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    Public,
    Private,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hosting {
    Internal,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub datastore: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<IndexKind>,
    #[serde(default = "one")]
    pub retrieve_k: usize,
    pub reader_worker: String,
    #[serde(default = "one")]
    pub reader_topk: usize,
    /// Dense probes; defaults to every list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nprobe: Option<usize>,
}

fn one() -> usize {
    1
}

impl PipelineConfig {
    pub fn is_open_domain(&self) -> bool {
        self.datastore.is_some()
    }
}

/// Everything a client supplies when registering or updating a skill.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub skill_type: SkillType,
    pub requires_context: bool,
    pub visibility: Visibility,
    pub hosting: Hosting,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<PipelineConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skill {
    pub id: String,
    pub owner: String,
    #[serde(flatten)]
    pub spec: SkillSpec,
}

impl Skill {
    pub fn visible_to(&self, principal: &Principal) -> bool {
        self.spec.visibility == Visibility::Public || principal.is(&self.owner)
    }
}

fn default_query_topk() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRequest {
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    #[serde(default = "default_query_topk")]
    pub topk: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub skill_args: BTreeMap<String, Value>,
}

impl QueryRequest {
    pub fn new(query: impl Into<String>) -> Self {
        QueryRequest { query: query.into(), context: None, options: None, topk: 5, skill_args: BTreeMap::new() }
    }

    pub fn with_context(mut self, context: impl Into<String>) -> Self {
        self.context = Some(context.into());
        self
    }

    pub fn with_topk(mut self, topk: usize) -> Self {
        self.topk = topk;
        self
    }

    /// Options field if given, otherwise the non-blank context lines.
    pub fn resolved_options(&self) -> Vec<String> {
        match (&self.options, &self.context) {
            (Some(o), _) => o.clone(),
            (None, Some(c)) => c.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect(),
            (None, None) => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<CharSpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_score: Option<f64>,
}

impl Answer {
    pub fn new(text: impl Into<String>, score: f64) -> Self {
        Answer { text: text.into(), score, span: None, doc_id: None, context: None, context_score: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutput {
    #[serde(default)]
    pub skill_id: String,
    pub answers: Vec<Answer>,
}

impl QueryOutput {
    pub fn top(&self) -> Option<&Answer> {
        self.answers.first()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SkillError {
    #[error("skill `{0}` not found")]
    SkillNotFound(String),
    #[error("only the owner may modify skill `{0}`")]
    NotOwner(String),
    #[error("sign in to manage skills")]
    Unauthenticated,
    #[error("invalid skill: {0}")]
    ValidationFailed(String),
    #[error("invalid query: {0}")]
    InvalidRequest(String),
    #[error("this skill requires a context")]
    ContextRequired,
    #[error("remote skill failed: {0}")]
    RemoteSkillError(String),
    #[error("duplicate skill id `{0}` in request")]
    DuplicateSkillIds(String),
    #[error(transparent)]
    Datastore(#[from] DatastoreError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl ErrorCode for SkillError {
    fn code(&self) -> &'static str {
        match self {
            SkillError::SkillNotFound(_) => "SkillNotFound",
            SkillError::NotOwner(_) => "NotOwner",
            SkillError::Unauthenticated => "AuthenticationRequired",
            SkillError::ValidationFailed(_) => "ValidationFailed",
            SkillError::InvalidRequest(_) => "InvalidRequest",
            SkillError::ContextRequired => "ContextRequired",
            SkillError::RemoteSkillError(_) => "RemoteSkillError",
            SkillError::DuplicateSkillIds(_) => "DuplicateSkillIds",
            SkillError::Datastore(e) => e.code(),
            SkillError::Model(e) => e.code(),
        }
    }

    fn class(&self) -> ErrorClass {
        match self {
            SkillError::SkillNotFound(_) => ErrorClass::NotFound,
            SkillError::NotOwner(_) => ErrorClass::NotFound,
            SkillError::Unauthenticated => ErrorClass::Unauthenticated,
            SkillError::RemoteSkillError(_) => ErrorClass::Remote,
            SkillError::Datastore(e) => e.class(),
            SkillError::Model(e) => e.class(),
            _ => ErrorClass::Validation,
        }
    }
}

pub fn validate_spec(spec: &SkillSpec) -> Result<(), SkillError> {
    let fail = |m: &str| Err(SkillError::ValidationFailed(m.to_string()));
    if spec.name.trim().is_empty() {
        return fail("name must be non-empty");
    }
    match spec.hosting {
        Hosting::Remote => {
            let Some(endpoint) = spec.endpoint.as_deref().filter(|e| !e.trim().is_empty()) else {
                return fail("remote skills need an endpoint");
            };
            if reqwest::Url::parse(endpoint).is_err() {
                return fail("endpoint is not a valid URL");
            }
            if spec.pipeline.is_some() {
                return fail("remote skills take no pipeline");
            }
        }
        Hosting::Internal => {
            let Some(p) = &spec.pipeline else {
                return fail("internal skills need a pipeline");
            };
            if spec.endpoint.is_some() {
                return fail("internal skills take no endpoint");
            }
            if p.retrieve_k == 0 || p.reader_topk == 0 {
                return fail("retrieve_k and reader_topk must be >= 1");
            }
            if p.reader_worker.trim().is_empty() {
                return fail("pipeline needs a reader_worker");
            }
            if p.datastore.is_some() != p.index.is_some() {
                return fail("datastore and index must be given together");
            }
            if p.nprobe == Some(0) {
                return fail("nprobe must be >= 1");
            }
            if p.is_open_domain() && spec.requires_context {
                return fail("open-domain skills must not require a context");
            }
            if !p.is_open_domain() && !spec.requires_context {
                return fail("skills without a datastore must require a context");
            }
        }
    }
    Ok(())
}

/// Registered skills. Concurrent reads, exclusive writes.
#[derive(Debug, Default)]
pub struct SkillRegistry {
    skills: RwLock<BTreeMap<String, Skill>>,
}

impl SkillRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_skills(skills: impl IntoIterator<Item = Skill>) -> Self {
        SkillRegistry { skills: RwLock::new(skills.into_iter().map(|s| (s.id.clone(), s)).collect()) }
    }

    pub fn register(&self, spec: SkillSpec, principal: &Principal) -> Result<Skill, SkillError> {
        let owner = principal.user_id().ok_or(SkillError::Unauthenticated)?;
        validate_spec(&spec)?;
        let skill = Skill { id: uuid::Uuid::new_v4().to_string(), owner: owner.to_string(), spec };
        self.skills.write().insert(skill.id.clone(), skill.clone());
        Ok(skill)
    }

    pub fn get(&self, id: &str, principal: &Principal) -> Result<Skill, SkillError> {
        self.skills
            .read()
            .get(id)
            .filter(|s| s.visible_to(principal))
            .cloned()
            .ok_or_else(|| SkillError::SkillNotFound(id.to_string()))
    }

    fn owned(&self, skills: &BTreeMap<String, Skill>, id: &str, principal: &Principal) -> Result<(), SkillError> {
        let skill = skills.get(id).filter(|s| s.visible_to(principal));
        let skill = skill.ok_or_else(|| SkillError::SkillNotFound(id.to_string()))?;
        if !principal.is(&skill.owner) {
            return Err(SkillError::NotOwner(id.to_string()));
        }
        Ok(())
    }

    pub fn update(&self, id: &str, spec: SkillSpec, principal: &Principal) -> Result<Skill, SkillError> {
        let mut skills = self.skills.write();
        self.owned(&skills, id, principal)?;
        validate_spec(&spec)?;
        let skill = skills.get_mut(id).expect("checked above");
        skill.spec = spec;
        Ok(skill.clone())
    }

    pub fn remove(&self, id: &str, principal: &Principal) -> Result<Skill, SkillError> {
        let mut skills = self.skills.write();
        self.owned(&skills, id, principal)?;
        Ok(skills.remove(id).expect("checked above"))
    }

    /// Public skills plus the principal's private ones, sorted by name then id.
    pub fn list(&self, principal: &Principal) -> Vec<Skill> {
        let mut out: Vec<Skill> = self.skills.read().values().filter(|s| s.visible_to(principal)).cloned().collect();
        out.sort_by(|a, b| a.spec.name.cmp(&b.spec.name).then_with(|| a.id.cmp(&b.id)));
        out
    }

    /// Every skill regardless of visibility, for persistence.
    pub fn all(&self) -> Vec<Skill> {
        self.skills.read().values().cloned().collect()
    }
}
