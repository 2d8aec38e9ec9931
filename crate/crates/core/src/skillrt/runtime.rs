use futures::future::join_all;

use super::{
    run_pipeline, Hosting, QueryOutput, QueryRequest, Skill, SkillError, SkillRegistry, SkillType,
};
use crate::datastore::DatastoreRegistry;
use crate::modelhub::{ModelHub, REMOTE_TIMEOUT};
use crate::principal::Principal;

/// Borrowed view over everything a skill needs to execute.
#[derive(Clone, Copy)]
pub struct SkillRuntime<'a> {
    pub skills: &'a SkillRegistry,
    pub datastores: &'a DatastoreRegistry,
    pub models: &'a ModelHub,
    pub http: &'a reqwest::Client,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryManyEntry {
    pub skill_id: String,
    pub result: Result<QueryOutput, SkillError>,
}

pub fn http_client() -> reqwest::Client {
    reqwest::Client::builder().timeout(REMOTE_TIMEOUT).build().expect("http client")
}

/// Checks the `QueryOutput` invariants for a skill of type `skill_type`.
pub fn validate_output(skill_type: SkillType, output: &QueryOutput) -> Result<(), String> {
    for (i, a) in output.answers.iter().enumerate() {
        if !a.score.is_finite() {
            return Err(format!("answer {i} has a non-finite score"));
        }
        if a.context_score.is_some_and(|s| !s.is_finite()) {
            return Err(format!("answer {i} has a non-finite context_score"));
        }
        match (&a.span, skill_type) {
            (None, SkillType::Extractive) => return Err(format!("answer {i} lacks a span")),
            (Some(_), t) if t != SkillType::Extractive => {
                return Err(format!("answer {i} has a span but the skill is not extractive"))
            }
            (Some(s), _) if s.start >= s.end => return Err(format!("answer {i} has an empty span")),
            _ => {}
        }
    }
    if output.answers.windows(2).any(|w| w[0].score < w[1].score) {
        return Err("answers are not sorted by score".into());
    }
    Ok(())
}

impl<'a> SkillRuntime<'a> {
    pub async fn query_skill(
        &self,
        skill_id: &str,
        request: &QueryRequest,
        principal: &Principal,
    ) -> Result<QueryOutput, SkillError> {
        let skill = self.skills.get(skill_id, principal)?;
        self.execute(&skill, request).await
    }

    pub async fn execute(&self, skill: &Skill, request: &QueryRequest) -> Result<QueryOutput, SkillError> {
        if request.query.trim().is_empty() {
            return Err(SkillError::InvalidRequest("query must be non-empty".into()));
        }
        if skill.spec.requires_context && request.context.is_none() {
            return Err(SkillError::ContextRequired);
        }
        let mut output = match skill.spec.hosting {
            Hosting::Internal => {
                let pipeline = skill.spec.pipeline.as_ref().ok_or_else(|| {
                    SkillError::ValidationFailed(format!("skill `{}` has no pipeline", skill.id))
                })?;
                run_pipeline(pipeline, skill.spec.skill_type, request, self.datastores, self.models).await?
            }
            Hosting::Remote => self.call_remote(skill, request).await?,
        };
        output.skill_id = skill.id.clone();
        Ok(output)
    }

    async fn call_remote(&self, skill: &Skill, request: &QueryRequest) -> Result<QueryOutput, SkillError> {
        let endpoint = skill.spec.endpoint.as_deref().unwrap_or_default();
        let response = self
            .http
            .post(endpoint)
            .json(request)
            .send()
            .await
            .map_err(|e| SkillError::RemoteSkillError(format!("unreachable: {e}")))?;
        if !response.status().is_success() {
            return Err(SkillError::RemoteSkillError(format!("status {}", response.status())));
        }
        let output: QueryOutput =
            response.json().await.map_err(|e| SkillError::RemoteSkillError(format!("invalid output: {e}")))?;
        validate_output(skill.spec.skill_type, &output)
            .map_err(|e| SkillError::RemoteSkillError(format!("invalid output: {e}")))?;
        Ok(output)
    }

    /// Queries every skill concurrently. Entries come back in input order and
    /// a failing skill only affects its own entry.
    pub async fn query_many(
        &self,
        skill_ids: &[String],
        request: &QueryRequest,
        principal: &Principal,
    ) -> Result<Vec<QueryManyEntry>, SkillError> {
        if skill_ids.is_empty() {
            return Err(SkillError::InvalidRequest("at least one skill id is required".into()));
        }
        for (i, id) in skill_ids.iter().enumerate() {
            if skill_ids[..i].contains(id) {
                return Err(SkillError::DuplicateSkillIds(id.clone()));
            }
        }
        let results = join_all(skill_ids.iter().map(|id| self.query_skill(id, request, principal))).await;
        Ok(skill_ids
            .iter()
            .zip(results)
            .map(|(id, result)| QueryManyEntry { skill_id: id.clone(), result })
            .collect())
    }
}
