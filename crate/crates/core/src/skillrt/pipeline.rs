use super::{Answer, CharSpan, PipelineConfig, QueryOutput, QueryRequest, SkillError, SkillType};
use crate::datastore::{DatastoreRegistry, IndexKind, RetrievalResult};
use crate::modelhub::{
    AbstractiveRequest, CategoricalRequest, ExtractiveRequest, ModelHub, MultipleChoiceRequest, PredictOutput,
    PredictRequest,
};

/// A passage handed to the reader.
#[derive(Debug, Clone)]
struct Passage {
    doc_id: Option<String>,
    text: String,
    score: Option<f64>,
}

impl From<RetrievalResult> for Passage {
    fn from(r: RetrievalResult) -> Self {
        Passage { doc_id: Some(r.doc_id), text: r.document.text, score: Some(r.score) }
    }
}

impl Passage {
    fn decorate(&self, mut answer: Answer) -> Answer {
        answer.doc_id = self.doc_id.clone();
        answer.context = Some(self.text.clone());
        answer.context_score = self.score;
        answer
    }
}

async fn retrieve(
    pipeline: &PipelineConfig,
    request: &QueryRequest,
    datastores: &DatastoreRegistry,
    models: &ModelHub,
) -> Result<Vec<Passage>, SkillError> {
    if let Some(context) = &request.context {
        return Ok(vec![Passage { doc_id: None, text: context.clone(), score: None }]);
    }
    let (Some(datastore), Some(index)) = (&pipeline.datastore, pipeline.index) else {
        return Err(SkillError::ContextRequired);
    };
    let hits = match index {
        IndexKind::Sparse => datastores.sparse_search(datastore, &request.query, pipeline.retrieve_k)?,
        IndexKind::Dense => {
            let nprobe = match pipeline.nprobe {
                Some(n) => n,
                None => datastores.dense_index(datastore)?.nlist,
            };
            datastores.dense_search(datastore, &request.query, pipeline.retrieve_k, nprobe, models).await?
        }
    };
    Ok(hits.into_iter().map(Passage::from).collect())
}

/// Retrieves passages (unless the request carries a context), runs the reader
/// on each and pools the answers. Answers are ranked by reader score, ties by
/// retrieval rank, and truncated to `request.topk`. Retrieval scores are
/// attached as `context_score` but do not affect the ranking.
pub async fn run_pipeline(
    pipeline: &PipelineConfig,
    skill_type: SkillType,
    request: &QueryRequest,
    datastores: &DatastoreRegistry,
    models: &ModelHub,
) -> Result<QueryOutput, SkillError> {
    if request.query.trim().is_empty() {
        return Err(SkillError::InvalidRequest("query must be non-empty".into()));
    }
    if request.topk == 0 {
        return Err(SkillError::InvalidRequest("topk must be >= 1".into()));
    }
    let passages = retrieve(pipeline, request, datastores, models).await?;
    let worker = pipeline.reader_worker.as_str();
    let question = request.query.clone();

    // (answer, retrieval rank)
    let mut pooled: Vec<(Answer, usize)> = Vec::new();
    match skill_type {
        SkillType::Extractive => {
            for (rank, p) in passages.iter().enumerate() {
                let req = ExtractiveRequest { question: question.clone(), context: p.text.clone(), topk: pipeline.reader_topk };
                let PredictOutput::Extractive(out) = models.predict(worker, PredictRequest::Extractive(req)).await? else {
                    unreachable!("task checked by predict")
                };
                for s in out.spans {
                    let mut a = Answer::new(s.text, s.score);
                    a.span = Some(CharSpan { start: s.start_char, end: s.end_char });
                    pooled.push((p.decorate(a), rank));
                }
            }
        }
        SkillType::Categorical => {
            for (rank, p) in passages.iter().enumerate() {
                let req = CategoricalRequest { question: question.clone(), context: p.text.clone() };
                let PredictOutput::Categorical(out) = models.predict(worker, PredictRequest::Categorical(req)).await? else {
                    unreachable!("task checked by predict")
                };
                let score = out.scores.get(&out.label).copied().unwrap_or(0.0);
                pooled.push((p.decorate(Answer::new(out.label.as_str(), score)), rank));
            }
        }
        SkillType::MultipleChoice => {
            let options_from_context = request.options.is_none() && request.context.is_some();
            let options = request.resolved_options();
            for (rank, p) in passages.iter().enumerate() {
                let context = if options_from_context { String::new() } else { p.text.clone() };
                let req = MultipleChoiceRequest { question: question.clone(), context, options: options.clone() };
                let PredictOutput::MultipleChoice(out) =
                    models.predict(worker, PredictRequest::MultipleChoice(req)).await?
                else {
                    unreachable!("task checked by predict")
                };
                for o in out.ranked.into_iter().take(pipeline.reader_topk) {
                    pooled.push((p.decorate(Answer::new(o.option, o.score)), rank));
                }
            }
        }
        SkillType::Abstractive => {
            let contexts: Vec<String> = passages.iter().map(|p| p.text.clone()).collect();
            let req = AbstractiveRequest { question: question.clone(), contexts };
            let PredictOutput::Abstractive(out) = models.predict(worker, PredictRequest::Abstractive(req)).await? else {
                unreachable!("task checked by predict")
            };
            let rank = passages.iter().position(|p| p.text.contains(&out.text)).unwrap_or(0);
            let answer = Answer::new(out.text, out.score);
            pooled.push((passages.get(rank).map_or(answer.clone(), |p| p.decorate(answer)), rank));
        }
    }

    pooled.sort_by(|a, b| b.0.score.total_cmp(&a.0.score).then(a.1.cmp(&b.1)));
    let answers = pooled.into_iter().take(request.topk).map(|(a, _)| a).collect();
    Ok(QueryOutput { skill_id: String::new(), answers })
}
