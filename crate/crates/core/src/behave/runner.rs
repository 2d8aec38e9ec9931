use futures::future::join_all;

use super::report::{FailedExample, TestReport, TestResult, FAILED_EXAMPLE_CAP};
use super::{apply_perturbation, normalize, BehaveError, BehaviouralTest, BehaviouralTestSuite, Case, TestType};
use crate::principal::Principal;
use crate::skillrt::{QueryRequest, Skill, SkillRuntime};

struct CaseOutcome {
    failed: bool,
    errored: bool,
    example: FailedExample,
}

async fn top_answer(rt: &SkillRuntime<'_>, skill: &Skill, context: &str, question: &str) -> Result<String, String> {
    let request = QueryRequest::new(question).with_context(context).with_topk(1);
    match rt.execute(skill, &request).await {
        Ok(out) => Ok(out.top().map(|a| a.text.clone()).unwrap_or_default()),
        Err(e) => Err(e.to_string()),
    }
}

async fn run_case(rt: &SkillRuntime<'_>, skill: &Skill, test_type: TestType, case: &Case) -> CaseOutcome {
    let mut example = FailedExample {
        context: case.context.clone(),
        question: case.question.clone(),
        perturbed_question: None,
        expected: case.expected.clone(),
        prediction: String::new(),
        prediction_after: None,
        error: None,
        highlight: case.highlight.clone(),
    };
    let errored = |mut example: FailedExample, e: String| {
        example.error = Some(e);
        CaseOutcome { failed: true, errored: true, example }
    };

    match test_type {
        TestType::Mft => {
            let prediction = match top_answer(rt, skill, &case.context, &case.question).await {
                Ok(p) => p,
                Err(e) => return errored(example, e),
            };
            let expected = case.expected.as_deref().unwrap_or_default();
            let failed = normalize(&prediction) != normalize(expected);
            example.prediction = prediction;
            CaseOutcome { failed, errored: false, example }
        }
        TestType::Inv => {
            let perturbed = match (&case.perturbed_question, &case.generator) {
                (Some(q), _) => q.clone(),
                (None, Some(g)) => match apply_perturbation(&case.question, g) {
                    Ok(p) => {
                        if example.highlight.is_empty() {
                            example.highlight = p.highlight;
                        }
                        p.perturbed
                    }
                    Err(e) => return errored(example, e.to_string()),
                },
                (None, None) => return errored(example, "case has no perturbation".into()),
            };
            example.perturbed_question = Some(perturbed.clone());
            let (before, after) = futures::join!(
                top_answer(rt, skill, &case.context, &case.question),
                top_answer(rt, skill, &case.context, &perturbed)
            );
            match (before, after) {
                (Ok(before), Ok(after)) => {
                    let failed = normalize(&before) != normalize(&after);
                    example.prediction = before;
                    example.prediction_after = Some(after);
                    CaseOutcome { failed, errored: false, example }
                }
                (Err(e), _) | (_, Err(e)) => errored(example, e),
            }
        }
    }
}

async fn run_test(rt: &SkillRuntime<'_>, skill: &Skill, test: &BehaviouralTest) -> TestResult {
    let outcomes = join_all(test.cases.iter().map(|c| run_case(rt, skill, test.test_type, c))).await;
    let failures = outcomes.iter().filter(|o| o.failed).count();
    let errors = outcomes.iter().filter(|o| o.errored).count();
    let failed_examples =
        outcomes.into_iter().filter(|o| o.failed).take(FAILED_EXAMPLE_CAP).map(|o| o.example).collect();
    TestResult {
        name: test.name.clone(),
        test_type: test.test_type,
        capability: test.capability.clone(),
        total: test.cases.len(),
        failures,
        errors,
        failed_examples,
    }
}

/// Runs every test of `suite` against the skill. Cases run concurrently;
/// results keep suite order. Query errors count as (flagged) failures.
pub async fn run_suite(
    rt: &SkillRuntime<'_>,
    skill_id: &str,
    suite: &BehaviouralTestSuite,
    principal: &Principal,
) -> Result<TestReport, BehaveError> {
    let skill = rt.skills.get(skill_id, principal)?;
    let tests = join_all(suite.tests.iter().map(|t| run_test(rt, &skill, t))).await;
    Ok(TestReport { skill_id: skill.id.clone(), suite_name: suite.suite_name.clone(), tests })
}
