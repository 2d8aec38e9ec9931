//! Behavioural tests (minimum-functionality and invariance) over black-box skills.

mod normalize;
mod perturb;
mod report;
mod runner;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use normalize::normalize;
pub use perturb::{apply_perturbation, Generator, GeneratorKind, Perturbation, MIN_TYPO_WORD_CHARS};
pub use report::{export_report, parse_report, FailedExample, TestReport, TestResult, FAILED_EXAMPLE_CAP};
pub use runner::run_suite;

use crate::error::{ErrorClass, ErrorCode};
use crate::skillrt::SkillError;

/// The suite shipped with the platform.
pub const BUNDLED_SUITE_JSON: &str = include_str!("../../suites/qa_basics.json");

pub fn bundled_suite() -> BehaviouralTestSuite {
    load_suite(BUNDLED_SUITE_JSON.as_bytes()).expect("bundled suite is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestType {
    #[serde(rename = "MFT")]
    Mft,
    #[serde(rename = "INV")]
    Inv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub context: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbed_question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<Generator>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub highlight: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviouralTest {
    pub name: String,
    #[serde(rename = "type")]
    pub test_type: TestType,
    pub capability: String,
    #[serde(default)]
    pub description: String,
    pub cases: Vec<Case>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviouralTestSuite {
    pub suite_name: String,
    pub tests: Vec<BehaviouralTest>,
}

impl BehaviouralTestSuite {
    pub fn case_count(&self) -> usize {
        self.tests.iter().map(|t| t.cases.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BehaveError {
    #[error("suite parse error at line {line}, column {column}: {message}")]
    ParseError { line: usize, column: usize, message: String },
    #[error("test {test}{}: {reason}", case.map(|c| format!(", case {c}")).unwrap_or_default())]
    SchemaError { test: usize, case: Option<usize>, reason: String },
    #[error("no word eligible for a typo in `{0}`")]
    NoEligibleWord(String),
    #[error("invalid generator: {0}")]
    InvalidGenerator(String),
    #[error(transparent)]
    Skill(#[from] SkillError),
}

impl ErrorCode for BehaveError {
    fn code(&self) -> &'static str {
        match self {
            BehaveError::ParseError { .. } => "ParseError",
            BehaveError::SchemaError { .. } => "SchemaError",
            BehaveError::NoEligibleWord(_) => "NoEligibleWord",
            BehaveError::InvalidGenerator(_) => "InvalidGenerator",
            BehaveError::Skill(e) => e.code(),
        }
    }

    fn class(&self) -> ErrorClass {
        match self {
            BehaveError::Skill(e) => e.class(),
            _ => ErrorClass::Validation,
        }
    }
}

/// Parses and validates a suite file. Case indices in errors are 0-based.
pub fn load_suite(bytes: &[u8]) -> Result<BehaviouralTestSuite, BehaveError> {
    let suite: BehaviouralTestSuite = serde_json::from_slice(bytes).map_err(|e| BehaveError::ParseError {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    validate_suite(&suite)?;
    Ok(suite)
}

pub fn validate_suite(suite: &BehaviouralTestSuite) -> Result<(), BehaveError> {
    if suite.suite_name.trim().is_empty() {
        return Err(BehaveError::SchemaError { test: 0, case: None, reason: "suite_name must be non-empty".into() });
    }
    for (ti, test) in suite.tests.iter().enumerate() {
        let schema = |case: Option<usize>, reason: String| BehaveError::SchemaError { test: ti, case, reason };
        if test.name.trim().is_empty() {
            return Err(schema(None, "test name must be non-empty".into()));
        }
        for (ci, case) in test.cases.iter().enumerate() {
            let bad = |reason: &str| Err(schema(Some(ci), reason.to_string()));
            match test.test_type {
                TestType::Mft => {
                    if case.expected.is_none() {
                        return bad("MFT cases need `expected`");
                    }
                    if case.perturbed_question.is_some() || case.generator.is_some() {
                        return bad("MFT cases take neither `perturbed_question` nor `generator`");
                    }
                }
                TestType::Inv => match (&case.perturbed_question, &case.generator) {
                    (Some(_), Some(_)) => return bad("INV cases take `perturbed_question` or `generator`, not both"),
                    (None, None) => return bad("INV cases need `perturbed_question` or `generator`"),
                    (None, Some(g)) => {
                        if let Err(e) = apply_perturbation(&case.question, g) {
                            return Err(schema(Some(ci), e.to_string()));
                        }
                    }
                    (Some(_), None) => {}
                },
            }
        }
    }
    Ok(())
}
