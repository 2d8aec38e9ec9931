//! Test reports and their canonical JSON form.
//!
//! The exported document has object keys sorted at every level and each
//! failure rate rendered as a string with two decimals, so identical reports
//! export to identical bytes.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{BehaveError, TestType};

/// Failed examples kept per test; the failure count is never truncated.
pub const FAILED_EXAMPLE_CAP: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedExample {
    pub context: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbed_question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<String>,
    pub prediction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction_after: Option<String>,
    /// Set when the skill errored instead of answering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub highlight: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestResult {
    pub name: String,
    #[serde(rename = "type")]
    pub test_type: TestType,
    pub capability: String,
    pub total: usize,
    pub failures: usize,
    /// Failures caused by query errors (subset of `failures`).
    pub errors: usize,
    pub failed_examples: Vec<FailedExample>,
}

impl TestResult {
    /// `100 * failures / total`, 0 for an empty test.
    pub fn failure_rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.failures as f64 / self.total as f64
        }
    }

    pub fn failure_rate_display(&self) -> String {
        format!("{:.2}", self.failure_rate())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestReport {
    pub skill_id: String,
    pub suite_name: String,
    pub tests: Vec<TestResult>,
}

impl TestReport {
    pub fn test(&self, name: &str) -> Option<&TestResult> {
        self.tests.iter().find(|t| t.name == name)
    }
}

fn sorted(value: Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k, sorted(v))).collect::<Map<_, _>>())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sorted).collect()),
        other => other,
    }
}

pub fn export_report(report: &TestReport) -> Vec<u8> {
    let mut value = serde_json::to_value(report).expect("report serializes");
    let tests = value["tests"].as_array_mut().expect("tests array");
    for (wire, result) in tests.iter_mut().zip(&report.tests) {
        wire["failure_rate"] = Value::String(result.failure_rate_display());
    }
    let mut bytes = serde_json::to_vec_pretty(&sorted(value)).expect("report serializes");
    bytes.push(b'\n');
    bytes
}

/// Parses an exported report, checking each stored rate against its counts.
pub fn parse_report(bytes: &[u8]) -> Result<TestReport, BehaveError> {
    let parse_err = |e: serde_json::Error| BehaveError::ParseError { line: e.line(), column: e.column(), message: e.to_string() };
    let mut value: Value = serde_json::from_slice(bytes).map_err(parse_err)?;
    let mut rates = Vec::new();
    if let Some(tests) = value.get_mut("tests").and_then(Value::as_array_mut) {
        for t in tests.iter_mut() {
            rates.push(t.as_object_mut().and_then(|o| o.remove("failure_rate")));
        }
    }
    let report: TestReport = serde_json::from_value(value).map_err(parse_err)?;
    for (i, (result, rate)) in report.tests.iter().zip(rates).enumerate() {
        let expected = result.failure_rate_display();
        if rate.as_ref().and_then(Value::as_str) != Some(expected.as_str()) {
            return Err(BehaveError::SchemaError {
                test: i,
                case: None,
                reason: format!("failure_rate must be \"{expected}\""),
            });
        }
        if result.failures > result.total || result.errors > result.failures {
            return Err(BehaveError::SchemaError { test: i, case: None, reason: "inconsistent counts".into() });
        }
    }
    Ok(report)
}
