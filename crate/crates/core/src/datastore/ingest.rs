use serde::Deserialize;

use super::DatastoreError;

/// One corpus line. Only `text` is required.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct DocumentInput {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub title: Option<String>,
    pub text: String,
}

/// Parses a JSON-Lines corpus. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn parse_jsonl(input: &str) -> Result<Vec<DocumentInput>, DatastoreError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc: DocumentInput =
            serde_json::from_str(line).map_err(|e| DatastoreError::Ingest { line: i + 1, reason: e.to_string() })?;
        if doc.text.trim().is_empty() {
            return Err(DatastoreError::Ingest { line: i + 1, reason: "text is empty".into() });
        }
        out.push(doc);
    }
    Ok(out)
}
