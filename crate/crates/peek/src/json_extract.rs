//! Extraction of the first balanced top-level JSON object from LLM output,
//! tolerating code fences, surrounding prose and trailing junk.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum JsonExtractError {
    #[error("no parseable JSON object found in response (starts with {snippet:?})")]
    NoJsonObject { snippet: String },
}

fn snippet_of(text: &str) -> String {
    text.trim().chars().take(200).collect()
}

/// Scans `text` for `{`-starts in order and returns the first balanced span
/// that parses as JSON. String literals and escapes are honored during
/// balancing, so braces inside strings don't confuse the scan.
pub fn extract_first_json_object(text: &str) -> Result<serde_json::Value, JsonExtractError> {
    let bytes = text.as_bytes();
    let mut start_from = 0;
    while let Some(rel) = text[start_from..].find('{') {
        let start = start_from + rel;
        if let Some(end) = balanced_end(bytes, start) {
            if let Ok(value) = serde_json::from_str::<serde_json::Value>(&text[start..=end]) {
                return Ok(value);
            }
        }
        start_from = start + 1;
    }
    Err(JsonExtractError::NoJsonObject {
        snippet: snippet_of(text),
    })
}

/// Index of the `}` closing the object opened at `start`, or None if the
/// braces never balance.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    debug_assert_eq!(bytes[start], b'{');
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, &b) in bytes[start..].iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(start + offset);
                }
            }
            _ => {}
        }
    }
    None
}
