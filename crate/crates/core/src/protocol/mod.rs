//! Repair-agent protocol: prompt rendering, tool-call extraction from model
//! responses, and repetition detection.

mod extract;
mod prompts;
mod repetition;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub use extract::{extract_spec_fallback, fenced_blocks};
pub use prompts::*;
pub use repetition::{is_repetition, normalize_spec};

/// Characters of the raw response kept when nothing could be parsed.
pub const FAILURE_EXCERPT_CHARS: usize = 200;

/// Alias accepted for the `specification` field.
pub const SPEC_FIELD_ALIAS: &str = "proposed_specification";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub request: String,
    pub specification: String,
}

impl ToolCall {
    pub fn new(specification: impl Into<String>) -> Self {
        Self { request: TOOL_NAME.to_string(), specification: specification.into() }
    }

    /// Canonical wire form: `{"request": ..., "specification": ...}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("tool call serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParseVia {
    StrictJson,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParseOutcome {
    Parsed { call: ToolCall, via: ParseVia },
    Failure { raw_excerpt: String },
}

impl ParseOutcome {
    pub fn call(&self) -> Option<&ToolCall> {
        match self {
            ParseOutcome::Parsed { call, .. } => Some(call),
            ParseOutcome::Failure { .. } => None,
        }
    }

    pub fn via(&self) -> Option<ParseVia> {
        match self {
            ParseOutcome::Parsed { via, .. } => Some(*via),
            ParseOutcome::Failure { .. } => None,
        }
    }
}

/// Pulls the `run_alloy_analyzer` call out of a model response.
///
/// JSON objects anywhere in the text (bare, fenced, or after `TOOL:`) are
/// tried first; failing that, the specification is recovered from code
/// fences or a bare Alloy listing.
pub fn parse_tool_call(raw_response: &str) -> ParseOutcome {
    if let Some(call) = find_json_tool_call(raw_response) {
        return ParseOutcome::Parsed { call, via: ParseVia::StrictJson };
    }
    if let Some(specification) = extract_spec_fallback(raw_response) {
        return ParseOutcome::Parsed { call: ToolCall::new(specification), via: ParseVia::Fallback };
    }
    ParseOutcome::Failure { raw_excerpt: raw_response.chars().take(FAILURE_EXCERPT_CHARS).collect() }
}

fn find_json_tool_call(raw: &str) -> Option<ToolCall> {
    let starts: Vec<usize> = raw.match_indices('{').map(|(i, _)| i).collect();
    starts.iter().find_map(|&i| first_json_value(&raw[i..]).and_then(|v| tool_call_from_value(&v))).or_else(|| {
        // Models often emit raw newlines inside JSON strings.
        starts.iter().find_map(|&i| {
            let repaired = escape_raw_control_chars(&raw[i..]);
            first_json_value(&repaired).and_then(|v| tool_call_from_value(&v))
        })
    })
}

fn first_json_value(text: &str) -> Option<Value> {
    serde_json::Deserializer::from_str(text).into_iter::<Value>().next()?.ok()
}

fn tool_call_from_value(value: &Value) -> Option<ToolCall> {
    let obj: &Map<String, Value> = value.as_object()?;
    let request = obj.get("request")?.as_str()?;
    if request != TOOL_NAME {
        return None;
    }
    let spec = obj.get("specification").or_else(|| obj.get(SPEC_FIELD_ALIAS))?.as_str()?;
    if spec.trim().is_empty() {
        return None;
    }
    Some(ToolCall { request: request.to_string(), specification: spec.to_string() })
}

// Escapes literal newlines, carriage returns and tabs that sit inside JSON
// string literals, leaving everything else untouched.
fn escape_raw_control_chars(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 16);
    let mut in_string = false;
    let mut escaped = false;
    for c in text.chars() {
        if in_string {
            if escaped {
                escaped = false;
                out.push(c);
                continue;
            }
            match c {
                '\\' => {
                    escaped = true;
                    out.push(c);
                }
                '"' => {
                    in_string = false;
                    out.push(c);
                }
                '\n' => out.push_str("\\n"),
                '\r' => out.push_str("\\r"),
                '\t' => out.push_str("\\t"),
                _ => out.push(c),
            }
        } else {
            if c == '"' {
                in_string = true;
            }
            out.push(c);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn strict_json() {
        let out = parse_tool_call(r#"{"request":"run_alloy_analyzer","specification":"sig A {}"}"#);
        assert_eq!(out, ParseOutcome::Parsed { call: ToolCall::new("sig A {}"), via: ParseVia::StrictJson });
    }

    #[test]
    fn tool_prefix_and_fence() {
        let raw = "TOOL: ```json\n{\"request\": \"run_alloy_analyzer\", \"specification\": \"sig B {}\\nrun {}\"}\n```";
        let out = parse_tool_call(raw);
        assert_eq!(out.via(), Some(ParseVia::StrictJson));
        assert_eq!(out.call().unwrap().specification, "sig B {}\nrun {}");
    }

    #[test]
    fn alias_field() {
        let out = parse_tool_call(r#"{"request": "run_alloy_analyzer", "proposed_specification": "sig C {}"}"#);
        assert_eq!(out.call(), Some(&ToolCall::new("sig C {}")));
        assert_eq!(out.via(), Some(ParseVia::StrictJson));
    }

    #[test]
    fn raw_newlines_inside_strings() {
        let raw = "{\"request\": \"run_alloy_analyzer\", \"specification\": \"sig A {}\n\tfact { some A }\"}";
        let out = parse_tool_call(raw);
        assert_eq!(out.via(), Some(ParseVia::StrictJson));
        assert_eq!(out.call().unwrap().specification, "sig A {}\n\tfact { some A }");
    }

    #[test]
    fn wrong_tool_name_is_not_strict() {
        let out = parse_tool_call(r#"{"request":"other_tool","specification":"sig A {}"}"#);
        assert_ne!(out.via(), Some(ParseVia::StrictJson));
    }

    #[test]
    fn fenced_fallback() {
        let raw = "Here is my fix:\n```alloy\nsig A {}\npred p {}\n```\nThanks.";
        assert_eq!(
            parse_tool_call(raw),
            ParseOutcome::Parsed { call: ToolCall::new("sig A {}\npred p {}"), via: ParseVia::Fallback }
        );
    }

    #[test]
    fn refusal_is_failure_with_excerpt() {
        assert_eq!(
            parse_tool_call("I cannot help with that."),
            ParseOutcome::Failure { raw_excerpt: "I cannot help with that.".into() }
        );
        let long = "é".repeat(500);
        match parse_tool_call(&long) {
            ParseOutcome::Failure { raw_excerpt } => assert_eq!(raw_excerpt.chars().count(), 200),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn json_round_trip(spec in "[ -~\n\t]{1,200}".prop_filter("nonblank", |s| !s.trim().is_empty())) {
            let call = ToolCall::new(spec);
            let out = parse_tool_call(&call.to_json());
            prop_assert_eq!(out, ParseOutcome::Parsed { call, via: ParseVia::StrictJson });
        }

        #[test]
        fn strict_implies_tool_name_present(raw in "\\PC{0,300}") {
            if parse_tool_call(&raw).via() == Some(ParseVia::StrictJson) {
                prop_assert!(raw.contains(TOOL_NAME));
            }
        }
    }
}
