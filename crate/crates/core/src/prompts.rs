//! Prompt construction and structured-response parsing.
//!
//! Prompt wording lives in the text templates under `templates/`, which
//! are compiled in as defaults and can be overridden from a directory at
//! runtime. Templates use `{{name}}` placeholders; a leading `# ...` line
//! carries the template version and is not sent to the model.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use crate::dataset::{MethodSignature, Problem};
use crate::harness::{ExecutionResult, Outcome};
use crate::llm::Message;
use crate::selection::CodePair;
use crate::value::{TypedValue, ValueKind};

const SYSTEM_TEMPLATE: &str = include_str!("../templates/system.txt");
const GENERATE_TEMPLATE: &str = include_str!("../templates/generate.txt");
const FEEDBACK_TEMPLATE: &str = include_str!("../templates/feedback.txt");

/// Where a test came from: which code pair (1-based) and which refinement
/// round (0 = initial generation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Origin {
    pub pair_index: u32,
    pub iteration: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestCase {
    pub case_id: String,
    pub inputs: Vec<TypedValue>,
    pub expected: TypedValue,
    pub rationale: String,
    pub origin: Origin,
}

impl TestCase {
    /// Canonical rendering of the inputs; equal inputs give equal keys.
    pub fn input_key(&self) -> String {
        render_inputs(&self.inputs)
    }

    /// Record in the structured response schema.
    pub fn to_record(&self) -> Json {
        json!({
            "id": self.case_id,
            "inputs": self.inputs.iter().map(TypedValue::to_json).collect::<Vec<_>>(),
            "expected": self.expected.to_json(),
            "explanation": self.rationale,
        })
    }

    pub fn conforms_to(&self, signature: &MethodSignature) -> bool {
        self.inputs.len() == signature.param_types.len()
            && self
                .inputs
                .iter()
                .zip(&signature.param_types)
                .all(|(v, k)| v.kind() == *k)
            && self.expected.kind() == signature.return_type
    }
}

pub fn render_inputs(inputs: &[TypedValue]) -> String {
    inputs.iter().map(TypedValue::display).collect::<Vec<_>>().join(", ")
}

/// Point-wise execution results of one suite against a code pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackTable {
    pub rows: Vec<FeedbackRow>,
    pub return_kind: ValueKind,
    pub target_pass_count: u32,
    pub observed_pass_count: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackRow {
    pub case_id: String,
    pub inputs: String,
    pub expected: String,
    pub buggy_outcome: ExecutionResult,
    pub correct_outcome: ExecutionResult,
}

impl FeedbackTable {
    /// `buggy` and `correct` must hold one result per test, in order.
    pub fn build(
        tests: &[TestCase],
        buggy: &[ExecutionResult],
        correct: &[ExecutionResult],
        return_kind: ValueKind,
        target_pass_count: u32,
    ) -> FeedbackTable {
        assert_eq!(tests.len(), buggy.len(), "one buggy result per test");
        assert_eq!(tests.len(), correct.len(), "one correct result per test");
        let rows: Vec<FeedbackRow> = tests
            .iter()
            .zip(buggy.iter().zip(correct))
            .map(|(t, (b, c))| FeedbackRow {
                case_id: t.case_id.clone(),
                inputs: render_inputs(&t.inputs),
                expected: t.expected.display(),
                buggy_outcome: b.clone(),
                correct_outcome: c.clone(),
            })
            .collect();
        let observed = rows.iter().filter(|r| r.buggy_outcome.passed()).count() as u32;
        FeedbackTable {
            rows,
            return_kind,
            target_pass_count,
            observed_pass_count: observed,
        }
    }

    /// Text table with a fixed column order.
    pub fn render(&self) -> String {
        let header = ["case id", "inputs", "expected", "buggy output", "correct output"];
        let mut out = format!("| {} |\n", header.join(" | "));
        out.push_str(&format!("|{}\n", "---|".repeat(header.len())));
        for row in &self.rows {
            let cells = [
                row.case_id.clone(),
                row.inputs.clone(),
                row.expected.clone(),
                self.render_outcome(&row.buggy_outcome, &row.expected),
                self.render_outcome(&row.correct_outcome, &row.expected),
            ];
            let cells: Vec<String> = cells.iter().map(|c| table_cell(c)).collect();
            out.push_str(&format!("| {} |\n", cells.join(" | ")));
        }
        out
    }

    fn render_outcome(&self, result: &ExecutionResult, expected: &str) -> String {
        match &result.outcome {
            Outcome::Pass => format!("{expected} (pass)"),
            Outcome::Fail { actual } => {
                let shown = match self.return_kind {
                    ValueKind::Str => TypedValue::Str(actual.clone()).display(),
                    _ => actual.clone(),
                };
                format!("{shown} (fail)")
            }
            Outcome::CompileError { .. } => "compile error".into(),
            Outcome::RuntimeError { message } => {
                format!("runtime error: {}", message.lines().next().unwrap_or(""))
            }
            Outcome::Timeout { cap } => format!("timeout after {} ms", cap.as_millis()),
        }
    }

    fn status(&self) -> String {
        let total = self.rows.len();
        let target = self.target_pass_count;
        let observed = self.observed_pass_count;
        let mut lines = vec![format!(
            "The buggy code passes {observed} of {total} test cases; the target is exactly {target}."
        )];
        match observed.cmp(&target) {
            std::cmp::Ordering::Greater => lines.push(format!(
                "{} test case(s) that the buggy code passes must be revised so that the buggy code fails them.",
                observed - target
            )),
            std::cmp::Ordering::Less => lines.push(format!(
                "{} test case(s) that the buggy code fails must be revised so that the buggy code passes them.",
                target - observed
            )),
            std::cmp::Ordering::Equal => {}
        }
        let correct_failures: Vec<&str> = self
            .rows
            .iter()
            .filter(|r| !r.correct_outcome.passed())
            .map(|r| r.case_id.as_str())
            .collect();
        if !correct_failures.is_empty() {
            lines.push(format!(
                "The correct code fails {} test case(s) ({}); their expected outputs must match the correct code's output.",
                correct_failures.len(),
                correct_failures.join(", ")
            ));
        }
        if observed == target && correct_failures.is_empty() {
            lines.push("All constraints are satisfied; revisions are optional.".into());
        }
        lines.join("\n")
    }

    fn error_details(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            for (who, result) in [("buggy", &row.buggy_outcome), ("correct", &row.correct_outcome)] {
                let detail = match &result.outcome {
                    Outcome::RuntimeError { message } => message.clone(),
                    Outcome::Timeout { cap } => {
                        format!("did not finish within {} ms (possible infinite loop)", cap.as_millis())
                    }
                    _ => continue,
                };
                if out.is_empty() {
                    out.push_str("\nRuntime errors:\n");
                }
                let _ = writeln!(out, "- case {} ({who} code): {detail}", row.case_id);
            }
        }
        out
    }
}

fn table_cell(text: &str) -> String {
    text.replace('|', "\\|").replace(['\n', '\r'], " ")
}

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("cannot read template {name}: {source}")]
    Io {
        name: String,
        #[source]
        source: std::io::Error,
    },
    #[error("template {name} uses unknown placeholder `{placeholder}`")]
    UnknownPlaceholder { name: String, placeholder: String },
    #[error("template {name} has an unterminated placeholder")]
    Unterminated { name: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Template {
    name: String,
    version: String,
    body: String,
}

impl Template {
    fn parse(name: &str, text: &str, allowed: &[&str]) -> Result<Template, TemplateError> {
        let (version, body) = match text.split_once('\n') {
            Some((first, rest)) if first.starts_with('#') => (first.trim_start_matches('#').trim().to_string(), rest),
            _ => (String::new(), text),
        };
        let body = body.trim_end().to_string();
        let mut rest = body.as_str();
        while let Some(start) = rest.find("{{") {
            let after = &rest[start + 2..];
            let end = after
                .find("}}")
                .ok_or_else(|| TemplateError::Unterminated { name: name.into() })?;
            let key = &after[..end];
            if !allowed.contains(&key) {
                return Err(TemplateError::UnknownPlaceholder {
                    name: name.into(),
                    placeholder: key.into(),
                });
            }
            rest = &after[end + 2..];
        }
        Ok(Template {
            name: name.into(),
            version,
            body,
        })
    }

    fn render(&self, values: &BTreeMap<&str, String>) -> String {
        let mut out = String::with_capacity(self.body.len());
        let mut rest = self.body.as_str();
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let end = after.find("}}").expect("validated at load");
            let key = &after[..end];
            out.push_str(values.get(key).map(String::as_str).unwrap_or_default());
            rest = &after[end + 2..];
        }
        out.push_str(rest);
        out
    }
}

const GENERATE_KEYS: &[&str] = &[
    "statement",
    "signature",
    "method_name",
    "buggy_source",
    "correct_source",
    "suite_size",
    "target_pass_count",
    "fail_count",
    "boundary_note",
    "schema",
];
const FEEDBACK_KEYS: &[&str] = &["table", "status", "errors", "suite_size"];

/// Whether a feedback turn continues the whole conversation or restarts
/// from the generation prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackContext {
    #[default]
    Full,
    Fresh,
}

/// Loaded prompt templates. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBuilder {
    system: Template,
    generate: Template,
    feedback: Template,
}

impl Default for PromptBuilder {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptBuilder {
    pub fn builtin() -> Self {
        Self::from_texts(SYSTEM_TEMPLATE, GENERATE_TEMPLATE, FEEDBACK_TEMPLATE).expect("bundled templates are valid")
    }

    /// Loads `system.txt`, `generate.txt` and `feedback.txt` from `dir`;
    /// missing files fall back to the bundled text.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let read = |name: &str, fallback: &str| -> Result<String, TemplateError> {
            let path = dir.join(name);
            if path.exists() {
                fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                    name: name.into(),
                    source,
                })
            } else {
                Ok(fallback.to_string())
            }
        };
        Self::from_texts(
            &read("system.txt", SYSTEM_TEMPLATE)?,
            &read("generate.txt", GENERATE_TEMPLATE)?,
            &read("feedback.txt", FEEDBACK_TEMPLATE)?,
        )
    }

    fn from_texts(system: &str, generate: &str, feedback: &str) -> Result<Self, TemplateError> {
        Ok(PromptBuilder {
            system: Template::parse("system.txt", system, &[])?,
            generate: Template::parse("generate.txt", generate, GENERATE_KEYS)?,
            feedback: Template::parse("feedback.txt", feedback, FEEDBACK_KEYS)?,
        })
    }

    /// Version tags of the three templates, for run manifests.
    pub fn versions(&self) -> Vec<String> {
        [&self.system, &self.generate, &self.feedback]
            .iter()
            .map(|t| format!("{}={}", t.name, t.version))
            .collect()
    }

    /// System + user messages asking for `pair.suite_size` tests.
    pub fn generation_prompt(&self, problem: &Problem, pair: &CodePair) -> Vec<Message> {
        let q = pair.suite_size;
        let p = pair.target_pass_count.min(q);
        let boundary_note = if p == q {
            format!("- Every one of the {q} test cases must also pass on the buggy code.")
        } else if p == 0 {
            format!("- All {q} test cases must fail on the buggy code.")
        } else {
            String::new()
        };
        let mut values = BTreeMap::new();
        values.insert("statement", problem.statement.trim().to_string());
        values.insert("signature", problem.signature.java_header());
        values.insert("method_name", problem.signature.method_name.clone());
        values.insert("buggy_source", pair.buggy.source.trim_end().to_string());
        values.insert("correct_source", pair.correct.source.trim_end().to_string());
        values.insert("suite_size", q.to_string());
        values.insert("target_pass_count", p.to_string());
        values.insert("fail_count", (q - p).to_string());
        values.insert("boundary_note", boundary_note);
        values.insert("schema", response_schema(&problem.signature));
        let user = collapse_blank_runs(&self.generate.render(&values));
        vec![
            Message::system(self.system.render(&BTreeMap::new())),
            Message::user(user),
        ]
    }

    /// The user message carrying execution feedback.
    pub fn feedback_message(&self, table: &FeedbackTable, pair: &CodePair) -> Message {
        let mut values = BTreeMap::new();
        values.insert("table", table.render().trim_end().to_string());
        values.insert("status", table.status());
        values.insert("errors", table.error_details());
        values.insert("suite_size", pair.suite_size.to_string());
        Message::user(collapse_blank_runs(&self.feedback.render(&values)))
    }

    /// Conversation for a feedback round.
    ///
    /// `history` is the conversation so far and `reply` the model's last
    /// answer. In [`FeedbackContext::Fresh`] mode only the generation
    /// prompt (the first two messages of `history`) is kept.
    pub fn feedback_prompt(
        &self,
        history: &[Message],
        reply: &str,
        table: &FeedbackTable,
        pair: &CodePair,
        context: FeedbackContext,
    ) -> Vec<Message> {
        let mut messages: Vec<Message> = match context {
            FeedbackContext::Full => {
                let mut m = history.to_vec();
                m.push(Message::assistant(reply));
                m
            }
            FeedbackContext::Fresh => history.iter().take(2).cloned().collect(),
        };
        messages.push(self.feedback_message(table, pair));
        messages
    }
}

/// Replaces three or more consecutive newlines with two, so empty
/// optional placeholders leave no gaps.
fn collapse_blank_runs(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut newlines = 0;
    for ch in text.chars() {
        if ch == '\n' {
            newlines += 1;
            if newlines > 2 {
                continue;
            }
        } else {
            newlines = 0;
        }
        out.push(ch);
    }
    out
}

fn json_hint(kind: ValueKind) -> &'static str {
    match kind {
        ValueKind::Int => "<integer>",
        ValueKind::Boolean => "<true or false>",
        ValueKind::Str => "<JSON string>",
        ValueKind::IntArray => "<JSON array of integers>",
    }
}

/// Human-readable description of the response schema for `signature`.
pub fn response_schema(signature: &MethodSignature) -> String {
    let inputs: Vec<String> = signature
        .param_types
        .iter()
        .enumerate()
        .map(|(i, k)| format!("{} (argument {}: {})", json_hint(*k), i + 1, k.java_type()))
        .collect();
    format!(
        "{{\"inputs\": [{}], \"expected\": {}, \"explanation\": \"<the bug this test case targets>\"}}",
        inputs.join(", "),
        json_hint(signature.return_type)
    )
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("no structured test-case block found in the response")]
    NoStructuredBlock,
    #[error("test case {case}: {reason}")]
    MalformedRecord { case: String, reason: String },
    #[error("test case {case}: expected {expected} input(s), found {found}")]
    Arity {
        case: String,
        expected: usize,
        found: usize,
    },
    #[error("test case {case}, {position}: {detail}")]
    KindMismatch {
        case: String,
        position: String,
        detail: String,
    },
    #[error("duplicate test case id `{0}`")]
    DuplicateCaseId(String),
}

/// Test cases parsed from one model response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedSuite {
    pub tests: Vec<TestCase>,
    pub requested: usize,
}

impl ParsedSuite {
    pub fn count_mismatch(&self) -> bool {
        self.tests.len() != self.requested
    }
}

/// Extracts and validates the test cases in a model response.
pub fn parse_test_cases(
    response: &str,
    signature: &MethodSignature,
    expected_count: usize,
    origin: Origin,
) -> Result<ParsedSuite, ParseError> {
    let records = locate_block(response).ok_or(ParseError::NoStructuredBlock)?;
    let tests = parse_records(&records, signature, origin)?;
    if tests.len() != expected_count {
        log::info!(
            "response holds {} test case(s), {} requested",
            tests.len(),
            expected_count
        );
    }
    Ok(ParsedSuite {
        tests,
        requested: expected_count,
    })
}

/// Validates already-extracted records against `signature`.
pub fn parse_records(
    records: &[Json],
    signature: &MethodSignature,
    origin: Origin,
) -> Result<Vec<TestCase>, ParseError> {
    let mut ids = HashSet::new();
    let mut tests = Vec::with_capacity(records.len());
    for (idx, record) in records.iter().enumerate() {
        let case_id = match record.get("id") {
            Some(Json::String(s)) if !s.trim().is_empty() => s.trim().to_string(),
            Some(Json::Number(n)) => format!("t{n}"),
            _ => format!("t{}", idx + 1),
        };
        if !ids.insert(case_id.clone()) {
            return Err(ParseError::DuplicateCaseId(case_id));
        }
        let obj = record.as_object().ok_or_else(|| ParseError::MalformedRecord {
            case: case_id.clone(),
            reason: "not a JSON object".into(),
        })?;
        let raw_inputs = obj
            .get("inputs")
            .or_else(|| obj.get("input"))
            .ok_or_else(|| ParseError::MalformedRecord {
                case: case_id.clone(),
                reason: "missing `inputs`".into(),
            })?;
        let arity = signature.param_types.len();
        let args: Vec<Json> = match raw_inputs {
            Json::Array(items)
                if items.len() == arity
                    && !(arity == 1
                        && signature.param_types[0] == ValueKind::IntArray
                        && items.iter().all(Json::is_number)
                        && !items.is_empty()) =>
            {
                items.clone()
            }
            // A lone argument given without the wrapping list.
            other if arity == 1 => vec![other.clone()],
            Json::Array(items) => {
                return Err(ParseError::Arity {
                    case: case_id,
                    expected: arity,
                    found: items.len(),
                })
            }
            _ => {
                return Err(ParseError::MalformedRecord {
                    case: case_id,
                    reason: "`inputs` must be a list of arguments".into(),
                })
            }
        };
        let mut inputs = Vec::with_capacity(arity);
        for (pos, (arg, kind)) in args.iter().zip(&signature.param_types).enumerate() {
            let value = TypedValue::from_json(*kind, arg).map_err(|e| ParseError::KindMismatch {
                case: case_id.clone(),
                position: format!("input {}", pos + 1),
                detail: e.to_string(),
            })?;
            inputs.push(value);
        }
        let raw_expected = obj
            .get("expected")
            .or_else(|| obj.get("expected_output"))
            .or_else(|| obj.get("output"))
            .ok_or_else(|| ParseError::MalformedRecord {
                case: case_id.clone(),
                reason: "missing `expected`".into(),
            })?;
        let expected =
            TypedValue::from_json(signature.return_type, raw_expected).map_err(|e| ParseError::KindMismatch {
                case: case_id.clone(),
                position: "expected output".into(),
                detail: e.to_string(),
            })?;
        let rationale = ["explanation", "rationale", "reason"]
            .iter()
            .find_map(|k| obj.get(*k).and_then(Json::as_str))
            .unwrap_or("")
            .to_string();
        tests.push(TestCase {
            case_id,
            inputs,
            expected,
            rationale,
            origin,
        });
    }
    Ok(tests)
}

/// Finds the list of test-case records in free text.
///
/// Fenced code blocks are tried first, then any embedded JSON array or
/// object; the first candidate that holds a list of objects wins.
fn locate_block(text: &str) -> Option<Vec<Json>> {
    for block in fenced_blocks(text) {
        if let Some(records) = scan_json(block) {
            return Some(records);
        }
    }
    scan_json(text)
}

fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
        let body = &after[body_start..];
        match body.find("```") {
            Some(end) => {
                blocks.push(&body[..end]);
                rest = &body[end + 3..];
            }
            None => break,
        }
    }
    blocks
}

fn scan_json(text: &str) -> Option<Vec<Json>> {
    for (idx, ch) in text.char_indices() {
        if ch != '[' && ch != '{' {
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&text[idx..]).into_iter::<Json>();
        if let Some(Ok(value)) = stream.next() {
            if let Some(records) = records_of(value) {
                return Some(records);
            }
        }
    }
    None
}

fn records_of(value: Json) -> Option<Vec<Json>> {
    match value {
        Json::Array(items) if !items.is_empty() && items.iter().all(Json::is_object) => Some(items),
        Json::Object(mut obj) => ["test_cases", "tests", "testcases", "cases"]
            .iter()
            .find_map(|k| obj.remove(*k))
            .and_then(records_of),
        _ => None,
    }
}
