//! Typed test values and their canonical renderings.
//!
//! Four value kinds are supported: `int`, `boolean`, `String` and `int[]`.
//! Every value has a single canonical text form, which is what the Java
//! driver prints and what expected outputs are compared against.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

/// The kind of a parameter or return value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ValueKind {
    #[serde(rename = "int")]
    Int,
    #[serde(rename = "boolean")]
    Boolean,
    #[serde(rename = "string")]
    Str,
    #[serde(rename = "int[]")]
    IntArray,
}

impl ValueKind {
    pub const ALL: [ValueKind; 4] = [ValueKind::Int, ValueKind::Boolean, ValueKind::Str, ValueKind::IntArray];

    /// Name used in corpus metadata and prompts.
    pub fn name(self) -> &'static str {
        match self {
            ValueKind::Int => "int",
            ValueKind::Boolean => "boolean",
            ValueKind::Str => "string",
            ValueKind::IntArray => "int[]",
        }
    }

    /// Java type spelling.
    pub fn java_type(self) -> &'static str {
        match self {
            ValueKind::Int => "int",
            ValueKind::Boolean => "boolean",
            ValueKind::Str => "String",
            ValueKind::IntArray => "int[]",
        }
    }
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unsupported value kind `{0}` (expected int, boolean, string or int[])")]
pub struct UnknownKind(pub String);

impl FromStr for ValueKind {
    type Err = UnknownKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "int" | "integer" => Ok(ValueKind::Int),
            "boolean" | "bool" => Ok(ValueKind::Boolean),
            "string" | "String" | "str" => Ok(ValueKind::Str),
            "int[]" | "int-array" | "int_array" | "intarray" => Ok(ValueKind::IntArray),
            other => Err(UnknownKind(other.to_string())),
        }
    }
}

/// A concrete value of one of the supported kinds.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TypedValue {
    Int(i32),
    Boolean(bool),
    Str(String),
    IntArray(Vec<i32>),
}

/// Why a JSON or text value could not be read as a given kind.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("expected {expected}, found {found}")]
pub struct KindMismatch {
    pub expected: ValueKind,
    pub found: String,
}

impl TypedValue {
    pub fn kind(&self) -> ValueKind {
        match self {
            TypedValue::Int(_) => ValueKind::Int,
            TypedValue::Boolean(_) => ValueKind::Boolean,
            TypedValue::Str(_) => ValueKind::Str,
            TypedValue::IntArray(_) => ValueKind::IntArray,
        }
    }

    /// Canonical text: what the driver prints for this value.
    ///
    /// Arrays render as `[a, b, c]`, booleans lowercase, strings raw.
    pub fn canonical(&self) -> String {
        match self {
            TypedValue::Int(v) => v.to_string(),
            TypedValue::Boolean(b) => b.to_string(),
            TypedValue::Str(s) => s.clone(),
            TypedValue::IntArray(items) => render_int_list(items),
        }
    }

    /// Unambiguous rendering for display in tables and dedup keys.
    /// Strings are quoted, arrays use the Java initializer form.
    pub fn display(&self) -> String {
        match self {
            TypedValue::Str(s) => serde_json::to_string(s).expect("string serializes"),
            TypedValue::IntArray(items) => {
                let body: Vec<String> = items.iter().map(i32::to_string).collect();
                format!("int[]{{{}}}", body.join(", "))
            }
            other => other.canonical(),
        }
    }

    /// Java source literal for this value.
    pub fn java_literal(&self) -> String {
        match self {
            TypedValue::Int(v) => java_int_literal(*v),
            TypedValue::Boolean(b) => b.to_string(),
            TypedValue::Str(s) => java_string_literal(s),
            TypedValue::IntArray(items) => {
                let body: Vec<String> = items.iter().map(|v| java_int_literal(*v)).collect();
                format!("new int[]{{{}}}", body.join(", "))
            }
        }
    }

    pub fn to_json(&self) -> Json {
        match self {
            TypedValue::Int(v) => Json::from(*v),
            TypedValue::Boolean(b) => Json::from(*b),
            TypedValue::Str(s) => Json::from(s.as_str()),
            TypedValue::IntArray(items) => Json::from(items.clone()),
        }
    }

    /// Reads a JSON value as the given kind.
    ///
    /// Int arrays are also accepted in the textual forms `int[]{1, 2}` and
    /// `[1, 2]` when the model emits them as strings.
    pub fn from_json(kind: ValueKind, value: &Json) -> Result<TypedValue, KindMismatch> {
        let mismatch = || KindMismatch {
            expected: kind,
            found: describe_json(value),
        };
        match kind {
            ValueKind::Int => value
                .as_i64()
                .and_then(|v| i32::try_from(v).ok())
                .map(TypedValue::Int)
                .ok_or_else(mismatch),
            ValueKind::Boolean => value.as_bool().map(TypedValue::Boolean).ok_or_else(mismatch),
            ValueKind::Str => value
                .as_str()
                .map(|s| TypedValue::Str(s.to_string()))
                .ok_or_else(mismatch),
            ValueKind::IntArray => match value {
                Json::Array(items) => items
                    .iter()
                    .map(|item| item.as_i64().and_then(|v| i32::try_from(v).ok()))
                    .collect::<Option<Vec<i32>>>()
                    .map(TypedValue::IntArray)
                    .ok_or_else(mismatch),
                Json::String(text) => parse_int_list(text).map(TypedValue::IntArray).ok_or_else(mismatch),
                _ => Err(mismatch()),
            },
        }
    }

    /// Parses canonical driver output back into a value of `kind`.
    pub fn from_canonical(kind: ValueKind, text: &str) -> Result<TypedValue, KindMismatch> {
        let mismatch = || KindMismatch {
            expected: kind,
            found: format!("output {text:?}"),
        };
        match kind {
            ValueKind::Int => text.trim().parse().map(TypedValue::Int).map_err(|_| mismatch()),
            ValueKind::Boolean => match text.trim() {
                "true" => Ok(TypedValue::Boolean(true)),
                "false" => Ok(TypedValue::Boolean(false)),
                _ => Err(mismatch()),
            },
            ValueKind::Str => Ok(TypedValue::Str(text.to_string())),
            ValueKind::IntArray => parse_int_list(text).map(TypedValue::IntArray).ok_or_else(mismatch),
        }
    }
}

impl fmt::Display for TypedValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display())
    }
}

fn render_int_list(items: &[i32]) -> String {
    let body: Vec<String> = items.iter().map(i32::to_string).collect();
    format!("[{}]", body.join(", "))
}

/// Accepts `[1, 2]`, `{1,2}`, `int[]{1, 2}` and `new int[]{1, 2}`.
fn parse_int_list(text: &str) -> Option<Vec<i32>> {
    let mut t = text.trim();
    t = t.strip_prefix("new").map(str::trim_start).unwrap_or(t);
    t = t.strip_prefix("int[]").map(str::trim_start).unwrap_or(t);
    let inner = t
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .or_else(|| t.strip_prefix('{').and_then(|r| r.strip_suffix('}')))?;
    if inner.trim().is_empty() {
        return Some(Vec::new());
    }
    inner.split(',').map(|part| part.trim().parse().ok()).collect()
}

fn describe_json(value: &Json) -> String {
    match value {
        Json::Null => "null".into(),
        Json::Bool(b) => format!("boolean {b}"),
        Json::Number(n) => format!("number {n}"),
        Json::String(s) => format!("string {s:?}"),
        Json::Array(_) => "array".into(),
        Json::Object(_) => "object".into(),
    }
}

fn java_int_literal(v: i32) -> String {
    if v == i32::MIN {
        "Integer.MIN_VALUE".to_string()
    } else if v < 0 {
        format!("({v})")
    } else {
        v.to_string()
    }
}

/// Escapes `s` as an ASCII-only Java string literal.
///
/// Line terminators, quotes and backslashes use their short escapes; Unicode
/// escapes are never emitted for those four because the Java compiler
/// translates `\uXXXX` before lexing.
pub fn java_string_literal(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            ' '..='~' => out.push(ch),
            other => {
                let mut units = [0u16; 2];
                for unit in other.encode_utf16(&mut units) {
                    out.push_str(&format!("\\u{unit:04x}"));
                }
            }
        }
    }
    out.push('"');
    out
}
