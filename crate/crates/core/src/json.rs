//! Strict JSON object readers for configuration parsing.
//!
//! All configuration surfaces share the same rules: unknown keys are rejected
//! (with a nearest-name suggestion), every violation names the offending
//! field, and serialization emits sorted keys so output is deterministic.

use serde_json::{Map, Value};
use std::fmt;

/// A configuration parse/validation failure.
#[derive(Debug, Clone, PartialEq)]
pub enum JsonError {
    /// Malformed JSON, with the parser's location.
    Malformed { message: String, line: usize, column: usize },
    /// The document (or a field) is not the expected JSON type.
    WrongType { field: String, expected: &'static str },
    /// A key not in the schema, with a suggestion when one is close.
    UnknownKey { key: String, suggestion: Option<String> },
    /// A required key is absent.
    MissingKey { key: String },
    /// A value violates a constraint; the message names field and constraint.
    Invalid { field: String, message: String },
}

impl fmt::Display for JsonError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JsonError::Malformed { message, line, column } => {
                write!(f, "malformed JSON at line {line}, column {column}: {message}")
            }
            JsonError::WrongType { field, expected } => {
                write!(f, "field \"{field}\": expected {expected}")
            }
            JsonError::UnknownKey { key, suggestion } => match suggestion {
                Some(s) => write!(f, "unknown key \"{key}\" (did you mean \"{s}\"?)"),
                None => write!(f, "unknown key \"{key}\""),
            },
            JsonError::MissingKey { key } => write!(f, "missing required key \"{key}\""),
            JsonError::Invalid { field, message } => write!(f, "field \"{field}\": {message}"),
        }
    }
}

impl std::error::Error for JsonError {}

/// Parse a JSON document, mapping syntax errors to located [`JsonError`]s.
pub fn parse_document(text: &str) -> Result<Value, JsonError> {
    serde_json::from_str(text).map_err(|e| JsonError::Malformed {
        message: e.to_string(),
        line: e.line(),
        column: e.column(),
    })
}

/// Levenshtein edit distance; small inputs only.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, cb) in b.iter().enumerate() {
            let cost = if ca == cb { 0 } else { 1 };
            cur[j + 1] = (prev[j] + cost).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

/// The closest known key, when it is close enough to be a plausible typo.
pub fn suggest<'a>(key: &str, known: &[&'a str]) -> Option<&'a str> {
    known
        .iter()
        .map(|k| (edit_distance(key, k), *k))
        .min()
        .filter(|(d, _)| *d <= 3)
        .map(|(_, k)| k)
}

/// A strict reader over one JSON object: every key must be in `known`, and
/// typed getters produce field-named errors.
pub struct ObjectReader<'a> {
    object: &'a Map<String, Value>,
    context: String,
}

impl fmt::Debug for ObjectReader<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ObjectReader({:?})", self.context)
    }
}

impl<'a> ObjectReader<'a> {
    /// Wrap `value`, which must be a JSON object whose keys all appear in
    /// `known`. `context` prefixes field names in errors ("" for top level).
    pub fn new(
        value: &'a Value,
        context: &str,
        known: &[&str],
    ) -> Result<ObjectReader<'a>, JsonError> {
        let object = value.as_object().ok_or_else(|| JsonError::WrongType {
            field: if context.is_empty() { "<document>".into() } else { context.into() },
            expected: "a JSON object",
        })?;
        for key in object.keys() {
            if !known.contains(&key.as_str()) {
                return Err(JsonError::UnknownKey {
                    key: qualify(context, key),
                    suggestion: suggest(key, known).map(str::to_owned),
                });
            }
        }
        Ok(ObjectReader { object, context: context.to_string() })
    }

    fn field(&self, key: &str) -> String {
        qualify(&self.context, key)
    }

    pub fn has(&self, key: &str) -> bool {
        self.object.contains_key(key)
    }

    pub fn get(&self, key: &str) -> Option<&'a Value> {
        self.object.get(key)
    }

    pub fn require(&self, key: &str) -> Result<&'a Value, JsonError> {
        self.object.get(key).ok_or_else(|| JsonError::MissingKey { key: self.field(key) })
    }

    pub fn string(&self, key: &str, default: &str) -> Result<String, JsonError> {
        match self.object.get(key) {
            None => Ok(default.to_string()),
            Some(v) => self.as_string(key, v),
        }
    }

    pub fn required_string(&self, key: &str) -> Result<String, JsonError> {
        let v = self.require(key)?;
        self.as_string(key, v)
    }

    fn as_string(&self, key: &str, v: &Value) -> Result<String, JsonError> {
        v.as_str()
            .map(str::to_owned)
            .ok_or_else(|| JsonError::WrongType { field: self.field(key), expected: "a string" })
    }

    pub fn f64_field(&self, key: &str, default: f64) -> Result<f64, JsonError> {
        match self.object.get(key) {
            None => Ok(default),
            Some(v) => self.as_f64(key, v),
        }
    }

    pub fn as_f64(&self, key: &str, v: &Value) -> Result<f64, JsonError> {
        v.as_f64()
            .ok_or_else(|| JsonError::WrongType { field: self.field(key), expected: "a number" })
    }

    pub fn usize_field(&self, key: &str, default: usize) -> Result<usize, JsonError> {
        match self.object.get(key) {
            None => Ok(default),
            Some(v) => self.as_usize(key, v),
        }
    }

    pub fn required_usize(&self, key: &str) -> Result<usize, JsonError> {
        let v = self.require(key)?;
        self.as_usize(key, v)
    }

    pub fn as_usize(&self, key: &str, v: &Value) -> Result<usize, JsonError> {
        v.as_u64().map(|u| u as usize).ok_or_else(|| JsonError::WrongType {
            field: self.field(key),
            expected: "a non-negative integer",
        })
    }

    pub fn u64_field(&self, key: &str, default: u64) -> Result<u64, JsonError> {
        match self.object.get(key) {
            None => Ok(default),
            Some(v) => v.as_u64().ok_or_else(|| JsonError::WrongType {
                field: self.field(key),
                expected: "a non-negative integer",
            }),
        }
    }

    pub fn bool_field(&self, key: &str, default: bool) -> Result<bool, JsonError> {
        match self.object.get(key) {
            None => Ok(default),
            Some(v) => v.as_bool().ok_or_else(|| JsonError::WrongType {
                field: self.field(key),
                expected: "a boolean",
            }),
        }
    }

    pub fn invalid(&self, key: &str, message: impl Into<String>) -> JsonError {
        JsonError::Invalid { field: self.field(key), message: message.into() }
    }
}

fn qualify(context: &str, key: &str) -> String {
    if context.is_empty() {
        key.to_string()
    } else {
        format!("{context}.{key}")
    }
}

/// Serialize a value with sorted keys and a trailing newline.
pub fn to_sorted_string(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(&sort_value(value)).expect("serializable value");
    s.push('\n');
    s
}

fn sort_value(value: &Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut sorted = Map::new();
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            for k in keys {
                sorted.insert(k.clone(), sort_value(&map[k]));
            }
            Value::Object(sorted)
        }
        Value::Array(items) => Value::Array(items.iter().map(sort_value).collect()),
        other => other.clone(),
    }
}
