//! Canonical JSON encoding shared by every file the framework writes.
//!
//! Object keys are emitted in alphabetical order and floating-point numbers
//! are rounded to at most nine fractional digits, so that a value which has
//! been read back from disk serializes to exactly the same bytes again.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Number, Value};

/// Maximum number of fractional digits kept for floating-point values.
pub const FRACTION_DIGITS: i32 = 9;

/// Rounds `x` to [`FRACTION_DIGITS`] decimal places.
///
/// Idempotent: `round9(round9(x)) == round9(x)` for all finite `x`.
pub fn round9(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    let scale = 10f64.powi(FRACTION_DIGITS);
    let r = (x * scale).round() / scale;
    // avoid emitting "-0.0"
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn canonicalize(value: Value) -> Value {
    match value {
        Value::Number(n) if n.is_f64() => {
            let f = n.as_f64().unwrap_or(0.0);
            Number::from_f64(round9(f))
                .map(Value::Number)
                .unwrap_or(Value::Null)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonicalize).collect()),
        Value::Object(map) => {
            // serde_json's default map is ordered by key
            let sorted: Map<String, Value> = map.into_iter().map(|(k, v)| (k, canonicalize(v))).collect();
            Value::Object(sorted)
        }
        other => other,
    }
}

/// Serializes `value` into canonical pretty-printed JSON with a trailing newline.
pub fn to_string<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let tree = canonicalize(serde_json::to_value(value)?);
    let mut out = serde_json::to_string_pretty(&tree)?;
    out.push('\n');
    Ok(out)
}

/// Parses `text` after normalizing floats the same way [`to_string`] does.
///
/// Parsing goes through [`serde_json::from_str`] first so that syntax errors
/// keep their line and column information.
pub fn from_str<T: DeserializeOwned>(text: &str) -> serde_json::Result<T> {
    let raw: Value = serde_json::from_str(text)?;
    serde_json::from_value(canonicalize(raw))
}
