//! Context attributes and the tagged values that flow through pipelines.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::Number;

/// Name of a context attribute, e.g. `airTemperature`.
pub type AttributeName = String;

/// The kind of value an attribute carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Number,
    Boolean,
    String,
    Geo,
}

impl ValueKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ValueKind::Number => "number",
            ValueKind::Boolean => "boolean",
            ValueKind::String => "string",
            ValueKind::Geo => "geo",
        }
    }
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A named, typed, unit-bearing piece of context.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ContextAttribute {
    pub name: AttributeName,
    #[serde(default)]
    pub unit: String,
    pub kind: ValueKind,
}

impl ContextAttribute {
    pub fn new(name: impl Into<String>, unit: impl Into<String>, kind: ValueKind) -> Self {
        Self {
            name: name.into(),
            unit: unit.into(),
            kind,
        }
    }
}

/// A geographic point in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: Number,
    pub lon: Number,
}

/// A tagged scalar. `Unknown` marks a value that could not be sensed or derived.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Value {
    Number(Number),
    Boolean(bool),
    Text(String),
    Geo(GeoPoint),
    #[default]
    Unknown,
}

impl Value {
    pub fn text(s: impl Into<String>) -> Self {
        Value::Text(s.into())
    }

    /// The kind of a definite value; `None` for `Unknown`.
    pub fn kind(&self) -> Option<ValueKind> {
        match self {
            Value::Number(_) => Some(ValueKind::Number),
            Value::Boolean(_) => Some(ValueKind::Boolean),
            Value::Text(_) => Some(ValueKind::String),
            Value::Geo(_) => Some(ValueKind::Geo),
            Value::Unknown => None,
        }
    }

    pub fn is_unknown(&self) -> bool {
        matches!(self, Value::Unknown)
    }

    pub fn as_number(&self) -> Option<Number> {
        match self {
            Value::Number(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Boolean(b) => Some(*b),
            _ => None,
        }
    }

    /// Parses the textual rendering of a value of the given kind.
    ///
    /// Geo points are written `lat;lon`.
    pub fn parse_as(kind: ValueKind, raw: &str) -> Option<Value> {
        let raw = raw.trim();
        match kind {
            ValueKind::Number => raw.parse::<Number>().ok().map(Value::Number),
            ValueKind::Boolean => match raw {
                "true" => Some(Value::Boolean(true)),
                "false" => Some(Value::Boolean(false)),
                _ => None,
            },
            ValueKind::String => Some(Value::Text(raw.to_string())),
            ValueKind::Geo => {
                let (lat, lon) = raw.split_once(';')?;
                Some(Value::Geo(GeoPoint {
                    lat: lat.trim().parse().ok()?,
                    lon: lon.trim().parse().ok()?,
                }))
            }
        }
    }

    /// Converts to JSON. Integral numbers are written without a fractional part.
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Number(n) => number_to_json(*n),
            Value::Boolean(b) => serde_json::Value::Bool(*b),
            Value::Text(s) => serde_json::Value::String(s.clone()),
            Value::Geo(p) => {
                serde_json::json!({ "lat": number_to_json(p.lat), "lon": number_to_json(p.lon) })
            }
            Value::Unknown => serde_json::Value::Null,
        }
    }

    /// Reads a JSON value back; `null` becomes `Unknown`.
    pub fn from_json(json: &serde_json::Value) -> Option<Value> {
        match json {
            serde_json::Value::Null => Some(Value::Unknown),
            serde_json::Value::Bool(b) => Some(Value::Boolean(*b)),
            serde_json::Value::Number(n) => n.as_f64().map(Value::Number),
            serde_json::Value::String(s) => Some(Value::Text(s.clone())),
            serde_json::Value::Object(map) => {
                let lat = map.get("lat")?.as_f64()?;
                let lon = map.get("lon")?.as_f64()?;
                Some(Value::Geo(GeoPoint { lat, lon }))
            }
            serde_json::Value::Array(_) => None,
        }
    }
}

/// Renders a number without locale formatting. Integral values drop the `.0`.
pub fn format_number(n: Number) -> String {
    if n.is_finite() && n.fract() == 0.0 && n.abs() < 1e15 {
        format!("{}", n as i64)
    } else {
        format!("{n}")
    }
}

fn number_to_json(n: Number) -> serde_json::Value {
    if n.is_finite() && n.fract() == 0.0 && n.abs() < 1e15 {
        serde_json::Value::from(n as i64)
    } else {
        serde_json::Number::from_f64(n)
            .map(serde_json::Value::Number)
            .unwrap_or(serde_json::Value::Null)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(n) => f.write_str(&format_number(*n)),
            Value::Boolean(b) => write!(f, "{b}"),
            Value::Text(s) => f.write_str(s),
            Value::Geo(p) => write!(f, "{};{}", format_number(p.lat), format_number(p.lon)),
            Value::Unknown => f.write_str("unknown"),
        }
    }
}

impl From<Number> for Value {
    fn from(n: Number) -> Self {
        Value::Number(n)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Boolean(b)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_string())
    }
}

/// Literal values as they appear in documents (rule thresholds, driver parameters).
///
/// Deserializes from a bare number, boolean or string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Boolean(bool),
    Number(Number),
    Text(String),
}

impl Literal {
    pub fn kind(&self) -> ValueKind {
        match self {
            Literal::Boolean(_) => ValueKind::Boolean,
            Literal::Number(_) => ValueKind::Number,
            Literal::Text(_) => ValueKind::String,
        }
    }

    pub fn to_value(&self) -> Value {
        match self {
            Literal::Boolean(b) => Value::Boolean(*b),
            Literal::Number(n) => Value::Number(*n),
            Literal::Text(s) => Value::Text(s.clone()),
        }
    }

    pub fn as_number(&self) -> Option<Number> {
        match self {
            Literal::Number(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Literal::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Literal::Boolean(b) => Some(*b),
            _ => None,
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.to_value().fmt(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integral_numbers_render_without_fraction() {
        assert_eq!(format_number(15.0), "15");
        assert_eq!(format_number(-3.0), "-3");
        assert_eq!(format_number(0.1), "0.1");
        assert_eq!(Value::Number(2.5).to_json(), serde_json::json!(2.5));
        assert_eq!(Value::Number(60.0).to_json(), serde_json::json!(60));
    }

    #[test]
    fn unknown_is_json_null() {
        assert_eq!(Value::Unknown.to_json(), serde_json::Value::Null);
        assert_eq!(
            Value::from_json(&serde_json::Value::Null),
            Some(Value::Unknown)
        );
    }

    #[test]
    fn parse_as_respects_kind() {
        assert_eq!(
            Value::parse_as(ValueKind::Number, "12"),
            Some(Value::Number(12.0))
        );
        assert_eq!(Value::parse_as(ValueKind::Boolean, "yes"), None);
        assert_eq!(
            Value::parse_as(ValueKind::Geo, "-37.8;144.9"),
            Some(Value::Geo(GeoPoint {
                lat: -37.8,
                lon: 144.9
            }))
        );
    }

    #[test]
    fn literal_untagged_deserialization() {
        let lits: Vec<Literal> = serde_json::from_str(r#"[12, "high", true, 2.5]"#).unwrap();
        assert_eq!(
            lits,
            vec![
                Literal::Number(12.0),
                Literal::Text("high".into()),
                Literal::Boolean(true),
                Literal::Number(2.5)
            ]
        );
    }
}
