use std::cmp::Ordering;
use std::fmt;

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use serde_json::Value;

use super::{ProvError, QualifiedName};

/// A UTC instant with millisecond precision.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(DateTime<Utc>);

impl Timestamp {
    pub fn now() -> Self {
        Self::from_datetime(Utc::now())
    }

    pub fn from_datetime(dt: DateTime<Utc>) -> Self {
        let millis = dt.timestamp_millis();
        Self(Utc.timestamp_millis_opt(millis).single().expect("in-range instant"))
    }

    pub fn from_millis(millis: i64) -> Option<Self> {
        Utc.timestamp_millis_opt(millis).single().map(Self)
    }

    pub fn millis(&self) -> i64 {
        self.0.timestamp_millis()
    }

    pub fn datetime(&self) -> DateTime<Utc> {
        self.0
    }

    /// Accepts any RFC 3339 timestamp and normalizes it to UTC milliseconds.
    pub fn parse(s: &str) -> Result<Self, ProvError> {
        DateTime::parse_from_rfc3339(s)
            .map(|dt| Self::from_datetime(dt.with_timezone(&Utc)))
            .map_err(|e| ProvError::InvalidTimestamp(format!("{s}: {e}")))
    }

    /// Accepts only the exact canonical rendering.
    pub fn parse_canonical(s: &str) -> Result<Self, ProvError> {
        let ts = Self::parse(s)?;
        if ts.to_string() != s {
            return Err(ProvError::InvalidTimestamp(format!("{s}: not in canonical form")));
        }
        Ok(ts)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.to_rfc3339_opts(SecondsFormat::Millis, true))
    }
}

impl fmt::Debug for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl serde::Serialize for Timestamp {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for Timestamp {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Timestamp::parse_canonical(&s).map_err(serde::de::Error::custom)
    }
}

/// Finite decimal; `-0.0` is folded into `0.0` so equality is structural.
#[derive(Clone, Copy)]
pub struct Decimal(f64);

impl Decimal {
    pub fn new(value: f64) -> Result<Self, ProvError> {
        if !value.is_finite() {
            return Err(ProvError::InvalidLiteral(format!("non-finite decimal {value}")));
        }
        Ok(Self(if value == 0.0 { 0.0 } else { value }))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

impl PartialEq for Decimal {
    fn eq(&self, other: &Self) -> bool {
        self.0.to_bits() == other.0.to_bits()
    }
}

impl Eq for Decimal {}

impl Ord for Decimal {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl PartialOrd for Decimal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl std::hash::Hash for Decimal {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state)
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // shortest round-trip rendering, never exponent notation
        write!(f, "{}", self.0)
    }
}

impl fmt::Debug for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Typed attribute value.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Literal {
    String(String),
    Integer(i64),
    Decimal(Decimal),
    Boolean(bool),
    Timestamp(Timestamp),
    QName(QualifiedName),
}

impl Literal {
    pub fn string(s: impl Into<String>) -> Self {
        Literal::String(s.into())
    }

    pub fn type_tag(&self) -> &'static str {
        match self {
            Literal::String(_) => "string",
            Literal::Integer(_) => "integer",
            Literal::Decimal(_) => "decimal",
            Literal::Boolean(_) => "boolean",
            Literal::Timestamp(_) => "timestamp",
            Literal::QName(_) => "qname",
        }
    }

    pub fn as_qname(&self) -> Option<&QualifiedName> {
        match self {
            Literal::QName(q) => Some(q),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Literal::String(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_integer(&self) -> Option<i64> {
        match self {
            Literal::Integer(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_timestamp(&self) -> Option<Timestamp> {
        match self {
            Literal::Timestamp(t) => Some(*t),
            _ => None,
        }
    }

    /// JSON value carried in the `value` slot of the interchange encoding.
    pub fn json_value(&self) -> Value {
        match self {
            Literal::String(s) => Value::String(s.clone()),
            Literal::Integer(i) => Value::from(*i),
            Literal::Decimal(d) => Value::String(d.to_string()),
            Literal::Boolean(b) => Value::Bool(*b),
            Literal::Timestamp(t) => Value::String(t.to_string()),
            Literal::QName(q) => Value::String(q.to_string()),
        }
    }

    /// `{"type": .., "value": ..}`
    pub fn to_json(&self) -> Value {
        let mut map = serde_json::Map::new();
        map.insert("type".into(), Value::String(self.type_tag().into()));
        map.insert("value".into(), self.json_value());
        Value::Object(map)
    }

    /// Decodes a typed value. Error strings are relative to the `value` slot.
    pub fn from_parts(type_tag: &str, value: &Value) -> Result<Self, String> {
        let as_string = || value.as_str().ok_or_else(|| format!("expected string for {type_tag}"));
        match type_tag {
            "string" => Ok(Literal::String(as_string()?.to_string())),
            "integer" => value
                .as_i64()
                .map(Literal::Integer)
                .ok_or_else(|| "expected 64-bit integer".to_string()),
            "decimal" => {
                let f = match value {
                    Value::String(s) => s.parse::<f64>().map_err(|e| format!("bad decimal: {e}"))?,
                    Value::Number(n) => n.as_f64().ok_or("bad decimal")?,
                    _ => return Err("expected decimal string".into()),
                };
                Decimal::new(f).map(Literal::Decimal).map_err(|e| e.to_string())
            }
            "boolean" => value
                .as_bool()
                .map(Literal::Boolean)
                .ok_or_else(|| "expected boolean".to_string()),
            "timestamp" => Timestamp::parse(as_string()?)
                .map(Literal::Timestamp)
                .map_err(|e| e.to_string()),
            "qname" => as_string()?
                .parse()
                .map(Literal::QName)
                .map_err(|e: ProvError| e.to_string()),
            other => Err(format!("unknown literal type `{other}`")),
        }
    }

    pub fn from_json(value: &Value) -> Result<Self, String> {
        let obj = value.as_object().ok_or("expected typed literal object")?;
        let tag = obj
            .get("type")
            .and_then(Value::as_str)
            .ok_or("missing literal `type`")?;
        let v = obj.get("value").ok_or("missing literal `value`")?;
        Self::from_parts(tag, v)
    }
}

impl From<&str> for Literal {
    fn from(s: &str) -> Self {
        Literal::String(s.to_string())
    }
}

impl From<String> for Literal {
    fn from(s: String) -> Self {
        Literal::String(s)
    }
}

impl From<i64> for Literal {
    fn from(i: i64) -> Self {
        Literal::Integer(i)
    }
}

impl From<bool> for Literal {
    fn from(b: bool) -> Self {
        Literal::Boolean(b)
    }
}

impl From<Timestamp> for Literal {
    fn from(t: Timestamp) -> Self {
        Literal::Timestamp(t)
    }
}

impl From<QualifiedName> for Literal {
    fn from(q: QualifiedName) -> Self {
        Literal::QName(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamps_normalize_to_utc_millis() {
        let t = Timestamp::parse("2020-01-02T03:04:05.678912+01:00").unwrap();
        assert_eq!(t.to_string(), "2020-01-02T02:04:05.678Z");
        assert!(Timestamp::parse_canonical("2020-01-02T02:04:05.678Z").is_ok());
        assert!(Timestamp::parse_canonical("2020-01-02T02:04:05.678z").is_err());
        assert!(Timestamp::parse_canonical("2020-01-02t02:04:05.678Z").is_err());
        assert!(Timestamp::parse_canonical("2020-01-02T02:04:05Z").is_err());
    }

    #[test]
    fn decimals_are_finite_and_fold_negative_zero() {
        assert!(Decimal::new(f64::NAN).is_err());
        assert!(Decimal::new(f64::INFINITY).is_err());
        assert_eq!(Decimal::new(-0.0).unwrap(), Decimal::new(0.0).unwrap());
        assert_eq!(Decimal::new(1.5).unwrap().to_string(), "1.5");
    }

    #[test]
    fn literal_json_roundtrip() {
        let lits = vec![
            Literal::string("a\"b"),
            Literal::Integer(-7),
            Literal::Decimal(Decimal::new(0.1).unwrap()),
            Literal::Boolean(true),
            Literal::Timestamp(Timestamp::from_millis(1_600_000_000_123).unwrap()),
            Literal::QName("ex:thing".parse().unwrap()),
        ];
        for lit in lits {
            assert_eq!(Literal::from_json(&lit.to_json()).unwrap(), lit);
        }
        assert!(Literal::from_parts("float", &Value::from(1)).is_err());
    }
}
