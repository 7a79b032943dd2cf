use std::collections::BTreeMap;

use serde_json::{Map, Value};

use crate::prov::{
    canonical_json, expect_array, expect_object, expect_str, reject_unknown_keys, violation,
    Literal, ProvError, QualifiedName,
};

pub type Bindings = BTreeMap<QualifiedName, Literal>;

/// Bindings for one iteration of a zone.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ZoneBinding {
    pub zone: String,
    pub bindings: Bindings,
}

/// Variable bindings that instantiate a template.
///
/// Identifier variables (`var:`) bind to qualified names; value variables
/// (`vvar:`) bind to any literal.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Substitution {
    pub bindings: Bindings,
    pub zone_bindings: Vec<ZoneBinding>,
}

impl Substitution {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(mut self, variable: QualifiedName, value: impl Into<Literal>) -> Self {
        self.bindings.insert(variable, value.into());
        self
    }

    pub fn with_zone(mut self, zone: impl Into<String>, bindings: Bindings) -> Self {
        self.zone_bindings.push(ZoneBinding {
            zone: zone.into(),
            bindings,
        });
        self
    }

    /// Only zone bindings, as submitted by a single zone iteration.
    pub fn for_zone(zone: impl Into<String>, bindings: Bindings) -> Self {
        Self::new().with_zone(zone, bindings)
    }

    pub fn binding_count(&self) -> usize {
        self.bindings.len() + self.zone_bindings.iter().map(|z| z.bindings.len()).sum::<usize>()
    }

    pub fn to_json(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("bindings".into(), bindings_json(&self.bindings));
        obj.insert(
            "zoneBindings".into(),
            Value::Array(
                self.zone_bindings
                    .iter()
                    .map(|z| {
                        let mut o = Map::new();
                        o.insert("zone".into(), Value::String(z.zone.clone()));
                        o.insert("bindings".into(), bindings_json(&z.bindings));
                        Value::Object(o)
                    })
                    .collect(),
            ),
        );
        Value::Object(obj)
    }

    /// Ordered representation: bindings sorted by variable name, zone
    /// iterations in submission order.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical_json(&self.to_json())
    }

    pub fn encode(&self) -> String {
        String::from_utf8(self.canonical_bytes()).expect("utf-8")
    }

    pub fn decode(text: &str) -> Result<Self, ProvError> {
        let value: Value = serde_json::from_str(text).map_err(|e| violation("$", e.to_string()))?;
        Self::from_json(&value)
    }

    pub fn from_json(value: &Value) -> Result<Self, ProvError> {
        let obj = expect_object(value, "$")?;
        reject_unknown_keys(obj, &["bindings", "zoneBindings"], "$")?;
        let bindings = match obj.get("bindings") {
            Some(b) => bindings_from_json(b, "$.bindings")?,
            None => Bindings::new(),
        };
        let mut zone_bindings = Vec::new();
        if let Some(zb) = obj.get("zoneBindings") {
            for (i, item) in expect_array(zb, "$.zoneBindings")?.iter().enumerate() {
                let p = format!("$.zoneBindings[{i}]");
                let o = expect_object(item, &p)?;
                reject_unknown_keys(o, &["zone", "bindings"], &p)?;
                let zone = expect_str(o.get("zone").ok_or_else(|| violation(&p, "missing `zone`"))?, &format!("{p}.zone"))?;
                let bindings = match o.get("bindings") {
                    Some(b) => bindings_from_json(b, &format!("{p}.bindings"))?,
                    None => Bindings::new(),
                };
                zone_bindings.push(ZoneBinding {
                    zone: zone.to_string(),
                    bindings,
                });
            }
        }
        Ok(Self {
            bindings,
            zone_bindings,
        })
    }
}

pub fn bindings_json(bindings: &Bindings) -> Value {
    Value::Object(
        bindings
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_json()))
            .collect(),
    )
}

pub fn bindings_from_json(value: &Value, path: &str) -> Result<Bindings, ProvError> {
    let mut out = Bindings::new();
    for (key, lit) in expect_object(value, path)? {
        let p = format!("{path}.{key}");
        let var: QualifiedName = key.parse().map_err(|e: ProvError| violation(&p, e.to_string()))?;
        if !var.is_variable() {
            return Err(violation(&p, "binding key is not a var: or vvar: name"));
        }
        let lit = Literal::from_json(lit).map_err(|m| violation(&p, m))?;
        out.insert(var, lit);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_roundtrip_and_order() {
        let mut zb = Bindings::new();
        zb.insert("var:answer".parse().unwrap(), Literal::QName("ex:a1".parse().unwrap()));
        let s = Substitution::new()
            .bind("vvar:t".parse().unwrap(), "hello")
            .bind("var:p".parse().unwrap(), Literal::QName("ex:p".parse().unwrap()))
            .with_zone("turn", zb);
        let text = s.encode();
        assert!(text.starts_with(r#"{"bindings":{"var:p":"#), "{text}");
        assert_eq!(Substitution::decode(&text).unwrap(), s);
        assert_eq!(s.binding_count(), 3);
    }

    #[test]
    fn rejects_non_variable_keys() {
        let text = r#"{"bindings":{"ex:p":{"type":"string","value":"x"}}}"#;
        assert!(matches!(Substitution::decode(text), Err(ProvError::SchemaViolation { .. })));
    }
}
