//! Provenance templates and their instantiation.
//!
//! A template is a [`ProvDocument`] whose identifiers may be identifier
//! variables (`var:`) and whose attribute values may be value variables
//! (`vvar:`). Zones are subgraphs that can be instantiated repeatedly
//! inside one fragment; iteration `k` of a zone appends `.k` to the local
//! part of every identifier it introduces.

mod instantiate;
mod substitution;

pub use instantiate::{check_substitution, instantiate, CheckReport, FragmentSession, SessionState};
pub use substitution::{bindings_from_json, bindings_json, Bindings, Substitution, ZoneBinding};

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{Map, Value};
use thiserror::Error;

use crate::prov::{
    canonical_json, document_from_json_with, document_json, expect_array, expect_object,
    expect_str, reject_unknown_keys, violation, DecodeOptions, Element, Literal, ProvDocument,
    ProvError, QualifiedName, Relation,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error("unbound variable {0}")]
    UnboundVariable(QualifiedName),
    #[error("binding for {0} does not match any template variable")]
    ExtraneousBinding(QualifiedName),
    #[error("{variable} must be bound to a {expected}")]
    TypeMismatch {
        variable: QualifiedName,
        expected: &'static str,
    },
    #[error("template has zones; use the zoned generation path")]
    ZonedTemplate,
    #[error("template has no zones")]
    NoZones,
    #[error("unknown zone `{0}`")]
    UnknownZone(String),
    #[error("fragment session is closed")]
    SessionClosed,
    #[error("fragment failed validation: {0}")]
    ValidationFailure(String),
    #[error(transparent)]
    Prov(#[from] ProvError),
}

/// Which part of a template a statement belongs to.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum Scope {
    Fixed,
    Zone(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Template {
    body: ProvDocument,
    zones: BTreeMap<String, BTreeSet<QualifiedName>>,
    zone_of: BTreeMap<QualifiedName, String>,
    fixed_vars: BTreeSet<QualifiedName>,
    zone_vars: BTreeMap<String, BTreeSet<QualifiedName>>,
}

fn invalid(msg: impl Into<String>) -> TemplateError {
    TemplateError::InvalidTemplate(msg.into())
}

fn literal_variable(lit: &Literal) -> Option<&QualifiedName> {
    lit.as_qname().filter(|q| q.is_variable())
}

impl Template {
    /// Zone-free template.
    pub fn new(body: ProvDocument) -> Result<Self, TemplateError> {
        Self::with_zones(body, BTreeMap::new())
    }

    pub fn with_zones(
        body: ProvDocument,
        zones: BTreeMap<String, BTreeSet<QualifiedName>>,
    ) -> Result<Self, TemplateError> {
        body.validate().map_err(|e| invalid(e.to_string()))?;

        let mut zone_of = BTreeMap::new();
        for (zone, members) in &zones {
            if zone.is_empty() {
                return Err(invalid("empty zone id"));
            }
            for member in members {
                if body.element(member).is_none() {
                    return Err(invalid(format!("zone `{zone}` member {member} is not a template element")));
                }
                if let Some(other) = zone_of.insert(member.clone(), zone.clone()) {
                    return Err(invalid(format!("{member} belongs to zones `{other}` and `{zone}`")));
                }
            }
        }

        for element in body.elements() {
            if element.id.is_value_variable() {
                return Err(invalid(format!("value variable {} used as an identifier", element.id)));
            }
        }
        for relation in body.relations() {
            let (a, b) = (zone_of.get(&relation.source), zone_of.get(&relation.target));
            if let (Some(za), Some(zb)) = (a, b) {
                if za != zb {
                    return Err(invalid(format!("relation {relation} crosses zones `{za}` and `{zb}`")));
                }
            }
        }

        let mut tmpl = Self {
            body,
            zones,
            zone_of,
            fixed_vars: BTreeSet::new(),
            zone_vars: BTreeMap::new(),
        };
        tmpl.index_variables()?;
        Ok(tmpl)
    }

    fn index_variables(&mut self) -> Result<(), TemplateError> {
        let mut by_scope: BTreeMap<Scope, BTreeSet<QualifiedName>> = BTreeMap::new();
        for element in self.body.elements() {
            let scope = self.element_scope(&element.id);
            let vars = by_scope.entry(scope).or_default();
            vars.extend(element_variables(element));
        }
        for relation in self.body.relations() {
            let scope = self.relation_scope(relation);
            let vars = by_scope.entry(scope).or_default();
            vars.extend(relation_variables(relation));
        }

        let all: BTreeSet<&QualifiedName> = by_scope.values().flatten().collect();
        let mut locals: BTreeMap<&str, &QualifiedName> = BTreeMap::new();
        for var in &all {
            if let Some(prev) = locals.insert(var.local(), var) {
                return Err(invalid(format!("duplicate variable: {prev} and {var}")));
            }
        }

        let fixed = by_scope.remove(&Scope::Fixed).unwrap_or_default();
        let mut owner: BTreeMap<QualifiedName, String> = BTreeMap::new();
        let mut zone_vars: BTreeMap<String, BTreeSet<QualifiedName>> =
            self.zones.keys().map(|z| (z.clone(), BTreeSet::new())).collect();
        for (scope, vars) in by_scope {
            let Scope::Zone(zone) = scope else { unreachable!() };
            for var in vars.into_iter().filter(|v| !fixed.contains(v)) {
                if let Some(other) = owner.insert(var.clone(), zone.clone()) {
                    return Err(invalid(format!("variable {var} shared by zones `{other}` and `{zone}`")));
                }
                zone_vars.get_mut(&zone).expect("zone indexed").insert(var);
            }
        }
        self.fixed_vars = fixed;
        self.zone_vars = zone_vars;
        Ok(())
    }

    pub(crate) fn element_scope(&self, id: &QualifiedName) -> Scope {
        match self.zone_of.get(id) {
            Some(z) => Scope::Zone(z.clone()),
            None => Scope::Fixed,
        }
    }

    pub(crate) fn relation_scope(&self, relation: &Relation) -> Scope {
        self.zone_of
            .get(&relation.source)
            .or_else(|| self.zone_of.get(&relation.target))
            .map(|z| Scope::Zone(z.clone()))
            .unwrap_or(Scope::Fixed)
    }

    pub fn body(&self) -> &ProvDocument {
        &self.body
    }

    pub fn zones(&self) -> &BTreeMap<String, BTreeSet<QualifiedName>> {
        &self.zones
    }

    pub fn has_zones(&self) -> bool {
        !self.zones.is_empty()
    }

    /// Variables bound once per instantiation (outside every zone).
    pub fn fixed_variables(&self) -> &BTreeSet<QualifiedName> {
        &self.fixed_vars
    }

    pub fn zone_variables(&self, zone: &str) -> Option<&BTreeSet<QualifiedName>> {
        self.zone_vars.get(zone)
    }

    /// The template with its zones dissolved into the fixed part.
    pub fn without_zones(&self) -> Result<Template, TemplateError> {
        Template::new(self.body.clone())
    }

    pub fn to_json(&self) -> Value {
        let mut value = document_json(&self.body);
        let zones: Vec<Value> = self
            .zones
            .iter()
            .map(|(id, members)| {
                let mut o = Map::new();
                o.insert("id".into(), Value::String(id.clone()));
                o.insert(
                    "members".into(),
                    Value::Array(members.iter().map(|m| Value::String(m.to_string())).collect()),
                );
                Value::Object(o)
            })
            .collect();
        value
            .as_object_mut()
            .expect("document json is an object")
            .insert("zones".into(), Value::Array(zones));
        value
    }

    /// Normalised and ordered representation: the canonical interchange
    /// form with a `zones` key (always present, sorted by zone id).
    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical_json(&self.to_json())
    }

    pub fn encode(&self) -> String {
        String::from_utf8(self.canonical_bytes()).expect("utf-8")
    }

    pub fn decode(text: &str) -> Result<Self, TemplateError> {
        let value: Value = serde_json::from_str(text).map_err(|e| violation("$", e.to_string()))?;
        Self::from_json(&value)
    }

    pub fn from_json(value: &Value) -> Result<Self, TemplateError> {
        let body = document_from_json_with(
            value,
            "$",
            &DecodeOptions {
                extra_keys: &["zones"],
                strict_ids: true,
                check_prefixes: true,
            },
        )
        .map_err(|e| match e {
            ProvError::SchemaViolation { ref message, .. } if message.starts_with("duplicate element id") => {
                invalid(format!("duplicate variable: {e}"))
            }
            other => TemplateError::Prov(other),
        })?;
        let mut zones = BTreeMap::new();
        let obj = expect_object(value, "$")?;
        if let Some(z) = obj.get("zones") {
            for (i, item) in expect_array(z, "$.zones")?.iter().enumerate() {
                let p = format!("$.zones[{i}]");
                let o = expect_object(item, &p)?;
                reject_unknown_keys(o, &["id", "members"], &p)?;
                let id = expect_str(o.get("id").ok_or_else(|| violation(&p, "missing `id`"))?, &format!("{p}.id"))?;
                let mut members = BTreeSet::new();
                if let Some(m) = o.get("members") {
                    for (j, mv) in expect_array(m, &format!("{p}.members"))?.iter().enumerate() {
                        let mp = format!("{p}.members[{j}]");
                        let q: QualifiedName = expect_str(mv, &mp)?
                            .parse()
                            .map_err(|e: ProvError| violation(&mp, e.to_string()))?;
                        members.insert(q);
                    }
                }
                if zones.insert(id.to_string(), members).is_some() {
                    return Err(invalid(format!("duplicate zone id `{id}`")));
                }
            }
        }
        Template::with_zones(body, zones)
    }
}

fn element_variables(element: &Element) -> impl Iterator<Item = QualifiedName> + '_ {
    let id = element.id.is_variable().then(|| element.id.clone());
    id.into_iter().chain(
        element
            .attributes
            .iter()
            .filter_map(|a| literal_variable(&a.value).cloned()),
    )
}

fn relation_variables(relation: &Relation) -> impl Iterator<Item = QualifiedName> + '_ {
    [&relation.source, &relation.target]
        .into_iter()
        .filter(|q| q.is_variable())
        .cloned()
        .chain(
            relation
                .attributes
                .iter()
                .filter_map(|a| literal_variable(&a.value).cloned()),
        )
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::prov::{Element, RelationKind};

    fn q(s: &str) -> QualifiedName {
        s.parse().unwrap()
    }

    pub(crate) fn chatbot_template() -> Template {
        let mut body = ProvDocument::new().with_namespace("ex", "http://example.org/").unwrap();
        body.insert(Element::agent(q("var:patient")).with_attribute(q("ex:name"), q("vvar:name"))).unwrap();
        body.insert(Element::activity(q("var:chat"))).unwrap();
        body.insert(Relation::new(RelationKind::WasAssociatedWith, q("var:chat"), q("var:patient"))).unwrap();
        body.insert(Element::entity(q("var:answer")).with_attribute(q("ex:text"), q("vvar:text"))).unwrap();
        body.insert(Relation::new(RelationKind::WasGeneratedBy, q("var:answer"), q("var:chat"))).unwrap();
        let zones = BTreeMap::from([("turn".to_string(), BTreeSet::from([q("var:answer")]))]);
        Template::with_zones(body, zones).unwrap()
    }

    #[test]
    fn variables_partition_by_scope() {
        let t = chatbot_template();
        assert_eq!(
            t.fixed_variables().iter().map(|v| v.to_string()).collect::<Vec<_>>(),
            ["var:chat", "var:patient", "vvar:name"]
        );
        assert_eq!(
            t.zone_variables("turn").unwrap().iter().map(|v| v.to_string()).collect::<Vec<_>>(),
            ["var:answer", "vvar:text"]
        );
    }

    #[test]
    fn rejects_same_local_under_both_variable_prefixes() {
        let body = ProvDocument::new()
            .add_statement(Element::entity(q("var:x")).with_attribute(q("prov:label"), q("vvar:x")))
            .unwrap();
        assert!(matches!(Template::new(body), Err(TemplateError::InvalidTemplate(_))));
    }

    #[test]
    fn rejects_duplicate_element_declaration_in_file() {
        let text = r#"{"elements":[{"id":"var:x","kind":"Entity"},{"id":"var:x","kind":"Entity"}]}"#;
        match Template::decode(text) {
            Err(TemplateError::InvalidTemplate(m)) => assert!(m.contains("duplicate variable")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_cross_zone_edges_and_overlapping_zones() {
        let mut body = ProvDocument::new();
        body.insert(Element::entity(q("var:a"))).unwrap();
        body.insert(Element::entity(q("var:b"))).unwrap();
        body.insert(Relation::new(RelationKind::WasDerivedFrom, q("var:a"), q("var:b"))).unwrap();
        let cross = BTreeMap::from([
            ("z1".to_string(), BTreeSet::from([q("var:a")])),
            ("z2".to_string(), BTreeSet::from([q("var:b")])),
        ]);
        assert!(Template::with_zones(body.clone(), cross).is_err());
        let overlap = BTreeMap::from([
            ("z1".to_string(), BTreeSet::from([q("var:a")])),
            ("z2".to_string(), BTreeSet::from([q("var:a")])),
        ]);
        assert!(Template::with_zones(body.clone(), overlap).is_err());
        let missing = BTreeMap::from([("z1".to_string(), BTreeSet::from([q("var:zz")]))]);
        assert!(Template::with_zones(body, missing).is_err());
    }

    #[test]
    fn template_json_roundtrip() {
        let t = chatbot_template();
        let text = t.encode();
        assert!(text.ends_with(r#""zones":[{"id":"turn","members":["var:answer"]}]}"#), "{text}");
        assert_eq!(Template::decode(&text).unwrap(), t);
    }
}
