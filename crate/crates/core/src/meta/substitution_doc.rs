use serde_json::Value;

use super::{MetaError, MetaTemplateSet};
use crate::crypto::sha256;
use crate::prov::{Element, Literal, ProvDocument, QualifiedName, Relation, RelationKind};
use crate::template::{instantiate, Bindings, Substitution, ZoneBinding};

const SUB_PREFIX: &str = "sub";
const SUB_URI: &str = "urn:provnr:substitution:";

fn meta(local: &str) -> QualifiedName {
    QualifiedName::of("meta", local)
}

fn prov_type() -> QualifiedName {
    QualifiedName::of("prov", "type")
}

fn vvar(local: &str) -> QualifiedName {
    QualifiedName::of("vvar", local)
}

fn var(local: &str) -> QualifiedName {
    QualifiedName::of("var", local)
}

/// `sub-` followed by the first 32 hex digits of the SHA-256 of the
/// substitution's canonical bytes.
pub fn substitution_id(s: &Substitution) -> String {
    let digest = sha256(&s.canonical_bytes());
    format!("sub-{}", &hex::encode(digest)[..32])
}

/// Encodes `s` as a provenance document: one `newSubstitution` instance and
/// one `addBinding` instance per binding. Top-level bindings come first,
/// then each zone iteration in order; within a group bindings follow
/// variable-name order.
pub fn persist_substitution(s: &Substitution) -> (String, ProvDocument) {
    let set = MetaTemplateSet::get();
    let id = substitution_id(s);
    let subject = QualifiedName::of(SUB_PREFIX, "substitution");
    let zones: Vec<Value> = s.zone_bindings.iter().map(|z| Value::String(z.zone.clone())).collect();

    let mut doc = ProvDocument::new();
    doc.add_namespace(SUB_PREFIX, SUB_URI).expect("fresh document");
    let head = Substitution::new()
        .bind(var("substitution"), subject.clone())
        .bind(vvar("substitutionId"), id.as_str())
        .bind(vvar("zoneSequence"), Value::Array(zones).to_string());
    let fragment = instantiate(&set.new_substitution, &head).expect("newSubstitution instantiates");
    doc.merge_in_place(&fragment).expect("newSubstitution merges");

    // Each binding is built directly rather than by instantiating
    // addBinding; the tests hold the two to the same output.
    let groups = std::iter::once(&s.bindings).chain(s.zone_bindings.iter().map(|z| &z.bindings));
    let mut position = 0i64;
    for (iteration, bindings) in groups.enumerate() {
        for (variable, value) in bindings {
            position += 1;
            let stored = match value {
                Literal::QName(q) => Literal::String(q.to_string()),
                other => other.clone(),
            };
            let binding = QualifiedName::of(SUB_PREFIX, &format!("binding-{position}"));
            let element = Element::entity(binding.clone())
                .with_attribute(prov_type(), meta("Binding"))
                .with_attribute(meta("variable"), variable.to_string())
                .with_attribute(meta("valueType"), value.type_tag())
                .with_attribute(meta("value"), stored)
                .with_attribute(meta("position"), position)
                .with_attribute(meta("iteration"), iteration as i64);
            doc.insert(element).expect("binding entity");
            doc.insert(Relation::new(RelationKind::WasDerivedFrom, subject.clone(), binding))
                .expect("binding derivation");
        }
    }
    (id, doc)
}

fn bad(msg: impl Into<String>) -> MetaError {
    MetaError::InvalidHistory(format!("substitution document: {}", msg.into()))
}

/// Inverse of [`persist_substitution`]. Returns the recorded identifier and
/// the substitution.
pub fn decode_substitution_document(doc: &ProvDocument) -> Result<(String, Substitution), MetaError> {
    doc.validate()?;
    let mut heads = doc.elements().filter(|e| e.has_type(&meta("Substitution")));
    let head = heads.next().ok_or_else(|| bad("no meta:Substitution entity"))?;
    if heads.next().is_some() {
        return Err(bad("more than one meta:Substitution entity"));
    }
    let id = head
        .attribute(&meta("identifier"))
        .and_then(Literal::as_str)
        .ok_or_else(|| bad("missing meta:identifier"))?
        .to_string();
    let zones_text = head
        .attribute(&meta("zoneSequence"))
        .and_then(Literal::as_str)
        .ok_or_else(|| bad("missing meta:zoneSequence"))?;
    let zones: Vec<String> = serde_json::from_str(zones_text).map_err(|e| bad(format!("zoneSequence: {e}")))?;

    let mut out = Substitution {
        bindings: Bindings::new(),
        zone_bindings: zones
            .into_iter()
            .map(|zone| ZoneBinding {
                zone,
                bindings: Bindings::new(),
            })
            .collect(),
    };
    let mut positions = Vec::new();
    for element in doc.elements().filter(|e| e.has_type(&meta("Binding"))) {
        let linked = doc.relations().any(|r| {
            r.kind == RelationKind::WasDerivedFrom && r.source == head.id && r.target == element.id
        });
        if !linked {
            return Err(bad(format!("{} is not derived into the substitution", element.id)));
        }
        let attr = |local: &str| {
            element
                .attribute(&meta(local))
                .ok_or_else(|| bad(format!("{} lacks meta:{local}", element.id)))
        };
        let variable: QualifiedName = attr("variable")?
            .as_str()
            .ok_or_else(|| bad("meta:variable must be a string"))?
            .parse()?;
        let tag = attr("valueType")?
            .as_str()
            .ok_or_else(|| bad("meta:valueType must be a string"))?;
        let stored = attr("value")?;
        let value = if tag == "qname" {
            let text = stored.as_str().ok_or_else(|| bad("qname value must be stored as a string"))?;
            Literal::QName(text.parse()?)
        } else if stored.type_tag() == tag {
            stored.clone()
        } else {
            return Err(bad(format!("{} value type does not match {tag}", element.id)));
        };
        let position = attr("position")?.as_integer().ok_or_else(|| bad("meta:position"))?;
        let iteration = attr("iteration")?.as_integer().ok_or_else(|| bad("meta:iteration"))?;
        positions.push(position);
        let target = match iteration {
            0 => &mut out.bindings,
            i if i > 0 && (i as usize) <= out.zone_bindings.len() => &mut out.zone_bindings[i as usize - 1].bindings,
            i => return Err(bad(format!("iteration {i} out of range"))),
        };
        if target.insert(variable.clone(), value).is_some() {
            return Err(bad(format!("{variable} bound twice in one iteration")));
        }
    }
    positions.sort_unstable();
    if positions.iter().enumerate().any(|(i, p)| *p != i as i64 + 1) {
        return Err(bad("binding positions are not 1..n"));
    }
    Ok((id, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prov::Timestamp;

    fn q(s: &str) -> QualifiedName {
        s.parse().unwrap()
    }

    fn binding_count(doc: &ProvDocument) -> usize {
        doc.elements().filter(|e| e.has_type(&meta("Binding"))).count()
    }

    #[test]
    fn empty_substitution_has_only_the_head() {
        let (id, doc) = persist_substitution(&Substitution::new());
        assert_eq!(doc.element_count(), 1);
        assert_eq!(binding_count(&doc), 0);
        assert_eq!(decode_substitution_document(&doc).unwrap(), (id, Substitution::new()));
    }

    #[test]
    fn three_bindings_three_instances() {
        let s = Substitution::new()
            .bind(q("var:p"), q("ex:p"))
            .bind(q("vvar:n"), 3i64)
            .bind(q("vvar:t"), Timestamp::from_millis(1_700_000_000_000).unwrap());
        let (_, doc) = persist_substitution(&s);
        assert_eq!(binding_count(&doc), 3);
        assert_eq!(doc.relation_count(), 3);
        assert_eq!(decode_substitution_document(&doc).unwrap().1, s);
    }

    #[test]
    fn zone_iterations_roundtrip_in_order() {
        let mut a = Bindings::new();
        a.insert(q("var:answer"), Literal::QName(q("ex:a")));
        let mut b = Bindings::new();
        b.insert(q("vvar:text"), Literal::string("hi"));
        let s = Substitution::new()
            .bind(q("var:bot"), q("ex:bot"))
            .with_zone("turn", a)
            .with_zone("other", b)
            .with_zone("turn", Bindings::new());
        let (id, doc) = persist_substitution(&s);
        assert_eq!(id, substitution_id(&s));
        assert_eq!(decode_substitution_document(&doc).unwrap().1, s);
    }

    // The head of the direct encoding plus one addBinding instance per
    // binding.
    fn via_templates(s: &Substitution, direct: &ProvDocument) -> ProvDocument {
        let set = MetaTemplateSet::get();
        let mut doc = ProvDocument::new();
        for (p, u) in direct.namespaces() {
            doc.add_namespace(p, u).unwrap();
        }
        let head = direct.elements().find(|e| e.has_type(&meta("Substitution"))).unwrap();
        doc.insert(head.clone()).unwrap();
        let head = head.id.clone();
        let groups = std::iter::once(&s.bindings).chain(s.zone_bindings.iter().map(|z| &z.bindings));
        let mut position = 0i64;
        for (iteration, bindings) in groups.enumerate() {
            for (variable, value) in bindings {
                position += 1;
                let stored = match value {
                    Literal::QName(q) => Literal::String(q.to_string()),
                    other => other.clone(),
                };
                let b = Substitution::new()
                    .bind(var("substitution"), head.clone())
                    .bind(var("binding"), QualifiedName::of(SUB_PREFIX, &format!("binding-{position}")))
                    .bind(vvar("variable"), variable.to_string())
                    .bind(vvar("valueType"), value.type_tag())
                    .bind(vvar("value"), stored)
                    .bind(vvar("position"), position)
                    .bind(vvar("iteration"), iteration as i64);
                doc.merge_in_place(&instantiate(&set.add_binding, &b).unwrap()).unwrap();
            }
        }
        doc
    }

    #[test]
    fn direct_bindings_match_template_instances() {
        let mut a = Bindings::new();
        a.insert(q("var:answer"), Literal::QName(q("ex:a")));
        a.insert(q("vvar:n"), Literal::Integer(-4));
        let s = Substitution::new()
            .bind(q("var:bot"), q("ex:bot"))
            .bind(q("vvar:flag"), true)
            .bind(q("vvar:t"), Timestamp::from_millis(1_700_000_000_000).unwrap())
            .with_zone("turn", a.clone())
            .with_zone("turn", a);
        let direct = persist_substitution(&s).1;
        assert_eq!(crate::prov::canonical_bytes(&direct), crate::prov::canonical_bytes(&via_templates(&s, &direct)));
    }

    #[test]
    fn deterministic() {
        let s = Substitution::new().bind(q("vvar:b"), "x").bind(q("vvar:a"), "y");
        let s2 = Substitution::new().bind(q("vvar:a"), "y").bind(q("vvar:b"), "x");
        assert_eq!(persist_substitution(&s), persist_substitution(&s2));
    }
}
