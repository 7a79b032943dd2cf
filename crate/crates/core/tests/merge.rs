//! Merging is a set union of statements: elements sharing an id pool
//! their attributes, everything else is kept once.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use serde_json::{json, Value};

use provnr_core::prov::{canonical_bytes, document_json, Element, Literal, ProvDocument, QualifiedName, Relation, RelationKind};

const ENTITIES: usize = 4;
const ACTIVITIES: usize = 2;

fn ex(l: &str) -> QualifiedName {
    QualifiedName::of("ex", l)
}

fn element(i: usize) -> Element {
    if i < ENTITIES {
        Element::entity(ex(&format!("e{i}")))
    } else if i < ENTITIES + ACTIVITIES {
        Element::activity(ex(&format!("a{}", i - ENTITIES)))
    } else {
        Element::agent(ex("g0"))
    }
}

fn relation(pick: (u8, usize, usize)) -> Relation {
    let e = |i: usize| ex(&format!("e{}", i % ENTITIES));
    let a = |i: usize| ex(&format!("a{}", i % ACTIVITIES));
    match pick.0 % 4 {
        0 => Relation::new(RelationKind::WasDerivedFrom, e(pick.1), e(pick.2)),
        1 => Relation::new(RelationKind::Used, a(pick.1), e(pick.2)),
        2 => Relation::new(RelationKind::WasGeneratedBy, e(pick.1), a(pick.2)),
        _ => Relation::new(RelationKind::WasAssociatedWith, a(pick.1), ex("g0")),
    }
}

fn value() -> impl Strategy<Value = Literal> {
    prop_oneof![
        "[a-c]{0,2}".prop_map(Literal::String),
        (-3i64..3).prop_map(Literal::Integer),
        any::<bool>().prop_map(Literal::Boolean),
    ]
}

fn document() -> impl Strategy<Value = ProvDocument> {
    (
        proptest::collection::vec((0..ENTITIES + ACTIVITIES + 1, "[pq]", value()), 0..10),
        proptest::collection::vec((any::<u8>(), 0..4usize, 0..4usize), 0..8),
    )
        .prop_map(|(attrs, rels)| {
            let mut owned: BTreeMap<usize, Element> = BTreeMap::new();
            for (i, name, v) in attrs {
                let e = owned.remove(&i).unwrap_or_else(|| element(i));
                owned.insert(i, e.with_attribute(ex(&name), v));
            }
            // every element present, so any relation has its endpoints
            let mut out = ProvDocument::new().with_namespace("ex", "http://example.org/m#").unwrap();
            for i in 0..ENTITIES + ACTIVITIES + 1 {
                out.insert(owned.remove(&i).unwrap_or_else(|| element(i))).unwrap();
            }
            for r in rels {
                out.insert(relation(r)).unwrap();
            }
            out
        })
}

fn text(v: &Value) -> String {
    serde_json::to_string(v).unwrap()
}

/// Union computed on the interchange JSON alone.
fn union_oracle(a: &ProvDocument, b: &ProvDocument) -> String {
    let mut elements: BTreeMap<(String, String), BTreeSet<String>> = BTreeMap::new();
    let mut relations: BTreeSet<String> = BTreeSet::new();
    for d in [document_json(a), document_json(b)] {
        for e in d["elements"].as_array().unwrap() {
            let key = (e["kind"].as_str().unwrap().to_string(), e["id"].as_str().unwrap().to_string());
            let attrs = elements.entry(key).or_default();
            attrs.extend(e["attributes"].as_array().unwrap().iter().map(text));
        }
        relations.extend(d["relations"].as_array().unwrap().iter().map(text));
    }
    let attr_sorted = |set: &BTreeSet<String>| {
        let mut v: Vec<Value> = set.iter().map(|s| serde_json::from_str(s).unwrap()).collect();
        v.sort_by_key(|x| (x["name"].as_str().unwrap().to_string(), text(x)));
        Value::Array(v)
    };
    let els: Vec<Value> = elements
        .iter()
        .map(|((kind, id), attrs)| json!({"attributes": attr_sorted(attrs), "id": id, "kind": kind}))
        .collect();
    let mut rels: Vec<Value> = relations.iter().map(|s| serde_json::from_str(s).unwrap()).collect();
    rels.sort_by_key(|r| {
        (
            r["kind"].as_str().unwrap().to_string(),
            r["source"].as_str().unwrap().to_string(),
            r["target"].as_str().unwrap().to_string(),
            text(r),
        )
    });
    text(&json!({"elements": els, "namespaces": document_json(a)["namespaces"], "relations": rels}))
}

proptest! {
    #[test]
    fn merge_is_the_statement_union(a in document(), b in document()) {
        let mut merged = a.clone();
        merged.merge_in_place(&b).unwrap();
        prop_assert_eq!(String::from_utf8(canonical_bytes(&merged)).unwrap(), union_oracle(&a, &b));
    }

    #[test]
    fn merge_commutes_and_is_idempotent(a in document(), b in document()) {
        let mut ab = a.clone();
        ab.merge_in_place(&b).unwrap();
        let mut ba = b.clone();
        ba.merge_in_place(&a).unwrap();
        prop_assert_eq!(canonical_bytes(&ab), canonical_bytes(&ba));
        let mut again = ab.clone();
        again.merge_in_place(&b).unwrap();
        prop_assert_eq!(canonical_bytes(&again), canonical_bytes(&ab));
    }
}
