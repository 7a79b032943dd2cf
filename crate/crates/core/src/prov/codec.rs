//! Interchange JSON and the canonical byte form.
//!
//! Canonical form: UTF-8 JSON, object keys sorted byte-wise, no whitespace.
//! Elements are ordered by `(kind, id)`, relations by
//! `(kind, source, target, <canonical relation text>)`, attributes by
//! `(name, <canonical literal text>)`. Timestamps render as UTC RFC 3339
//! with milliseconds, decimals as strings.
//!
//! ```text
//! {"elements":[{"attributes":[{"name":"ex:p","type":"string","value":"v"}],
//!   "id":"ex:e1","kind":"Entity"}],"namespaces":{"ex":"http://example.org/"},
//!   "relations":[]}
//! ```

use std::collections::BTreeSet;

use serde_json::{Map, Value};

use super::{
    Attribute, Element, ElementKind, Literal, ProvDocument, ProvError, QualifiedName, Relation,
    RelationKind, Timestamp,
};

/// Writes `value` with sorted keys and no insignificant whitespace.
pub fn write_canonical(value: &Value, out: &mut Vec<u8>) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push(b'{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                serde_json::to_writer(&mut *out, key).expect("string encoding");
                out.push(b':');
                write_canonical(&map[key], out);
            }
            out.push(b'}');
        }
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_canonical(item, out);
            }
            out.push(b']');
        }
        scalar => {
            serde_json::to_writer(&mut *out, scalar).expect("scalar encoding");
        }
    }
}

pub fn canonical_json(value: &Value) -> Vec<u8> {
    let mut out = Vec::new();
    write_canonical(value, &mut out);
    out
}

/// Canonical bytes of any serializable value.
pub fn canonical_bytes_of<T: serde::Serialize>(value: &T) -> Vec<u8> {
    canonical_json(&serde_json::to_value(value).expect("serializable value"))
}

fn attributes_json(attrs: &BTreeSet<Attribute>) -> Value {
    let mut items: Vec<(String, Value)> = attrs
        .iter()
        .map(|a| {
            let mut obj = Map::new();
            obj.insert("name".into(), Value::String(a.name.to_string()));
            obj.insert("type".into(), Value::String(a.value.type_tag().into()));
            obj.insert("value".into(), a.value.json_value());
            (a.name.to_string(), Value::Object(obj))
        })
        .collect();
    // canonical text only breaks ties between repeated names
    items.sort_by(|x, y| x.0.cmp(&y.0).then_with(|| canonical_json(&x.1).cmp(&canonical_json(&y.1))));
    Value::Array(items.into_iter().map(|(_, v)| v).collect())
}

fn element_json(e: &Element) -> Value {
    let mut obj = Map::new();
    obj.insert("id".into(), Value::String(e.id.to_string()));
    obj.insert("kind".into(), Value::String(e.kind.as_str().into()));
    obj.insert("attributes".into(), attributes_json(&e.attributes));
    if let Some(t) = e.start_time {
        obj.insert("startTime".into(), Value::String(t.to_string()));
    }
    if let Some(t) = e.end_time {
        obj.insert("endTime".into(), Value::String(t.to_string()));
    }
    Value::Object(obj)
}

fn relation_json(r: &Relation) -> Value {
    let mut obj = Map::new();
    obj.insert("kind".into(), Value::String(r.kind.as_str().into()));
    obj.insert("source".into(), Value::String(r.source.to_string()));
    obj.insert("target".into(), Value::String(r.target.to_string()));
    obj.insert("attributes".into(), attributes_json(&r.attributes));
    if let Some(t) = r.time {
        obj.insert("time".into(), Value::String(t.to_string()));
    }
    Value::Object(obj)
}

/// The interchange JSON value of a document, statements in canonical order.
pub fn document_json(doc: &ProvDocument) -> Value {
    let mut elements: Vec<(&str, String, Value)> = doc
        .elements()
        .map(|e| (e.kind.as_str(), e.id.to_string(), element_json(e)))
        .collect();
    elements.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));

    let mut relations: Vec<(&str, String, String, Value)> = doc
        .relations()
        .map(|r| (r.kind.as_str(), r.source.to_string(), r.target.to_string(), relation_json(r)))
        .collect();
    relations.sort_by(|a, b| {
        (a.0, &a.1, &a.2)
            .cmp(&(b.0, &b.1, &b.2))
            .then_with(|| canonical_json(&a.3).cmp(&canonical_json(&b.3)))
    });

    let namespaces: Map<String, Value> = doc
        .namespaces()
        .iter()
        .map(|(p, u)| (p.clone(), Value::String(u.clone())))
        .collect();

    let mut obj = Map::new();
    obj.insert("namespaces".into(), Value::Object(namespaces));
    obj.insert("elements".into(), Value::Array(elements.into_iter().map(|e| e.2).collect()));
    obj.insert("relations".into(), Value::Array(relations.into_iter().map(|r| r.3).collect()));
    Value::Object(obj)
}

/// Deterministic byte encoding, a pure function of the namespace and
/// statement sets. Written directly; equal to
/// `canonical_json(&document_json(doc))`.
pub fn canonical_bytes(doc: &ProvDocument) -> Vec<u8> {
    let mut out = Vec::with_capacity(256 * (doc.statement_count() + 1));
    out.extend_from_slice(b"{\"elements\":[");
    let mut elements: Vec<(&str, String, &Element)> =
        doc.elements().map(|e| (e.kind.as_str(), e.id.to_string(), e)).collect();
    elements.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
    for (i, (kind, id, e)) in elements.into_iter().enumerate() {
        if i > 0 {
            out.push(b',');
        }
        out.extend_from_slice(b"{\"attributes\":");
        write_attributes(&e.attributes, &mut out);
        if let Some(t) = e.end_time {
            out.extend_from_slice(b",\"endTime\":");
            write_str(&t.to_string(), &mut out);
        }
        out.extend_from_slice(b",\"id\":");
        write_str(&id, &mut out);
        out.extend_from_slice(b",\"kind\":");
        write_str(kind, &mut out);
        if let Some(t) = e.start_time {
            out.extend_from_slice(b",\"startTime\":");
            write_str(&t.to_string(), &mut out);
        }
        out.push(b'}');
    }
    out.extend_from_slice(b"],\"namespaces\":{");
    for (i, (p, u)) in doc.namespaces().iter().enumerate() {
        if i > 0 {
            out.push(b',');
        }
        write_str(p, &mut out);
        out.push(b':');
        write_str(u, &mut out);
    }
    out.extend_from_slice(b"},\"relations\":[");
    let mut relations: Vec<(&str, String, String, Vec<u8>)> = doc
        .relations()
        .map(|r| {
            let mut text = Vec::with_capacity(128);
            write_relation(r, &mut text);
            (r.kind.as_str(), r.source.to_string(), r.target.to_string(), text)
        })
        .collect();
    relations.sort_by(|a, b| (a.0, &a.1, &a.2, &a.3).cmp(&(b.0, &b.1, &b.2, &b.3)));
    for (i, r) in relations.into_iter().enumerate() {
        if i > 0 {
            out.push(b',');
        }
        out.extend_from_slice(&r.3);
    }
    out.extend_from_slice(b"]}");
    out
}

fn write_str(s: &str, out: &mut Vec<u8>) {
    serde_json::to_writer(&mut *out, s).expect("string encoding");
}

fn write_attribute(a: &Attribute, out: &mut Vec<u8>) {
    out.extend_from_slice(b"{\"name\":");
    write_str(&a.name.to_string(), out);
    out.extend_from_slice(b",\"type\":");
    write_str(a.value.type_tag(), out);
    out.extend_from_slice(b",\"value\":");
    match &a.value {
        Literal::String(s) => write_str(s, out),
        Literal::Integer(i) => out.extend_from_slice(i.to_string().as_bytes()),
        Literal::Boolean(b) => out.extend_from_slice(if *b { b"true" } else { b"false" }),
        other => serde_json::to_writer(&mut *out, &other.json_value()).expect("literal encoding"),
    }
    out.push(b'}');
}

fn write_attributes(attrs: &BTreeSet<Attribute>, out: &mut Vec<u8>) {
    let mut items: Vec<(String, Vec<u8>)> = attrs
        .iter()
        .map(|a| {
            let mut text = Vec::with_capacity(64);
            write_attribute(a, &mut text);
            (a.name.to_string(), text)
        })
        .collect();
    items.sort();
    out.push(b'[');
    for (i, (_, text)) in items.into_iter().enumerate() {
        if i > 0 {
            out.push(b',');
        }
        out.extend_from_slice(&text);
    }
    out.push(b']');
}

fn write_relation(r: &Relation, out: &mut Vec<u8>) {
    out.extend_from_slice(b"{\"attributes\":");
    write_attributes(&r.attributes, out);
    out.extend_from_slice(b",\"kind\":");
    write_str(r.kind.as_str(), out);
    out.extend_from_slice(b",\"source\":");
    write_str(&r.source.to_string(), out);
    out.extend_from_slice(b",\"target\":");
    write_str(&r.target.to_string(), out);
    if let Some(t) = r.time {
        out.extend_from_slice(b",\"time\":");
        write_str(&t.to_string(), out);
    }
    out.push(b'}');
}

/// Interchange text; identical to the canonical form.
pub fn encode_document(doc: &ProvDocument) -> String {
    String::from_utf8(canonical_bytes(doc)).expect("canonical JSON is UTF-8")
}

pub fn decode_document(text: &str) -> Result<ProvDocument, ProvError> {
    let value: Value = serde_json::from_str(text).map_err(|e| violation("$", e.to_string()))?;
    document_from_json(&value, "$")
}

pub(crate) fn violation(path: impl Into<String>, message: impl Into<String>) -> ProvError {
    ProvError::SchemaViolation {
        path: path.into(),
        message: message.into(),
    }
}

pub(crate) fn expect_object<'a>(value: &'a Value, path: &str) -> Result<&'a Map<String, Value>, ProvError> {
    value.as_object().ok_or_else(|| violation(path, "expected object"))
}

pub(crate) fn expect_array<'a>(value: &'a Value, path: &str) -> Result<&'a Vec<Value>, ProvError> {
    value.as_array().ok_or_else(|| violation(path, "expected array"))
}

pub(crate) fn expect_str<'a>(value: &'a Value, path: &str) -> Result<&'a str, ProvError> {
    value.as_str().ok_or_else(|| violation(path, "expected string"))
}

pub(crate) fn reject_unknown_keys(
    obj: &Map<String, Value>,
    allowed: &[&str],
    path: &str,
) -> Result<(), ProvError> {
    for key in obj.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(violation(format!("{path}.{key}"), "unexpected key"));
        }
    }
    Ok(())
}

fn qname_at(value: &Value, path: &str) -> Result<QualifiedName, ProvError> {
    expect_str(value, path)?
        .parse()
        .map_err(|e: ProvError| violation(path, e.to_string()))
}

fn timestamp_at(value: &Value, path: &str) -> Result<Timestamp, ProvError> {
    Timestamp::parse(expect_str(value, path)?).map_err(|e| violation(path, e.to_string()))
}

fn attributes_from_json(value: Option<&Value>, path: &str) -> Result<BTreeSet<Attribute>, ProvError> {
    let mut out = BTreeSet::new();
    let Some(value) = value else { return Ok(out) };
    for (i, item) in expect_array(value, path)?.iter().enumerate() {
        let p = format!("{path}[{i}]");
        let obj = expect_object(item, &p)?;
        reject_unknown_keys(obj, &["name", "type", "value"], &p)?;
        let name = qname_at(obj.get("name").ok_or_else(|| violation(&p, "missing `name`"))?, &format!("{p}.name"))?;
        let tag = expect_str(obj.get("type").ok_or_else(|| violation(&p, "missing `type`"))?, &format!("{p}.type"))?;
        let raw = obj.get("value").ok_or_else(|| violation(&p, "missing `value`"))?;
        let value = Literal::from_parts(tag, raw).map_err(|m| violation(format!("{p}.value"), m))?;
        out.insert(Attribute { name, value });
    }
    Ok(out)
}

pub(crate) fn element_from_json(value: &Value, path: &str) -> Result<Element, ProvError> {
    let obj = expect_object(value, path)?;
    reject_unknown_keys(obj, &["id", "kind", "attributes", "startTime", "endTime"], path)?;
    let id = qname_at(obj.get("id").ok_or_else(|| violation(path, "missing `id`"))?, &format!("{path}.id"))?;
    let kind_str = expect_str(obj.get("kind").ok_or_else(|| violation(path, "missing `kind`"))?, &format!("{path}.kind"))?;
    let kind = ElementKind::parse(kind_str)
        .ok_or_else(|| violation(format!("{path}.kind"), format!("unknown element kind `{kind_str}`")))?;
    let attributes = attributes_from_json(obj.get("attributes"), &format!("{path}.attributes"))?;
    let start_time = obj.get("startTime").map(|v| timestamp_at(v, &format!("{path}.startTime"))).transpose()?;
    let end_time = obj.get("endTime").map(|v| timestamp_at(v, &format!("{path}.endTime"))).transpose()?;
    Ok(Element {
        id,
        kind,
        attributes,
        start_time,
        end_time,
    })
}

pub(crate) fn relation_from_json(value: &Value, path: &str) -> Result<Relation, ProvError> {
    let obj = expect_object(value, path)?;
    reject_unknown_keys(obj, &["kind", "source", "target", "time", "attributes"], path)?;
    let kind_str = expect_str(obj.get("kind").ok_or_else(|| violation(path, "missing `kind`"))?, &format!("{path}.kind"))?;
    let kind = RelationKind::parse(kind_str)
        .ok_or_else(|| violation(format!("{path}.kind"), format!("unknown relation kind `{kind_str}`")))?;
    let source = qname_at(obj.get("source").ok_or_else(|| violation(path, "missing `source`"))?, &format!("{path}.source"))?;
    let target = qname_at(obj.get("target").ok_or_else(|| violation(path, "missing `target`"))?, &format!("{path}.target"))?;
    let time = obj.get("time").map(|v| timestamp_at(v, &format!("{path}.time"))).transpose()?;
    let attributes = attributes_from_json(obj.get("attributes"), &format!("{path}.attributes"))?;
    Ok(Relation {
        kind,
        source,
        target,
        time,
        attributes,
    })
}

/// Options for decoding a document-shaped JSON object.
pub(crate) struct DecodeOptions<'a> {
    /// Extra top-level keys tolerated (e.g. `zones` for templates).
    pub extra_keys: &'a [&'a str],
    /// Reject any repeated element id, even an identical one.
    pub strict_ids: bool,
    /// Resolve prefixes against the namespace table.
    pub check_prefixes: bool,
}

pub(crate) fn document_from_json_with(
    value: &Value,
    path: &str,
    opts: &DecodeOptions<'_>,
) -> Result<ProvDocument, ProvError> {
    let obj = expect_object(value, path)?;
    let mut allowed = vec!["namespaces", "elements", "relations"];
    allowed.extend_from_slice(opts.extra_keys);
    reject_unknown_keys(obj, &allowed, path)?;

    let mut doc = ProvDocument::new();
    if let Some(ns) = obj.get("namespaces") {
        let p = format!("{path}.namespaces");
        for (prefix, uri) in expect_object(ns, &p)? {
            let pp = format!("{p}.{prefix}");
            let uri = expect_str(uri, &pp)?;
            doc.add_namespace(prefix, uri).map_err(|e| violation(&pp, e.to_string()))?;
        }
    }

    let mut elements = Vec::new();
    if let Some(els) = obj.get("elements") {
        let p = format!("{path}.elements");
        for (i, item) in expect_array(els, &p)?.iter().enumerate() {
            let ep = format!("{p}[{i}]");
            elements.push((ep.clone(), element_from_json(item, &ep)?));
        }
    }
    let mut relations = Vec::new();
    if let Some(rels) = obj.get("relations") {
        let p = format!("{path}.relations");
        for (i, item) in expect_array(rels, &p)?.iter().enumerate() {
            let rp = format!("{p}[{i}]");
            relations.push((rp.clone(), relation_from_json(item, &rp)?));
        }
    }

    for (p, element) in elements {
        if opts.strict_ids && doc.element(&element.id).is_some() {
            return Err(violation(format!("{p}.id"), format!("duplicate element id {}", element.id)));
        }
        if opts.check_prefixes {
            doc.insert(element).map_err(|e| violation(&p, e.to_string()))?;
        } else if let Some(existing) = doc.element(&element.id) {
            if *existing != element {
                return Err(violation(&p, ProvError::DuplicateElementId(element.id).to_string()));
            }
        } else {
            doc.elements_mut().insert(element.id.clone(), element);
        }
    }
    for (p, relation) in relations {
        if opts.check_prefixes {
            doc.insert(relation).map_err(|e| violation(&p, e.to_string()))?;
        } else {
            doc.relations_mut().insert(relation);
        }
    }
    if !opts.check_prefixes {
        doc.validate_structure().map_err(|e| violation(path, e.to_string()))?;
    }
    Ok(doc)
}

pub fn document_from_json(value: &Value, path: &str) -> Result<ProvDocument, ProvError> {
    document_from_json_with(
        value,
        path,
        &DecodeOptions {
            extra_keys: &[],
            strict_ids: false,
            check_prefixes: true,
        },
    )
}
