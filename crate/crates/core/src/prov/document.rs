use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::name::builtin_uri;
use super::{Literal, ProvError, QualifiedName, Timestamp};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum ElementKind {
    Entity,
    Activity,
    Agent,
}

impl ElementKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ElementKind::Entity => "Entity",
            ElementKind::Activity => "Activity",
            ElementKind::Agent => "Agent",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Entity" => Some(ElementKind::Entity),
            "Activity" => Some(ElementKind::Activity),
            "Agent" => Some(ElementKind::Agent),
            _ => None,
        }
    }
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum RelationKind {
    Used,
    WasGeneratedBy,
    WasAssociatedWith,
    WasAttributedTo,
    WasDerivedFrom,
    WasInformedBy,
    SpecializationOf,
    AlternateOf,
}

impl RelationKind {
    pub const ALL: [RelationKind; 8] = [
        RelationKind::Used,
        RelationKind::WasGeneratedBy,
        RelationKind::WasAssociatedWith,
        RelationKind::WasAttributedTo,
        RelationKind::WasDerivedFrom,
        RelationKind::WasInformedBy,
        RelationKind::SpecializationOf,
        RelationKind::AlternateOf,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RelationKind::Used => "used",
            RelationKind::WasGeneratedBy => "wasGeneratedBy",
            RelationKind::WasAssociatedWith => "wasAssociatedWith",
            RelationKind::WasAttributedTo => "wasAttributedTo",
            RelationKind::WasDerivedFrom => "wasDerivedFrom",
            RelationKind::WasInformedBy => "wasInformedBy",
            RelationKind::SpecializationOf => "specializationOf",
            RelationKind::AlternateOf => "alternateOf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Required (source, target) element kinds.
    pub fn endpoint_kinds(&self) -> (ElementKind, ElementKind) {
        use ElementKind::*;
        match self {
            RelationKind::Used => (Activity, Entity),
            RelationKind::WasGeneratedBy => (Entity, Activity),
            RelationKind::WasAssociatedWith => (Activity, Agent),
            RelationKind::WasAttributedTo => (Entity, Agent),
            RelationKind::WasDerivedFrom => (Entity, Entity),
            RelationKind::WasInformedBy => (Activity, Activity),
            RelationKind::SpecializationOf => (Entity, Entity),
            RelationKind::AlternateOf => (Entity, Entity),
        }
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Attribute {
    pub name: QualifiedName,
    pub value: Literal,
}

impl Attribute {
    pub fn new(name: QualifiedName, value: impl Into<Literal>) -> Self {
        Self { name, value: value.into() }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Element {
    pub id: QualifiedName,
    pub kind: ElementKind,
    pub attributes: BTreeSet<Attribute>,
    pub start_time: Option<Timestamp>,
    pub end_time: Option<Timestamp>,
}

impl Element {
    pub fn new(kind: ElementKind, id: QualifiedName) -> Self {
        Self {
            id,
            kind,
            attributes: BTreeSet::new(),
            start_time: None,
            end_time: None,
        }
    }

    pub fn entity(id: QualifiedName) -> Self {
        Self::new(ElementKind::Entity, id)
    }

    pub fn activity(id: QualifiedName) -> Self {
        Self::new(ElementKind::Activity, id)
    }

    pub fn agent(id: QualifiedName) -> Self {
        Self::new(ElementKind::Agent, id)
    }

    pub fn with_attribute(mut self, name: QualifiedName, value: impl Into<Literal>) -> Self {
        self.attributes.insert(Attribute::new(name, value));
        self
    }

    pub fn with_times(mut self, start: Option<Timestamp>, end: Option<Timestamp>) -> Self {
        self.start_time = start;
        self.end_time = end;
        self
    }

    /// First value of the named attribute, in attribute order.
    pub fn attribute(&self, name: &QualifiedName) -> Option<&Literal> {
        self.attributes.iter().find(|a| &a.name == name).map(|a| &a.value)
    }

    pub fn has_type(&self, ty: &QualifiedName) -> bool {
        let prov_type = QualifiedName::of("prov", "type");
        self.attributes
            .iter()
            .any(|a| a.name == prov_type && a.value.as_qname() == Some(ty))
    }

    fn check_timing(&self) -> Result<(), ProvError> {
        if self.kind != ElementKind::Activity && (self.start_time.is_some() || self.end_time.is_some()) {
            return Err(ProvError::InvalidTiming(self.id.clone()));
        }
        if let (Some(s), Some(e)) = (self.start_time, self.end_time) {
            if s > e {
                return Err(ProvError::InvalidTiming(self.id.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Relation {
    pub kind: RelationKind,
    pub source: QualifiedName,
    pub target: QualifiedName,
    pub time: Option<Timestamp>,
    pub attributes: BTreeSet<Attribute>,
}

impl Relation {
    pub fn new(kind: RelationKind, source: QualifiedName, target: QualifiedName) -> Self {
        Self {
            kind,
            source,
            target,
            time: None,
            attributes: BTreeSet::new(),
        }
    }

    pub fn with_attribute(mut self, name: QualifiedName, value: impl Into<Literal>) -> Self {
        self.attributes.insert(Attribute::new(name, value));
        self
    }

    pub fn with_time(mut self, time: Timestamp) -> Self {
        self.time = Some(time);
        self
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({}, {})", self.kind, self.source, self.target)
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Statement {
    Element(Element),
    Relation(Relation),
}

impl From<Element> for Statement {
    fn from(e: Element) -> Self {
        Statement::Element(e)
    }
}

impl From<Relation> for Statement {
    fn from(r: Relation) -> Self {
        Statement::Relation(r)
    }
}

/// A PROV graph: namespaces, elements keyed by id, and a relation set.
///
/// Equality is statement-set equality. Documents carry no identifier of
/// their own; the service keys them externally.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct ProvDocument {
    namespaces: BTreeMap<String, String>,
    elements: BTreeMap<QualifiedName, Element>,
    relations: BTreeSet<Relation>,
}

impl ProvDocument {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn namespaces(&self) -> &BTreeMap<String, String> {
        &self.namespaces
    }

    pub fn elements(&self) -> impl Iterator<Item = &Element> {
        self.elements.values()
    }

    pub fn element(&self, id: &QualifiedName) -> Option<&Element> {
        self.elements.get(id)
    }

    pub fn relations(&self) -> impl Iterator<Item = &Relation> {
        self.relations.iter()
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn statement_count(&self) -> usize {
        self.elements.len() + self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.namespaces.is_empty() && self.elements.is_empty() && self.relations.is_empty()
    }

    /// Resolves a prefix against the declared table, then the built-ins.
    pub fn namespace_uri(&self, prefix: &str) -> Option<&str> {
        self.namespaces
            .get(prefix)
            .map(String::as_str)
            .or_else(|| builtin_uri(prefix))
    }

    /// Declares a namespace. Returns `false` when the identical pair was
    /// already in effect.
    pub fn add_namespace(&mut self, prefix: &str, uri: &str) -> Result<bool, ProvError> {
        if prefix.is_empty() || prefix.contains(':') || uri.is_empty() {
            return Err(ProvError::InvalidName(format!("namespace {prefix} = {uri}")));
        }
        match self.namespace_uri(prefix) {
            Some(existing) if existing == uri => Ok(false),
            Some(existing) => Err(ProvError::NamespaceClash {
                prefix: prefix.to_string(),
                existing: existing.to_string(),
                incoming: uri.to_string(),
            }),
            None => {
                self.namespaces.insert(prefix.to_string(), uri.to_string());
                Ok(true)
            }
        }
    }

    pub fn with_namespace(mut self, prefix: &str, uri: &str) -> Result<Self, ProvError> {
        self.add_namespace(prefix, uri)?;
        Ok(self)
    }

    /// Inserts one statement. The document is untouched on error.
    pub fn insert(&mut self, stmt: impl Into<Statement>) -> Result<(), ProvError> {
        match stmt.into() {
            Statement::Element(e) => self.insert_element(e),
            Statement::Relation(r) => self.insert_relation(r),
        }
    }

    /// Functional form of [`ProvDocument::insert`].
    pub fn add_statement(&self, stmt: impl Into<Statement>) -> Result<Self, ProvError> {
        let mut doc = self.clone();
        doc.insert(stmt)?;
        Ok(doc)
    }

    fn insert_element(&mut self, element: Element) -> Result<(), ProvError> {
        self.check_element(&element, true)?;
        match self.elements.get(&element.id) {
            Some(existing) if *existing == element => Ok(()),
            Some(_) => Err(ProvError::DuplicateElementId(element.id)),
            None => {
                self.elements.insert(element.id.clone(), element);
                Ok(())
            }
        }
    }

    fn insert_relation(&mut self, relation: Relation) -> Result<(), ProvError> {
        self.check_relation(&relation, true)?;
        self.relations.insert(relation);
        Ok(())
    }

    fn check_prefix(&self, name: &QualifiedName) -> Result<(), ProvError> {
        if self.namespace_uri(name.prefix()).is_none() {
            return Err(ProvError::UnknownPrefix(name.prefix().to_string()));
        }
        Ok(())
    }

    fn check_attributes<'a>(
        &self,
        attrs: impl IntoIterator<Item = &'a Attribute>,
    ) -> Result<(), ProvError> {
        for attr in attrs {
            self.check_prefix(&attr.name)?;
            if let Literal::QName(q) = &attr.value {
                self.check_prefix(q)?;
            }
        }
        Ok(())
    }

    fn check_element(&self, element: &Element, prefixes: bool) -> Result<(), ProvError> {
        if prefixes {
            self.check_prefix(&element.id)?;
            self.check_attributes(&element.attributes)?;
        }
        element.check_timing()
    }

    fn check_relation(&self, relation: &Relation, prefixes: bool) -> Result<(), ProvError> {
        if prefixes {
            self.check_prefix(&relation.source)?;
            self.check_prefix(&relation.target)?;
            self.check_attributes(&relation.attributes)?;
        }
        let (want_src, want_dst) = relation.kind.endpoint_kinds();
        for (endpoint, want) in [(&relation.source, want_src), (&relation.target, want_dst)] {
            let found = self.elements.get(endpoint).ok_or_else(|| ProvError::DanglingEndpoint {
                relation: relation.to_string(),
                endpoint: endpoint.clone(),
            })?;
            if found.kind != want {
                return Err(ProvError::KindMismatch {
                    relation: relation.to_string(),
                    endpoint: endpoint.clone(),
                    expected: want,
                    found: found.kind,
                });
            }
        }
        Ok(())
    }

    /// Whole-document validation: prefixes, timing and relation typing.
    pub fn validate(&self) -> Result<(), ProvError> {
        self.validate_with(true)
    }

    /// Validation that skips namespace resolution, for fragments whose
    /// prefixes are resolved by the document they are merged into.
    pub fn validate_structure(&self) -> Result<(), ProvError> {
        self.validate_with(false)
    }

    fn validate_with(&self, prefixes: bool) -> Result<(), ProvError> {
        for (id, element) in &self.elements {
            debug_assert_eq!(id, &element.id);
            self.check_element(element, prefixes)?;
        }
        for relation in &self.relations {
            self.check_relation(relation, prefixes)?;
        }
        Ok(())
    }

    /// Union of two documents. Elements sharing an id and kind are unified
    /// with the union of their attributes.
    pub fn merge(&self, fragment: &ProvDocument) -> Result<ProvDocument, ProvError> {
        let mut out = self.clone();
        out.merge_in_place(fragment)?;
        Ok(out)
    }

    /// In-place merge. On error `self` may be partially updated; callers
    /// needing atomicity use [`ProvDocument::merge`].
    pub fn merge_in_place(&mut self, fragment: &ProvDocument) -> Result<(), ProvError> {
        for (prefix, uri) in &fragment.namespaces {
            self.add_namespace(prefix, uri)?;
        }
        for element in fragment.elements.values() {
            match self.elements.get_mut(&element.id) {
                None => {
                    self.elements.insert(element.id.clone(), element.clone());
                }
                Some(existing) => {
                    if existing.kind != element.kind {
                        return Err(ProvError::IdKindConflict(element.id.clone()));
                    }
                    existing.start_time = unify_time(&element.id, existing.start_time, element.start_time)?;
                    existing.end_time = unify_time(&element.id, existing.end_time, element.end_time)?;
                    existing.attributes.extend(element.attributes.iter().cloned());
                }
            }
        }
        self.relations.extend(fragment.relations.iter().cloned());
        // only the statements that arrived need re-checking
        for element in fragment.elements.values() {
            self.check_element(&self.elements[&element.id], true)?;
        }
        for relation in &fragment.relations {
            self.check_relation(relation, true)?;
        }
        Ok(())
    }

    /// Removes an element and every relation touching it.
    pub fn remove_element(&mut self, id: &QualifiedName) -> Option<Element> {
        let removed = self.elements.remove(id)?;
        self.relations.retain(|r| &r.source != id && &r.target != id);
        Some(removed)
    }

    pub(crate) fn elements_mut(&mut self) -> &mut BTreeMap<QualifiedName, Element> {
        &mut self.elements
    }

    pub(crate) fn relations_mut(&mut self) -> &mut BTreeSet<Relation> {
        &mut self.relations
    }

    pub(crate) fn namespaces_mut(&mut self) -> &mut BTreeMap<String, String> {
        &mut self.namespaces
    }
}

fn unify_time(
    id: &QualifiedName,
    a: Option<Timestamp>,
    b: Option<Timestamp>,
) -> Result<Option<Timestamp>, ProvError> {
    match (a, b) {
        (Some(x), Some(y)) if x != y => Err(ProvError::TimingConflict(id.clone())),
        (x, y) => Ok(x.or(y)),
    }
}
