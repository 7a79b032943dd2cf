use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use super::{Bindings, Scope, Substitution, Template, TemplateError};
use crate::prov::{Attribute, Element, ElementKind, Literal, ProvDocument, QualifiedName, Relation};

/// Result of checking a substitution against a template.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CheckReport {
    /// Fixed-part variables without a binding.
    pub unbound: Vec<QualifiedName>,
    /// Bindings that match no fixed-part variable.
    pub extraneous: Vec<QualifiedName>,
    /// Identifier variables bound to something other than a qualified name.
    pub type_mismatches: Vec<QualifiedName>,
    /// Problems with zone iterations, one line each.
    pub zone_issues: Vec<String>,
}

impl CheckReport {
    pub fn is_clean(&self) -> bool {
        self.unbound.is_empty()
            && self.extraneous.is_empty()
            && self.type_mismatches.is_empty()
            && self.zone_issues.is_empty()
    }

    fn first_error(&self) -> Option<TemplateError> {
        if let Some(v) = self.unbound.first() {
            return Some(TemplateError::UnboundVariable(v.clone()));
        }
        if let Some(v) = self.extraneous.first() {
            return Some(TemplateError::ExtraneousBinding(v.clone()));
        }
        if let Some(v) = self.type_mismatches.first() {
            return Some(TemplateError::TypeMismatch {
                variable: v.clone(),
                expected: "qualified name",
            });
        }
        None
    }
}

struct CoverageReport {
    unbound: Vec<QualifiedName>,
    extraneous: Vec<QualifiedName>,
    type_mismatches: Vec<QualifiedName>,
}

fn coverage(expected: &BTreeSet<QualifiedName>, bindings: &Bindings) -> CoverageReport {
    CoverageReport {
        unbound: expected.iter().filter(|v| !bindings.contains_key(v)).cloned().collect(),
        extraneous: bindings.keys().filter(|v| !expected.contains(v)).cloned().collect(),
        type_mismatches: bindings
            .iter()
            .filter(|(v, lit)| v.is_identifier_variable() && lit.as_qname().is_none())
            .map(|(v, _)| v.clone())
            .collect(),
    }
}

pub fn check_substitution(template: &Template, substitution: &Substitution) -> CheckReport {
    let fixed = coverage(template.fixed_variables(), &substitution.bindings);
    let mut report = CheckReport {
        unbound: fixed.unbound,
        extraneous: fixed.extraneous,
        type_mismatches: fixed.type_mismatches,
        zone_issues: Vec::new(),
    };
    for (i, zb) in substitution.zone_bindings.iter().enumerate() {
        let Some(expected) = template.zone_variables(&zb.zone) else {
            report.zone_issues.push(format!("iteration {i}: unknown zone `{}`", zb.zone));
            continue;
        };
        let c = coverage(expected, &zb.bindings);
        for v in c.unbound {
            report.zone_issues.push(format!("iteration {i} of `{}`: {v} unbound", zb.zone));
        }
        for v in c.extraneous {
            report.zone_issues.push(format!("iteration {i} of `{}`: {v} extraneous", zb.zone));
        }
        for v in c.type_mismatches {
            report.zone_issues.push(format!("iteration {i} of `{}`: {v} must bind a qualified name", zb.zone));
        }
    }
    report
}

/// How variables and constant zone identifiers resolve in one pass.
struct Resolver<'a> {
    fixed: &'a Bindings,
    zone: Option<(&'a Bindings, String)>,
}

impl Resolver<'_> {
    fn suffix(&self) -> Option<&str> {
        self.zone.as_ref().map(|(_, s)| s.as_str())
    }

    fn lookup(&self, var: &QualifiedName) -> Result<Literal, TemplateError> {
        if let Some((zone, suffix)) = &self.zone {
            if let Some(lit) = zone.get(var) {
                return Ok(match lit {
                    Literal::QName(q) if var.is_identifier_variable() => Literal::QName(q.with_local_suffix(suffix)),
                    other => other.clone(),
                });
            }
        }
        self.fixed
            .get(var)
            .cloned()
            .ok_or_else(|| TemplateError::UnboundVariable(var.clone()))
    }

    fn identifier(&self, id: &QualifiedName, in_zone: bool) -> Result<QualifiedName, TemplateError> {
        if id.is_identifier_variable() {
            match self.lookup(id)? {
                Literal::QName(q) => Ok(q),
                _ => Err(TemplateError::TypeMismatch {
                    variable: id.clone(),
                    expected: "qualified name",
                }),
            }
        } else if in_zone {
            Ok(id.with_local_suffix(self.suffix().unwrap_or("")))
        } else {
            Ok(id.clone())
        }
    }

    fn value(&self, lit: &Literal) -> Result<Literal, TemplateError> {
        match lit {
            Literal::QName(q) if q.is_variable() => {
                let bound = self.lookup(q)?;
                if q.is_identifier_variable() && bound.as_qname().is_none() {
                    return Err(TemplateError::TypeMismatch {
                        variable: q.clone(),
                        expected: "qualified name",
                    });
                }
                Ok(bound)
            }
            other => Ok(other.clone()),
        }
    }
}

fn prov_name(local: &str) -> QualifiedName {
    QualifiedName::of("prov", local)
}

fn timing_value(name: &QualifiedName, lit: Literal) -> Result<crate::prov::Timestamp, TemplateError> {
    lit.as_timestamp().ok_or(TemplateError::TypeMismatch {
        variable: name.clone(),
        expected: "timestamp",
    })
}

fn instantiate_element(template: &Template, element: &Element, r: &Resolver<'_>) -> Result<Element, TemplateError> {
    let in_zone = matches!(template.element_scope(&element.id), Scope::Zone(_));
    let mut out = Element::new(element.kind, r.identifier(&element.id, in_zone)?);
    out.start_time = element.start_time;
    out.end_time = element.end_time;
    let (start, end) = (prov_name("start"), prov_name("end"));
    for attr in &element.attributes {
        let value = r.value(&attr.value)?;
        if attr.name == start || attr.name == end {
            if element.kind != ElementKind::Activity {
                return Err(TemplateError::ValidationFailure(format!(
                    "{} on non-activity {}",
                    attr.name, element.id
                )));
            }
            let t = timing_value(&attr.name, value)?;
            if attr.name == start {
                out.start_time = Some(t);
            } else {
                out.end_time = Some(t);
            }
        } else {
            out.attributes.insert(Attribute::new(attr.name.clone(), value));
        }
    }
    Ok(out)
}

fn instantiate_relation(template: &Template, relation: &Relation, r: &Resolver<'_>) -> Result<Relation, TemplateError> {
    let endpoint = |id: &QualifiedName| {
        let in_zone = matches!(template.element_scope(id), Scope::Zone(_));
        r.identifier(id, in_zone)
    };
    let mut out = Relation::new(relation.kind, endpoint(&relation.source)?, endpoint(&relation.target)?);
    out.time = relation.time;
    let time = prov_name("time");
    for attr in &relation.attributes {
        let value = r.value(&attr.value)?;
        if attr.name == time {
            out.time = Some(timing_value(&attr.name, value)?);
        } else {
            out.attributes.insert(Attribute::new(attr.name.clone(), value));
        }
    }
    Ok(out)
}

/// Instantiates every statement in `scope`. Returns an unvalidated fragment
/// carrying the template's namespaces.
fn instantiate_scope(template: &Template, scope: &Scope, r: &Resolver<'_>) -> Result<ProvDocument, TemplateError> {
    let mut fragment = ProvDocument::new();
    *fragment.namespaces_mut() = template.body().namespaces().clone();
    for element in template.body().elements() {
        if &template.element_scope(&element.id) != scope {
            continue;
        }
        let inst = instantiate_element(template, element, r)?;
        match fragment.elements_mut().get_mut(&inst.id) {
            Some(existing) if existing.kind == inst.kind => {
                // two template variables bound to the same identifier
                existing.attributes.extend(inst.attributes);
                existing.start_time = existing.start_time.or(inst.start_time);
                existing.end_time = existing.end_time.or(inst.end_time);
            }
            Some(_) => {
                return Err(TemplateError::ValidationFailure(format!(
                    "{} instantiated with conflicting kinds",
                    inst.id
                )))
            }
            None => {
                fragment.elements_mut().insert(inst.id.clone(), inst);
            }
        }
    }
    for relation in template.body().relations() {
        if &template.relation_scope(relation) != scope {
            continue;
        }
        let inst = instantiate_relation(template, relation, r)?;
        fragment.relations_mut().insert(inst);
    }
    Ok(fragment)
}

fn leftover_variable(doc: &ProvDocument) -> Option<QualifiedName> {
    let attr_var = |a: &Attribute| a.value.as_qname().filter(|q| q.is_variable()).cloned();
    doc.elements()
        .find_map(|e| {
            if e.id.is_variable() {
                Some(e.id.clone())
            } else {
                e.attributes.iter().find_map(attr_var)
            }
        })
        .or_else(|| {
            doc.relations().find_map(|r| {
                [&r.source, &r.target]
                    .into_iter()
                    .find(|q| q.is_variable())
                    .cloned()
                    .or_else(|| r.attributes.iter().find_map(attr_var))
            })
        })
}

fn finish(fragment: ProvDocument) -> Result<ProvDocument, TemplateError> {
    if let Some(v) = leftover_variable(&fragment) {
        // a binding whose value is itself a variable name
        return Err(TemplateError::ValidationFailure(format!("variable {v} left in output")));
    }
    fragment
        .validate_structure()
        .map_err(|e| TemplateError::ValidationFailure(e.to_string()))?;
    Ok(fragment)
}

/// One-shot instantiation of a zone-free template.
pub fn instantiate(template: &Template, substitution: &Substitution) -> Result<ProvDocument, TemplateError> {
    if template.has_zones() {
        return Err(TemplateError::ZonedTemplate);
    }
    let report = check_substitution(template, substitution);
    if let Some(err) = report.first_error() {
        return Err(err);
    }
    if let Some(issue) = report.zone_issues.first() {
        return Err(TemplateError::ValidationFailure(issue.clone()));
    }
    let resolver = Resolver {
        fixed: &substitution.bindings,
        zone: None,
    };
    finish(instantiate_scope(template, &Scope::Fixed, &resolver)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SessionState {
    Open,
    Finalised,
}

/// Incremental instantiation of a zoned template.
#[derive(Clone, Debug)]
pub struct FragmentSession {
    id: String,
    template: Arc<Template>,
    fixed: Bindings,
    fragment: ProvDocument,
    iterations: BTreeMap<String, u32>,
    state: SessionState,
}

impl FragmentSession {
    /// Instantiates the fixed part, then any zone iterations carried in
    /// `substitution.zone_bindings`, in order.
    pub fn begin(
        id: impl Into<String>,
        template: Arc<Template>,
        substitution: &Substitution,
    ) -> Result<Self, TemplateError> {
        if !template.has_zones() {
            return Err(TemplateError::NoZones);
        }
        let report = check_substitution(&template, substitution);
        if let Some(err) = report.first_error() {
            return Err(err);
        }
        let resolver = Resolver {
            fixed: &substitution.bindings,
            zone: None,
        };
        let fragment = instantiate_scope(&template, &Scope::Fixed, &resolver)?;
        let mut session = Self {
            id: id.into(),
            template,
            fixed: substitution.bindings.clone(),
            fragment,
            iterations: BTreeMap::new(),
            state: SessionState::Open,
        };
        for zb in &substitution.zone_bindings {
            session.add_zone_iteration(&zb.zone, &zb.bindings)?;
        }
        Ok(session)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn template(&self) -> &Arc<Template> {
        &self.template
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn iterations(&self, zone: &str) -> u32 {
        self.iterations.get(zone).copied().unwrap_or(0)
    }

    /// The fragment accumulated so far.
    pub fn fragment(&self) -> &ProvDocument {
        &self.fragment
    }

    /// Instantiates iteration `k = previous + 1` of `zone`. The session is
    /// unchanged on error.
    pub fn add_zone_iteration(&mut self, zone: &str, bindings: &Bindings) -> Result<(), TemplateError> {
        if self.state != SessionState::Open {
            return Err(TemplateError::SessionClosed);
        }
        let expected = self
            .template
            .zone_variables(zone)
            .ok_or_else(|| TemplateError::UnknownZone(zone.to_string()))?;
        let c = coverage(expected, bindings);
        if let Some(v) = c.unbound.first() {
            return Err(TemplateError::UnboundVariable(v.clone()));
        }
        if let Some(v) = c.extraneous.first() {
            return Err(TemplateError::ExtraneousBinding(v.clone()));
        }
        if let Some(v) = c.type_mismatches.first() {
            return Err(TemplateError::TypeMismatch {
                variable: v.clone(),
                expected: "qualified name",
            });
        }
        let k = self.iterations(zone) + 1;
        let resolver = Resolver {
            fixed: &self.fixed,
            zone: Some((bindings, format!(".{k}"))),
        };
        let part = instantiate_scope(&self.template, &Scope::Zone(zone.to_string()), &resolver)?;
        let mut merged = self.fragment.clone();
        merge_structural(&mut merged, &part)?;
        self.fragment = merged;
        self.iterations.insert(zone.to_string(), k);
        Ok(())
    }

    /// Closes the session and returns the validated fragment.
    pub fn finalise(&mut self) -> Result<ProvDocument, TemplateError> {
        if self.state != SessionState::Open {
            return Err(TemplateError::SessionClosed);
        }
        let fragment = finish(self.fragment.clone())?;
        self.state = SessionState::Finalised;
        Ok(fragment)
    }
}

/// Merge that defers namespace resolution to the target document.
fn merge_structural(into: &mut ProvDocument, part: &ProvDocument) -> Result<(), TemplateError> {
    for element in part.elements() {
        match into.elements_mut().get_mut(&element.id) {
            None => {
                into.elements_mut().insert(element.id.clone(), element.clone());
            }
            Some(existing) if existing.kind == element.kind => {
                existing.attributes.extend(element.attributes.iter().cloned());
            }
            Some(_) => {
                return Err(TemplateError::ValidationFailure(format!(
                    "zone iteration redefines {} with a different kind",
                    element.id
                )))
            }
        }
    }
    into.relations_mut().extend(part.relations().cloned());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prov::{RelationKind, Timestamp};
    use crate::template::tests::chatbot_template;

    fn q(s: &str) -> QualifiedName {
        s.parse().unwrap()
    }

    fn two_var_template() -> Template {
        let mut body = ProvDocument::new();
        body.insert(Element::entity(q("var:p")).with_attribute(q("prov:label"), q("vvar:t"))).unwrap();
        Template::new(body).unwrap()
    }

    #[test]
    fn check_reports() {
        let t = two_var_template();
        let full = Substitution::new().bind(q("var:p"), q("ex:p")).bind(q("vvar:t"), "x");
        assert!(check_substitution(&t, &full).is_clean());

        let partial = Substitution::new().bind(q("var:p"), q("ex:p"));
        let r = check_substitution(&t, &partial);
        assert_eq!(r.unbound, vec![q("vvar:t")]);

        let extra = full.clone().bind(q("var:q"), q("ex:q"));
        let r = check_substitution(&t, &extra);
        assert_eq!(r.extraneous, vec![q("var:q")]);
        assert!(r.unbound.is_empty());
    }

    #[test]
    fn constant_template_instantiates_to_itself() {
        let body = ProvDocument::new()
            .with_namespace("ex", "http://example.org/")
            .unwrap()
            .add_statement(Element::entity(q("ex:c")).with_attribute(q("ex:k"), 1i64))
            .unwrap();
        let t = Template::new(body.clone()).unwrap();
        assert_eq!(instantiate(&t, &Substitution::new()).unwrap(), body);
    }

    #[test]
    fn instantiate_errors() {
        let t = two_var_template();
        let partial = Substitution::new().bind(q("var:p"), q("ex:p"));
        assert_eq!(instantiate(&t, &partial), Err(TemplateError::UnboundVariable(q("vvar:t"))));
        let wrong = Substitution::new().bind(q("var:p"), "not-a-name").bind(q("vvar:t"), "x");
        assert!(matches!(instantiate(&t, &wrong), Err(TemplateError::TypeMismatch { .. })));
        assert_eq!(
            instantiate(&chatbot_template(), &Substitution::new()),
            Err(TemplateError::ZonedTemplate)
        );
    }

    #[test]
    fn timing_attributes_are_lifted() {
        let mut body = ProvDocument::new();
        body.insert(
            Element::activity(q("var:a"))
                .with_attribute(q("prov:start"), q("vvar:s"))
                .with_attribute(q("prov:end"), q("vvar:e")),
        )
        .unwrap();
        body.insert(Element::entity(q("var:x"))).unwrap();
        body.insert(
            Relation::new(RelationKind::Used, q("var:a"), q("var:x")).with_attribute(q("prov:time"), q("vvar:u")),
        )
        .unwrap();
        let t = Template::new(body).unwrap();
        let (t0, t1) = (Timestamp::from_millis(1000).unwrap(), Timestamp::from_millis(5000).unwrap());
        let s = Substitution::new()
            .bind(q("var:a"), q("ex:a"))
            .bind(q("var:x"), q("ex:x"))
            .bind(q("vvar:s"), t0)
            .bind(q("vvar:e"), t1)
            .bind(q("vvar:u"), t0);
        let frag = instantiate(&t, &s).unwrap();
        let a = frag.element(&q("ex:a")).unwrap();
        assert_eq!((a.start_time, a.end_time), (Some(t0), Some(t1)));
        assert!(a.attributes.is_empty());
        assert_eq!(frag.relations().next().unwrap().time, Some(t0));

        let bad = s.clone().bind(q("vvar:s"), "yesterday");
        assert!(matches!(instantiate(&t, &bad), Err(TemplateError::TypeMismatch { .. })));
    }

    fn fixed() -> Substitution {
        Substitution::new()
            .bind(q("var:patient"), q("ex:pat"))
            .bind(q("vvar:name"), "Ann")
            .bind(q("var:chat"), q("ex:chat"))
    }

    fn turn(n: u32) -> Bindings {
        Bindings::from([
            (q("var:answer"), Literal::QName(q("ex:ans"))),
            (q("vvar:text"), Literal::string(format!("answer {n}"))),
        ])
    }

    #[test]
    fn zero_iterations_yields_fixed_part() {
        let t = Arc::new(chatbot_template());
        let mut s = FragmentSession::begin("s1", t, &fixed()).unwrap();
        let frag = s.finalise().unwrap();
        assert_eq!(frag.element_count(), 2);
        assert_eq!(frag.relation_count(), 1);
    }

    #[test]
    fn zone_iterations_get_suffixed_ids() {
        let t = Arc::new(chatbot_template());
        let mut s = FragmentSession::begin("s1", t, &fixed()).unwrap();
        for n in 1..=3 {
            s.add_zone_iteration("turn", &turn(n)).unwrap();
        }
        let frag = s.finalise().unwrap();
        assert_eq!(frag.element_count(), 2 + 3);
        for k in 1..=3 {
            assert!(frag.element(&q(&format!("ex:ans.{k}"))).is_some());
        }
        assert_eq!(frag.relation_count(), 1 + 3);
    }

    #[test]
    fn session_state_machine() {
        let t = Arc::new(chatbot_template());
        let mut s = FragmentSession::begin("s1", t.clone(), &fixed()).unwrap();
        assert_eq!(s.add_zone_iteration("nope", &turn(1)), Err(TemplateError::UnknownZone("nope".into())));
        let mut missing = turn(1);
        missing.remove(&q("vvar:text"));
        assert_eq!(s.add_zone_iteration("turn", &missing), Err(TemplateError::UnboundVariable(q("vvar:text"))));
        assert_eq!(s.iterations("turn"), 0);
        s.finalise().unwrap();
        assert_eq!(s.add_zone_iteration("turn", &turn(1)), Err(TemplateError::SessionClosed));
        assert_eq!(s.finalise(), Err(TemplateError::SessionClosed));

        assert_eq!(
            FragmentSession::begin("s2", Arc::new(two_var_template()), &Substitution::new()).unwrap_err(),
            TemplateError::NoZones
        );
        let unbound = Substitution::new().bind(q("var:patient"), q("ex:pat"));
        assert!(matches!(
            FragmentSession::begin("s3", t, &unbound),
            Err(TemplateError::UnboundVariable(_))
        ));
    }
}
