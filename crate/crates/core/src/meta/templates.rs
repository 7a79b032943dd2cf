//! Built-in meta-templates, one per service action plus the substitution
//! and evidence templates.

use std::sync::OnceLock;

use super::ActionName;
use crate::prov::{Element, ProvDocument, QualifiedName, Relation, RelationKind};
use crate::template::Template;

fn q(s: &str) -> QualifiedName {
    s.parse().expect("static name")
}

fn typed_entity(var: &str, ty: &str) -> Element {
    Element::entity(q(var)).with_attribute(q("prov:type"), q(ty))
}

fn identified_entity(var: &str, ty: &str, id_var: &str) -> Element {
    typed_entity(var, ty).with_attribute(q("meta:identifier"), q(id_var))
}

fn action_activity(name: ActionName) -> Element {
    Element::activity(q("var:action"))
        .with_attribute(q("prov:type"), q("meta:Action"))
        .with_attribute(q("meta:actionName"), name.as_str())
        .with_attribute(q("meta:actionNumber"), q("vvar:actionNumber"))
        .with_attribute(q("prov:start"), q("vvar:startTime"))
        .with_attribute(q("prov:end"), q("vvar:endTime"))
}

fn rel(kind: RelationKind, s: &str, t: &str) -> Relation {
    Relation::new(kind, q(s), q(t))
}

fn build(statements: Vec<crate::prov::Statement>) -> Template {
    let mut body = ProvDocument::new();
    for s in statements {
        body.insert(s).expect("meta-template statement");
    }
    Template::new(body).expect("meta-template validates")
}

fn action_template(name: ActionName) -> Template {
    use RelationKind::*;
    let document = || identified_entity("var:document", "meta:Document", "vvar:documentId").into();
    let template = || identified_entity("var:template", "meta:Template", "vvar:templateId").into();
    let substitution = || identified_entity("var:substitution", "meta:Substitution", "vvar:substitutionId").into();
    let fragment = || identified_entity("var:fragment", "meta:Fragment", "vvar:fragmentId").into();
    let mut s: Vec<crate::prov::Statement> = vec![action_activity(name).into()];
    match name {
        ActionName::NewTemplate => {
            s.push(template());
            s.push(rel(WasGeneratedBy, "var:template", "var:action").into());
        }
        ActionName::NewDocument => {
            s.push(document());
            s.push(rel(WasGeneratedBy, "var:document", "var:action").into());
        }
        ActionName::AddNamespace => {
            s.push(document());
            s.push(rel(Used, "var:action", "var:document").into());
        }
        ActionName::RegisterTemplate => {
            s.extend([document(), template()]);
            s.push(rel(Used, "var:action", "var:document").into());
            s.push(rel(Used, "var:action", "var:template").into());
        }
        ActionName::Generate => {
            s.extend([document(), template(), substitution(), fragment()]);
            s.push(rel(Used, "var:action", "var:document").into());
            s.push(rel(Used, "var:action", "var:template").into());
            s.push(rel(Used, "var:action", "var:substitution").into());
            s.push(rel(WasGeneratedBy, "var:fragment", "var:action").into());
            s.push(rel(WasDerivedFrom, "var:document", "var:fragment").into());
        }
        ActionName::GenerateInitialise | ActionName::GenerateZone => {
            s.extend([document(), template(), substitution()]);
            s.push(rel(Used, "var:action", "var:document").into());
            s.push(rel(Used, "var:action", "var:template").into());
            s.push(rel(Used, "var:action", "var:substitution").into());
        }
        ActionName::GenerateFinalise => {
            s.extend([document(), template(), fragment()]);
            s.push(rel(Used, "var:action", "var:document").into());
            s.push(rel(Used, "var:action", "var:template").into());
            s.push(rel(WasGeneratedBy, "var:fragment", "var:action").into());
            s.push(rel(WasDerivedFrom, "var:document", "var:fragment").into());
        }
    }
    build(s)
}

fn new_substitution_template() -> Template {
    build(vec![identified_entity("var:substitution", "meta:Substitution", "vvar:substitutionId")
        .with_attribute(q("meta:zoneSequence"), q("vvar:zoneSequence"))
        .into()])
}

fn add_binding_template() -> Template {
    build(vec![
        Element::entity(q("var:substitution")).into(),
        typed_entity("var:binding", "meta:Binding")
            .with_attribute(q("meta:variable"), q("vvar:variable"))
            .with_attribute(q("meta:valueType"), q("vvar:valueType"))
            .with_attribute(q("meta:value"), q("vvar:value"))
            .with_attribute(q("meta:position"), q("vvar:position"))
            .with_attribute(q("meta:iteration"), q("vvar:iteration"))
            .into(),
        rel(RelationKind::WasDerivedFrom, "var:substitution", "var:binding").into(),
    ])
}

/// Evidence captured for one action; `var:action` is the graft point onto
/// the action activity recorded by the meta-provenance template.
fn evidence_template() -> Template {
    use RelationKind::*;
    build(vec![
        Element::activity(q("var:action")).into(),
        typed_entity("var:serviceCall", "meta:ServiceCall")
            .with_attribute(q("meta:identifier"), q("vvar:callId"))
            .with_attribute(q("meta:clientId"), q("vvar:clientId"))
            .with_attribute(q("meta:userId"), q("vvar:userId"))
            .with_attribute(q("meta:receivedAt"), q("vvar:receivedAt"))
            .into(),
        typed_entity("var:tokenHeader", "meta:TokenHeader")
            .with_attribute(q("meta:identifier"), q("vvar:tokenId"))
            .with_attribute(q("meta:timestamp"), q("vvar:timestamp"))
            .with_attribute(q("meta:tsaId"), q("vvar:tsaId"))
            .with_attribute(q("meta:notaryId"), q("vvar:notaryId"))
            .into(),
        typed_entity("var:tokenContent", "meta:TokenContent")
            .with_attribute(q("meta:payloadHash"), q("vvar:payloadHash"))
            .into(),
        typed_entity("var:signature", "meta:Signature")
            .with_attribute(q("meta:signatureValue"), q("vvar:signatureValue"))
            .with_attribute(q("meta:certificate"), q("vvar:certificate"))
            .into(),
        Element::activity(q("var:signToken"))
            .with_attribute(q("prov:type"), q("meta:SignToken"))
            .into(),
        rel(Used, "var:action", "var:serviceCall").into(),
        rel(WasInformedBy, "var:signToken", "var:action").into(),
        rel(Used, "var:signToken", "var:tokenHeader").into(),
        rel(Used, "var:signToken", "var:tokenContent").into(),
        rel(WasGeneratedBy, "var:signature", "var:signToken").into(),
    ])
}

/// The read-only set of templates the server instantiates internally.
pub struct MetaTemplateSet {
    actions: Vec<(ActionName, Template)>,
    pub new_substitution: Template,
    pub add_binding: Template,
    pub evidence: Template,
}

impl MetaTemplateSet {
    pub fn get() -> &'static MetaTemplateSet {
        static SET: OnceLock<MetaTemplateSet> = OnceLock::new();
        SET.get_or_init(|| MetaTemplateSet {
            actions: ActionName::ALL.iter().map(|&a| (a, action_template(a))).collect(),
            new_substitution: new_substitution_template(),
            add_binding: add_binding_template(),
            evidence: evidence_template(),
        })
    }

    pub fn action(&self, name: ActionName) -> &Template {
        &self
            .actions
            .iter()
            .find(|(a, _)| *a == name)
            .expect("every action has a meta-template")
            .1
    }
}
