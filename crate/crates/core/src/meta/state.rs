use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use super::{ActionEffects, ActionName};
use crate::prov::{ProvDocument, ProvError};
use crate::template::{instantiate, Bindings, FragmentSession, Substitution, Template, TemplateError};

pub trait TemplateLookup {
    fn template(&self, id: &str) -> Option<Arc<Template>>;
}

impl<F: Fn(&str) -> Option<Arc<Template>>> TemplateLookup for F {
    fn template(&self, id: &str) -> Option<Arc<Template>> {
        self(id)
    }
}

/// A document-level action with its inputs. `newTemplate` is not
/// document-level and has no variant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Operation {
    NewDocument { default_url: Option<String> },
    AddNamespace { prefix: String, uri: String },
    RegisterTemplate { template_id: String },
    Generate { template_id: String, substitution: Substitution },
    GenerateInitialise { template_id: String, session_id: String, substitution: Substitution },
    GenerateZone { session_id: String, zone: String, bindings: Bindings },
    GenerateFinalise { session_id: String },
}

impl Operation {
    pub fn action(&self) -> ActionName {
        match self {
            Operation::NewDocument { .. } => ActionName::NewDocument,
            Operation::AddNamespace { .. } => ActionName::AddNamespace,
            Operation::RegisterTemplate { .. } => ActionName::RegisterTemplate,
            Operation::Generate { .. } => ActionName::Generate,
            Operation::GenerateInitialise { .. } => ActionName::GenerateInitialise,
            Operation::GenerateZone { .. } => ActionName::GenerateZone,
            Operation::GenerateFinalise { .. } => ActionName::GenerateFinalise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ObjectError {
    #[error("unknown template {0}")]
    UnknownTemplate(String),
    #[error("template {0} is not registered with this document")]
    TemplateNotRegistered(String),
    #[error("unknown fragment session {0}")]
    UnknownSession(String),
    #[error("document already created")]
    AlreadyCreated,
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Prov(#[from] ProvError),
}

/// Object-level state of one document: what live calls mutate and what
/// replay rebuilds.
#[derive(Clone, Debug, Default)]
pub struct ObjectState {
    pub created: bool,
    pub doc: ProvDocument,
    pub registered: BTreeSet<String>,
    pub sessions: BTreeMap<String, OpenSession>,
    pub default_url: Option<String>,
}

impl ObjectState {
    /// Applies `op` in place. On error the state may be partially modified;
    /// callers apply to a clone and commit on success.
    pub fn apply(&mut self, op: &Operation, templates: &dyn TemplateLookup) -> Result<Applied, ObjectError> {
        let registered_template = |state: &Self, id: &str| -> Result<Arc<Template>, ObjectError> {
            let t = templates
                .template(id)
                .ok_or_else(|| ObjectError::UnknownTemplate(id.to_string()))?;
            if !state.registered.contains(id) {
                return Err(ObjectError::TemplateNotRegistered(id.to_string()));
            }
            Ok(t)
        };
        let mut effects = ActionEffects::default();
        let mut fragment = None;
        match op {
            Operation::NewDocument { default_url } => {
                if self.created {
                    return Err(ObjectError::AlreadyCreated);
                }
                self.created = true;
                self.default_url = default_url.clone();
                if let Some(url) = default_url {
                    effects = effects.annotate("defaultUrl", url.as_str());
                }
            }
            Operation::AddNamespace { prefix, uri } => {
                self.doc.add_namespace(prefix, uri)?;
                effects = effects.annotate("prefix", prefix.as_str()).annotate("uri", uri.as_str());
            }
            Operation::RegisterTemplate { template_id } => {
                if templates.template(template_id).is_none() {
                    return Err(ObjectError::UnknownTemplate(template_id.clone()));
                }
                self.registered.insert(template_id.clone());
                effects.template_id = Some(template_id.clone());
            }
            Operation::Generate {
                template_id,
                substitution,
            } => {
                let t = registered_template(self, template_id)?;
                let frag = instantiate(&t, substitution)?;
                self.doc.merge_in_place(&frag)?;
                fragment = Some(frag);
                effects.template_id = Some(template_id.clone());
                effects.substitution = Some(substitution.clone());
            }
            Operation::GenerateInitialise {
                template_id,
                session_id,
                substitution,
            } => {
                let t = registered_template(self, template_id)?;
                let session = FragmentSession::begin(session_id.clone(), t, substitution)?;
                self.sessions.insert(
                    session_id.clone(),
                    OpenSession {
                        template_id: template_id.clone(),
                        session,
                    },
                );
                effects.template_id = Some(template_id.clone());
                effects.substitution = Some(substitution.clone());
                effects = effects.annotate("session", session_id.as_str());
            }
            Operation::GenerateZone {
                session_id,
                zone,
                bindings,
            } => {
                let open = self
                    .sessions
                    .get_mut(session_id)
                    .ok_or_else(|| ObjectError::UnknownSession(session_id.clone()))?;
                open.session.add_zone_iteration(zone, bindings)?;
                effects.template_id = Some(open.template_id.clone());
                effects.substitution = Some(Substitution::for_zone(zone.clone(), bindings.clone()));
                effects = effects
                    .annotate("session", session_id.as_str())
                    .annotate("zone", zone.as_str())
                    .annotate("iteration", i64::from(open.session.iterations(zone)));
            }
            Operation::GenerateFinalise { session_id } => {
                let open = self
                    .sessions
                    .get_mut(session_id)
                    .ok_or_else(|| ObjectError::UnknownSession(session_id.clone()))?;
                let frag = open.session.finalise()?;
                let template_id = open.template_id.clone();
                self.doc.merge_in_place(&frag)?;
                self.sessions.remove(session_id);
                fragment = Some(frag);
                effects.template_id = Some(template_id);
                effects = effects.annotate("session", session_id.as_str());
            }
        }
        Ok(Applied { effects, fragment })
    }
}

#[derive(Clone, Debug)]
pub struct OpenSession {
    pub template_id: String,
    pub session: FragmentSession,
}

/// Result of a successful [`ObjectState::apply`].
#[derive(Clone, Debug)]
pub struct Applied {
    pub effects: ActionEffects,
    /// Fragment merged into the object document, if any.
    pub fragment: Option<ProvDocument>,
}
