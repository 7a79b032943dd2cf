use std::collections::HashMap;
use std::sync::Arc;

use super::{
    decode_substitution_document, ActionName, ActionRecord, Applied, HistoryDocument, MetaError, ObjectState,
    Operation, TemplateLookup,
};
use crate::prov::ProvDocument;
use crate::template::{Substitution, Template};

/// Where replay finds templates and substitution documents.
pub trait ReplaySource: TemplateLookup {
    fn substitution_document(&self, id: &str) -> Option<ProvDocument>;
}

#[derive(Clone, Debug, Default)]
pub struct MemoryStore {
    pub templates: HashMap<String, Arc<Template>>,
    pub substitutions: HashMap<String, ProvDocument>,
}

impl TemplateLookup for MemoryStore {
    fn template(&self, id: &str) -> Option<Arc<Template>> {
        self.templates.get(id).cloned()
    }
}

impl ReplaySource for MemoryStore {
    fn substitution_document(&self, id: &str) -> Option<ProvDocument> {
        self.substitutions.get(id).cloned()
    }
}

fn annotation(record: &ActionRecord, local: &str) -> Result<String, MetaError> {
    record
        .annotation_str(local)
        .map(str::to_string)
        .ok_or_else(|| MetaError::InvalidHistory(format!("action {} lacks meta:{local}", record.number)))
}

fn template_of(record: &ActionRecord, source: &dyn ReplaySource) -> Result<String, MetaError> {
    let id = record
        .template_id
        .clone()
        .ok_or_else(|| MetaError::InvalidHistory(format!("action {} references no template", record.number)))?;
    if source.template(&id).is_none() {
        return Err(MetaError::MissingTemplate(id));
    }
    Ok(id)
}

fn substitution_of(record: &ActionRecord, source: &dyn ReplaySource) -> Result<Substitution, MetaError> {
    let id = record
        .substitution_id
        .as_deref()
        .ok_or_else(|| MetaError::InvalidHistory(format!("action {} references no substitution", record.number)))?;
    let doc = source
        .substitution_document(id)
        .ok_or_else(|| MetaError::MissingSubstitution(id.to_string()))?;
    let (stored_id, substitution) = decode_substitution_document(&doc)?;
    if stored_id != id || super::substitution_id(&substitution) != id {
        return Err(MetaError::InvalidHistory(format!(
            "substitution document {id} does not match its identifier"
        )));
    }
    Ok(substitution)
}

/// The operation an action record describes.
fn operation(record: &ActionRecord, source: &dyn ReplaySource) -> Result<Operation, MetaError> {
    Ok(match record.name {
        ActionName::NewTemplate => {
            return Err(MetaError::InvalidHistory("newTemplate in a document history".into()));
        }
        ActionName::NewDocument => Operation::NewDocument {
            default_url: record.annotation_str("defaultUrl").map(str::to_string),
        },
        ActionName::AddNamespace => Operation::AddNamespace {
            prefix: annotation(record, "prefix")?,
            uri: annotation(record, "uri")?,
        },
        ActionName::RegisterTemplate => Operation::RegisterTemplate {
            template_id: template_of(record, source)?,
        },
        ActionName::Generate => Operation::Generate {
            template_id: template_of(record, source)?,
            substitution: substitution_of(record, source)?,
        },
        ActionName::GenerateInitialise => Operation::GenerateInitialise {
            template_id: template_of(record, source)?,
            session_id: annotation(record, "session")?,
            substitution: substitution_of(record, source)?,
        },
        ActionName::GenerateZone => {
            let mut s = substitution_of(record, source)?;
            let zone = annotation(record, "zone")?;
            let iteration = match (s.bindings.is_empty(), s.zone_bindings.len()) {
                (true, 1) => s.zone_bindings.remove(0),
                _ => {
                    return Err(MetaError::InvalidHistory(format!(
                        "action {} substitution is not a single zone iteration",
                        record.number
                    )))
                }
            };
            if iteration.zone != zone {
                return Err(MetaError::InvalidHistory(format!(
                    "action {} zone annotation disagrees with its substitution",
                    record.number
                )));
            }
            Operation::GenerateZone {
                session_id: annotation(record, "session")?,
                zone,
                bindings: iteration.bindings,
            }
        }
        ActionName::GenerateFinalise => Operation::GenerateFinalise {
            session_id: annotation(record, "session")?,
        },
    })
}

/// Replays actions 1..=`upto`, calling `visit` after each.
fn replay(
    history: &HistoryDocument,
    source: &dyn ReplaySource,
    upto: u64,
    mut visit: impl FnMut(u64, &Applied),
) -> Result<ObjectState, MetaError> {
    let records = history.actions()?;
    if records.first().map(|r| r.name) != Some(ActionName::NewDocument) {
        return Err(MetaError::UnknownHistory);
    }
    let mut state = ObjectState::default();
    for (i, record) in records.iter().take(upto as usize).enumerate() {
        if record.number != i as u64 + 1 {
            return Err(MetaError::BrokenChain { expected: i as u64 + 1 });
        }
        let op = operation(record, source)?;
        let applied = state.apply(&op, source).map_err(|source| MetaError::Replay {
            action: record.number,
            source,
        })?;
        visit(record.number, &applied);
    }
    Ok(state)
}

/// Rebuilds the object document from its history by replaying every action.
pub fn reconstruct_document(history: &HistoryDocument, source: &dyn ReplaySource) -> Result<ProvDocument, MetaError> {
    Ok(replay(history, source, history.action_count(), |_, _| {})?.doc)
}

/// The namespaces in force after action `to`, plus the statements merged by
/// actions `from..=to`. Actions before `from` are replayed internally to
/// recover registrations and open sessions. `(1, N)` equals
/// [`reconstruct_document`].
pub fn reconstruct_between(
    history: &HistoryDocument,
    from: u64,
    to: u64,
    source: &dyn ReplaySource,
) -> Result<ProvDocument, MetaError> {
    let actions = history.action_count();
    if from < 1 || from > to || to > actions {
        return Err(MetaError::BadRange { from, to, actions });
    }
    let mut fragments = Vec::new();
    let state = replay(history, source, to, |n, applied| {
        if n >= from {
            if let Some(f) = &applied.fragment {
                fragments.push(f.clone());
            }
        }
    })?;
    if from == 1 {
        return Ok(state.doc);
    }
    let mut out = ProvDocument::new();
    *out.namespaces_mut() = state.doc.namespaces().clone();
    for f in &fragments {
        out.merge_in_place(f)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meta::{persist_substitution, HistorySubject, ServiceCall};
    use crate::prov::{canonical_bytes, Element, QualifiedName, Timestamp};
    use crate::template::tests::chatbot_template;
    use crate::template::Bindings;

    fn q(s: &str) -> QualifiedName {
        s.parse().unwrap()
    }

    /// Drives live state and history together, as the service does.
    struct Harness {
        store: MemoryStore,
        state: ObjectState,
        history: HistoryDocument,
        clock: i64,
        snapshots: Vec<ProvDocument>,
    }

    impl Harness {
        fn new() -> Self {
            let mut h = Self {
                store: MemoryStore::default(),
                state: ObjectState::default(),
                history: HistoryDocument::new(HistorySubject::Document("doc".into())),
                clock: 1_700_000_000_000,
                snapshots: Vec::new(),
            };
            h.call(Operation::NewDocument { default_url: None }).unwrap();
            h
        }

        fn call(&mut self, op: Operation) -> Result<(), super::super::ObjectError> {
            let mut next = self.state.clone();
            let applied = next.apply(&op, &self.store)?;
            if let Some(s) = &applied.effects.substitution {
                let (id, doc) = persist_substitution(s);
                self.store.substitutions.insert(id, doc);
            }
            self.clock += 10;
            let call = ServiceCall {
                call_id: format!("call-{}", self.clock),
                action: op.action(),
                client_id: "c".into(),
                user_id: "p".into(),
                received_at: Timestamp::from_millis(self.clock).unwrap(),
            };
            self.history
                .record_action(&call, &applied.effects, Timestamp::from_millis(self.clock + 1).unwrap())
                .unwrap();
            self.state = next;
            self.snapshots.push(self.state.doc.clone());
            Ok(())
        }
    }

    fn simple_template() -> Template {
        let mut body = ProvDocument::new().with_namespace("ex", "http://example.org/").unwrap();
        body.insert(Element::entity(q("var:e")).with_attribute(q("ex:v"), q("vvar:v")))
            .unwrap();
        Template::new(body).unwrap()
    }

    #[test]
    fn only_new_document_gives_empty() {
        let h = Harness::new();
        let doc = reconstruct_document(&h.history, &h.store).unwrap();
        assert!(doc.is_empty());
        assert_eq!(reconstruct_between(&h.history, 1, 1, &h.store).unwrap(), doc);
    }

    #[test]
    fn replay_matches_live_and_snapshots() {
        let mut h = Harness::new();
        h.store.templates.insert("t".into(), Arc::new(simple_template()));
        h.store.templates.insert("chat".into(), Arc::new(chatbot_template()));
        h.call(Operation::AddNamespace {
            prefix: "ex".into(),
            uri: "http://example.org/".into(),
        })
        .unwrap();
        h.call(Operation::RegisterTemplate { template_id: "t".into() }).unwrap();
        h.call(Operation::RegisterTemplate { template_id: "chat".into() }).unwrap();
        for i in 0..3 {
            h.call(Operation::Generate {
                template_id: "t".into(),
                substitution: Substitution::new().bind(q("var:e"), q(&format!("ex:e{i}"))).bind(q("vvar:v"), i as i64),
            })
            .unwrap();
        }
        let chat = chatbot_template();
        let fixed: Substitution = chat
            .fixed_variables()
            .iter()
            .fold(Substitution::new(), |s, v| {
                if v.is_identifier_variable() {
                    s.bind(v.clone(), q(&format!("ex:{}", v.local())))
                } else {
                    s.bind(v.clone(), "x")
                }
            });
        h.call(Operation::GenerateInitialise {
            template_id: "chat".into(),
            session_id: "s1".into(),
            substitution: fixed,
        })
        .unwrap();
        let (zone, vars) = chat.zones().iter().next().map(|(z, _)| (z.clone(), chat.zone_variables(z).unwrap().clone())).unwrap();
        for k in 0..2 {
            let bindings: Bindings = vars
                .iter()
                .map(|v| {
                    let lit = if v.is_identifier_variable() {
                        crate::prov::Literal::QName(q(&format!("ex:{}{k}", v.local())))
                    } else {
                        crate::prov::Literal::string(format!("m{k}"))
                    };
                    (v.clone(), lit)
                })
                .collect();
            h.call(Operation::GenerateZone {
                session_id: "s1".into(),
                zone: zone.clone(),
                bindings,
            })
            .unwrap();
        }
        h.call(Operation::GenerateFinalise { session_id: "s1".into() }).unwrap();

        let n = h.history.action_count();
        assert_eq!(n as usize, h.snapshots.len());
        let replayed = reconstruct_document(&h.history, &h.store).unwrap();
        assert_eq!(canonical_bytes(&replayed), canonical_bytes(&h.state.doc));
        for k in 1..=n {
            let prefix = reconstruct_between(&h.history, 1, k, &h.store).unwrap();
            let live = &h.snapshots[k as usize - 1];
            assert_eq!(canonical_bytes(&prefix), canonical_bytes(live), "prefix {k}");
        }
        // the window covering only the last generate holds just its fragment
        let only = reconstruct_between(&h.history, 7, 7, &h.store).unwrap();
        assert_eq!(only.element_count(), 1);
        assert!(only.element(&q("ex:e2")).is_some());
        assert_eq!(
            reconstruct_between(&h.history, 3, 2, &h.store).unwrap_err(),
            MetaError::BadRange { from: 3, to: 2, actions: n }
        );

        // re-loading the exported history replays identically
        let reloaded = HistoryDocument::from_document(h.history.document().clone()).unwrap();
        assert_eq!(reconstruct_document(&reloaded, &h.store).unwrap(), replayed);
    }

    #[test]
    fn missing_inputs_are_reported() {
        let mut h = Harness::new();
        h.store.templates.insert("t".into(), Arc::new(simple_template()));
        h.call(Operation::RegisterTemplate { template_id: "t".into() }).unwrap();
        h.call(Operation::Generate {
            template_id: "t".into(),
            substitution: Substitution::new().bind(q("var:e"), q("ex:a")).bind(q("vvar:v"), 1i64),
        })
        .unwrap();
        let mut no_subs = h.store.clone();
        no_subs.substitutions.clear();
        assert!(matches!(
            reconstruct_document(&h.history, &no_subs),
            Err(MetaError::MissingSubstitution(_))
        ));
        let mut no_templates = h.store.clone();
        no_templates.templates.clear();
        assert_eq!(
            reconstruct_document(&h.history, &no_templates).unwrap_err(),
            MetaError::MissingTemplate("t".into())
        );
    }
}
