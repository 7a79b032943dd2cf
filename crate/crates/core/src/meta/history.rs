use std::collections::{BTreeMap, HashMap};

use super::{substitution_id, ActionEffects, ActionName, MetaError, MetaTemplateSet, ServiceCall};
use crate::prov::{ElementKind, Literal, ProvDocument, QualifiedName, Relation, RelationKind, Timestamp};
use crate::template::{instantiate, Substitution};

pub const HIST_PREFIX: &str = "hist";
const TEMPLATES_URI: &str = "urn:provnr:templates#";

fn meta(local: &str) -> QualifiedName {
    QualifiedName::of("meta", local)
}

fn hist(local: &str) -> QualifiedName {
    QualifiedName::of(HIST_PREFIX, local)
}

/// What a history document tracks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HistorySubject {
    /// One object document, by id.
    Document(String),
    /// The server's template uploads.
    Templates,
}

impl HistorySubject {
    fn namespace_uri(&self) -> String {
        match self {
            HistorySubject::Document(id) => format!("urn:provnr:history:{id}#"),
            HistorySubject::Templates => TEMPLATES_URI.to_string(),
        }
    }
}

/// An action just appended to a history.
#[derive(Clone, Debug)]
pub struct RecordedAction {
    pub number: u64,
    pub id: QualifiedName,
    pub name: ActionName,
    /// The instantiated meta-template, i.e. this action's meta-provenance.
    pub fragment: ProvDocument,
}

/// One action as read back from a history document.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionRecord {
    pub number: u64,
    pub id: QualifiedName,
    pub name: ActionName,
    pub start: Option<Timestamp>,
    pub end: Timestamp,
    /// `meta:` annotations other than name and number, keyed by local name.
    pub annotations: BTreeMap<String, Literal>,
    pub template_id: Option<String>,
    pub substitution_id: Option<String>,
    pub fragment_id: Option<String>,
}

impl ActionRecord {
    pub fn annotation_str(&self, local: &str) -> Option<&str> {
        self.annotations.get(local).and_then(Literal::as_str)
    }
}

/// Meta-provenance trace: one `meta:Action` activity per recorded call,
/// numbered 1..N.
#[derive(Clone, Debug)]
pub struct HistoryDocument {
    subject: HistorySubject,
    doc: ProvDocument,
    actions: u64,
    last_end: Option<Timestamp>,
}

impl HistoryDocument {
    pub fn new(subject: HistorySubject) -> Self {
        let mut doc = ProvDocument::new();
        doc.add_namespace(HIST_PREFIX, &subject.namespace_uri())
            .expect("fresh document");
        Self {
            subject,
            doc,
            actions: 0,
            last_end: None,
        }
    }

    pub fn subject(&self) -> &HistorySubject {
        &self.subject
    }

    pub fn document(&self) -> &ProvDocument {
        &self.doc
    }

    pub fn into_document(self) -> ProvDocument {
        self.doc
    }

    /// Merges statements attached to existing actions, such as evidence.
    /// The history is unchanged on error.
    pub(crate) fn graft(&mut self, fragment: &ProvDocument) -> Result<(), MetaError> {
        self.doc = self.doc.merge(fragment)?;
        Ok(())
    }

    pub fn action_count(&self) -> u64 {
        self.actions
    }

    pub fn action_id(number: u64) -> QualifiedName {
        hist(&format!("action-{number}"))
    }

    /// Instantiates the meta-template for `call.action` and merges it.
    /// The end time is clamped so end times never decrease along the trace.
    pub fn record_action(
        &mut self,
        call: &ServiceCall,
        effects: &ActionEffects,
        ended_at: Timestamp,
    ) -> Result<RecordedAction, MetaError> {
        let is_template_history = self.subject == HistorySubject::Templates;
        if is_template_history != (call.action == ActionName::NewTemplate) {
            return Err(MetaError::UnknownHistory);
        }
        if !is_template_history && (call.action == ActionName::NewDocument) != (self.actions == 0) {
            return Err(MetaError::InvalidHistory(format!(
                "{} cannot be action {}",
                call.action,
                self.actions + 1
            )));
        }
        let number = self.actions + 1;
        let template = MetaTemplateSet::get().action(call.action);
        let needs = |v: &str| template.fixed_variables().contains(&QualifiedName::of("var", v));
        let missing = |what: &str| MetaError::InvalidHistory(format!("{} without {what}", call.action));

        let end = [Some(ended_at), self.last_end, Some(call.received_at)]
            .into_iter()
            .flatten()
            .max()
            .expect("non-empty");
        let action_id = Self::action_id(number);
        let mut s = Substitution::new()
            .bind(QualifiedName::of("var", "action"), action_id.clone())
            .bind(QualifiedName::of("vvar", "actionNumber"), number as i64)
            .bind(QualifiedName::of("vvar", "startTime"), call.received_at)
            .bind(QualifiedName::of("vvar", "endTime"), end);
        if needs("document") {
            let HistorySubject::Document(doc_id) = &self.subject else {
                return Err(MetaError::UnknownHistory);
            };
            s = s
                .bind(QualifiedName::of("var", "document"), hist("document"))
                .bind(QualifiedName::of("vvar", "documentId"), doc_id.as_str());
        }
        if needs("template") {
            let id = effects.template_id.as_deref().ok_or_else(|| missing("a template"))?;
            s = s
                .bind(QualifiedName::of("var", "template"), hist(&format!("template-{id}")))
                .bind(QualifiedName::of("vvar", "templateId"), id);
        }
        if needs("substitution") {
            let sub = effects.substitution.as_ref().ok_or_else(|| missing("a substitution"))?;
            let id = substitution_id(sub);
            s = s
                .bind(QualifiedName::of("var", "substitution"), hist(&format!("substitution-{id}")))
                .bind(QualifiedName::of("vvar", "substitutionId"), id);
        }
        if needs("fragment") {
            let HistorySubject::Document(doc_id) = &self.subject else {
                return Err(MetaError::UnknownHistory);
            };
            s = s
                .bind(QualifiedName::of("var", "fragment"), hist(&format!("fragment-{number}")))
                .bind(QualifiedName::of("vvar", "fragmentId"), format!("{doc_id}-fragment-{number}"));
        }

        let mut fragment = instantiate(template, &s)?;
        fragment.add_namespace(HIST_PREFIX, &self.subject.namespace_uri())?;
        let action = fragment
            .elements_mut()
            .get_mut(&action_id)
            .expect("meta-template defines the action");
        for (name, value) in &effects.annotations {
            action
                .attributes
                .insert(crate::prov::Attribute::new(name.clone(), value.clone()));
        }
        self.doc = self.doc.merge(&fragment)?;
        self.actions = number;
        self.last_end = Some(end);
        Ok(RecordedAction {
            number,
            id: action_id,
            name: call.action,
            fragment,
        })
    }

    /// Rebuilds a history from its exported document, checking its
    /// invariants.
    pub fn from_document(doc: ProvDocument) -> Result<Self, MetaError> {
        let mut numbers: Vec<u64> = doc
            .elements()
            .filter(|e| e.kind == ElementKind::Activity && e.has_type(&meta("Action")))
            .map(|e| action_number(e.attribute(&meta("actionNumber"))).ok_or_else(|| bad_action(&e.id, "actionNumber")))
            .collect::<Result<_, _>>()?;
        numbers.sort_unstable();
        for (i, n) in numbers.iter().enumerate() {
            if *n != i as u64 + 1 {
                return Err(MetaError::BrokenChain { expected: i as u64 + 1 });
            }
        }
        doc.validate()?;

        let documents: Vec<_> = doc
            .elements()
            .filter(|e| e.kind == ElementKind::Entity && e.has_type(&meta("Document")))
            .collect();
        let subject = match documents.as_slice() {
            [] => HistorySubject::Templates,
            [d] => HistorySubject::Document(
                d.attribute(&meta("identifier"))
                    .and_then(Literal::as_str)
                    .ok_or_else(|| MetaError::InvalidHistory("meta:Document lacks meta:identifier".into()))?
                    .to_string(),
            ),
            _ => return Err(MetaError::InvalidHistory("more than one meta:Document entity".into())),
        };
        if doc.namespace_uri(HIST_PREFIX) != Some(subject.namespace_uri().as_str()) {
            return Err(MetaError::InvalidHistory("history namespace does not match its subject".into()));
        }
        let mut history = Self {
            subject,
            doc,
            actions: numbers.len() as u64,
            last_end: None,
        };
        let records = history.actions()?;
        for pair in records.windows(2) {
            if pair[1].end < pair[0].end {
                return Err(MetaError::InvalidHistory(format!(
                    "action {} ends before action {}",
                    pair[1].number, pair[0].number
                )));
            }
        }
        let templates_only = history.subject == HistorySubject::Templates;
        for r in &records {
            let expected_first = !templates_only && r.number == 1;
            if templates_only != (r.name == ActionName::NewTemplate)
                || (!templates_only && (r.name == ActionName::NewDocument) != expected_first)
            {
                return Err(MetaError::InvalidHistory(format!("action {} is {}", r.number, r.name)));
            }
        }
        history.last_end = records.last().map(|r| r.end);
        Ok(history)
    }

    /// All actions in number order.
    pub fn actions(&self) -> Result<Vec<ActionRecord>, MetaError> {
        let mut by_action: HashMap<&QualifiedName, Vec<&Relation>> = HashMap::new();
        for r in self.doc.relations() {
            match r.kind {
                RelationKind::Used => by_action.entry(&r.source).or_default().push(r),
                RelationKind::WasGeneratedBy => by_action.entry(&r.target).or_default().push(r),
                _ => {}
            }
        }
        let identifier_of = |id: &QualifiedName, ty: &str| -> Option<String> {
            let e = self.doc.element(id)?;
            if !e.has_type(&meta(ty)) {
                return None;
            }
            e.attribute(&meta("identifier")).and_then(Literal::as_str).map(str::to_string)
        };
        let reserved = [meta("actionName"), meta("actionNumber")];
        let mut out = Vec::with_capacity(self.actions as usize);
        for e in self
            .doc
            .elements()
            .filter(|e| e.kind == ElementKind::Activity && e.has_type(&meta("Action")))
        {
            let number = action_number(e.attribute(&meta("actionNumber"))).ok_or_else(|| bad_action(&e.id, "actionNumber"))?;
            let name: ActionName = e
                .attribute(&meta("actionName"))
                .and_then(Literal::as_str)
                .ok_or_else(|| bad_action(&e.id, "actionName"))?
                .parse()?;
            let end = e.end_time.ok_or_else(|| bad_action(&e.id, "end time"))?;
            let annotations = e
                .attributes
                .iter()
                .filter(|a| a.name.prefix() == "meta" && !reserved.contains(&a.name))
                .map(|a| (a.name.local().to_string(), a.value.clone()))
                .collect();
            let mut record = ActionRecord {
                number,
                id: e.id.clone(),
                name,
                start: e.start_time,
                end,
                annotations,
                template_id: None,
                substitution_id: None,
                fragment_id: None,
            };
            for r in by_action.get(&e.id).into_iter().flatten() {
                match r.kind {
                    RelationKind::Used => {
                        if let Some(id) = identifier_of(&r.target, "Template") {
                            record.template_id = Some(id);
                        } else if let Some(id) = identifier_of(&r.target, "Substitution") {
                            record.substitution_id = Some(id);
                        }
                    }
                    RelationKind::WasGeneratedBy => {
                        if let Some(id) = identifier_of(&r.source, "Fragment") {
                            record.fragment_id = Some(id);
                        } else if let Some(id) = identifier_of(&r.source, "Template") {
                            record.template_id = Some(id);
                        }
                    }
                    _ => {}
                }
            }
            out.push(record);
        }
        out.sort_by_key(|r| r.number);
        Ok(out)
    }
}

fn action_number(lit: Option<&Literal>) -> Option<u64> {
    lit.and_then(Literal::as_integer).and_then(|n| u64::try_from(n).ok())
}

fn bad_action(id: &QualifiedName, what: &str) -> MetaError {
    MetaError::InvalidHistory(format!("{id} lacks a valid {what}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(action: ActionName, millis: i64) -> ServiceCall {
        ServiceCall {
            call_id: format!("c{millis}"),
            action,
            client_id: "client".into(),
            user_id: "patient".into(),
            received_at: Timestamp::from_millis(millis).unwrap(),
        }
    }

    fn ts(millis: i64) -> Timestamp {
        Timestamp::from_millis(millis).unwrap()
    }

    fn sample() -> HistoryDocument {
        let mut h = HistoryDocument::new(HistorySubject::Document("d1".into()));
        h.record_action(
            &call(ActionName::NewDocument, 1000),
            &ActionEffects::default().annotate("defaultUrl", "http://example.org/"),
            ts(1001),
        )
        .unwrap();
        h.record_action(
            &call(ActionName::AddNamespace, 1002),
            &ActionEffects::default().annotate("prefix", "ex").annotate("uri", "http://example.org/"),
            ts(1003),
        )
        .unwrap();
        h.record_action(
            &call(ActionName::RegisterTemplate, 1004),
            &ActionEffects {
                template_id: Some("t1".into()),
                ..Default::default()
            },
            ts(1005),
        )
        .unwrap();
        let sub = Substitution::new().bind("vvar:x".parse().unwrap(), 1i64);
        h.record_action(
            &call(ActionName::Generate, 1006),
            &ActionEffects {
                template_id: Some("t1".into()),
                substitution: Some(sub),
                annotations: vec![],
            },
            ts(1007),
        )
        .unwrap();
        h
    }

    #[test]
    fn new_document_is_action_one() {
        let mut h = HistoryDocument::new(HistorySubject::Document("d1".into()));
        let rec = h
            .record_action(&call(ActionName::NewDocument, 5), &ActionEffects::default(), ts(6))
            .unwrap();
        assert_eq!(rec.number, 1);
        assert_eq!(rec.fragment.element_count(), 2);
        let actions = h.actions().unwrap();
        assert_eq!(actions.len(), 1);
        assert_eq!(actions[0].name, ActionName::NewDocument);
        assert_eq!(actions[0].end, ts(6));
        let docs: Vec<_> = h.document().elements().filter(|e| e.has_type(&meta("Document"))).collect();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].attribute(&meta("identifier")), Some(&Literal::string("d1")));
    }

    #[test]
    fn contiguous_numbers_and_links() {
        let h = sample();
        let actions = h.actions().unwrap();
        let numbers: Vec<u64> = actions.iter().map(|a| a.number).collect();
        assert_eq!(numbers, [1, 2, 3, 4]);
        assert_eq!(actions[0].annotation_str("defaultUrl"), Some("http://example.org/"));
        assert_eq!(actions[1].annotation_str("prefix"), Some("ex"));
        assert_eq!(actions[2].template_id.as_deref(), Some("t1"));
        let g = &actions[3];
        assert_eq!(g.template_id.as_deref(), Some("t1"));
        assert!(g.substitution_id.as_deref().unwrap().starts_with("sub-"));
        assert_eq!(g.fragment_id.as_deref(), Some("d1-fragment-4"));
    }

    #[test]
    fn reload_roundtrip() {
        let h = sample();
        let text = crate::prov::encode_document(h.document());
        let back = HistoryDocument::from_document(crate::prov::decode_document(&text).unwrap()).unwrap();
        assert_eq!(back.action_count(), 4);
        assert_eq!(back.subject(), &HistorySubject::Document("d1".into()));
        assert_eq!(back.actions().unwrap(), h.actions().unwrap());
    }

    #[test]
    fn deleting_an_action_breaks_the_chain() {
        let h = sample();
        let mut doc = h.into_document();
        doc.remove_element(&HistoryDocument::action_id(3)).unwrap();
        assert_eq!(
            HistoryDocument::from_document(doc).unwrap_err(),
            MetaError::BrokenChain { expected: 3 }
        );
    }

    #[test]
    fn end_times_never_decrease() {
        let mut h = HistoryDocument::new(HistorySubject::Document("d".into()));
        h.record_action(&call(ActionName::NewDocument, 100), &ActionEffects::default(), ts(500))
            .unwrap();
        h.record_action(
            &call(ActionName::AddNamespace, 200),
            &ActionEffects::default().annotate("prefix", "a").annotate("uri", "urn:a"),
            ts(300),
        )
        .unwrap();
        let a = h.actions().unwrap();
        assert!(a[1].end >= a[0].end);
    }

    #[test]
    fn wrong_history_kind_rejected() {
        let mut h = HistoryDocument::new(HistorySubject::Templates);
        assert_eq!(
            h.record_action(&call(ActionName::NewDocument, 1), &ActionEffects::default(), ts(2))
                .unwrap_err(),
            MetaError::UnknownHistory
        );
        h.record_action(
            &call(ActionName::NewTemplate, 1),
            &ActionEffects {
                template_id: Some("t9".into()),
                ..Default::default()
            },
            ts(2),
        )
        .unwrap();
        let back = HistoryDocument::from_document(h.document().clone()).unwrap();
        assert_eq!(back.actions().unwrap()[0].template_id.as_deref(), Some("t9"));
    }
}
