//! Document management service: templates, documents, fragment sessions,
//! with meta-provenance and non-repudiation hooks.
//!
//! Each mutating call runs under its document's lock, computes the new
//! object state and history on copies, notarizes, appends to the
//! document's write-ahead log, and only then commits. A failing call
//! changes nothing.

mod store;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use serde::Serialize;
use thiserror::Error;

use crate::evidence::{record_evidence, EvidenceError, EvidencePipeline, SignedToken, TokenInputs};
use crate::meta::{
    persist_substitution, reconstruct_between, reconstruct_document, ActionName, HistoryDocument, HistorySubject,
    MetaError, ObjectError, ObjectState, Operation, ReplaySource, ServiceCall, TemplateLookup,
};
use crate::prov::{encode_document, ProvDocument, ProvError, Timestamp};
use crate::template::{Bindings, Substitution, Template, TemplateError};
use store::{Layout, Wal, WalEntry, WalOp};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown document {0}")]
    UnknownDocument(String),
    #[error("unknown template {0}")]
    UnknownTemplate(String),
    #[error("template {0} is not registered with this document")]
    TemplateNotRegistered(String),
    #[error("unknown fragment session {0}")]
    UnknownSession(String),
    #[error("unknown token {0}")]
    UnknownToken(String),
    #[error("meta-provenance is disabled")]
    MetaProvenanceDisabled,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("storage failure: {0}")]
    Storage(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Prov(#[from] ProvError),
    #[error(transparent)]
    Meta(#[from] MetaError),
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
}

impl From<ObjectError> for ServiceError {
    fn from(e: ObjectError) -> Self {
        match e {
            ObjectError::UnknownTemplate(id) => ServiceError::UnknownTemplate(id),
            ObjectError::TemplateNotRegistered(id) => ServiceError::TemplateNotRegistered(id),
            ObjectError::UnknownSession(id) => ServiceError::UnknownSession(id),
            ObjectError::AlreadyCreated => ServiceError::Storage("document already created".into()),
            ObjectError::Template(e) => ServiceError::Template(e),
            ObjectError::Prov(e) => ServiceError::Prov(e),
        }
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Storage(e.to_string())
    }
}

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub service_id: String,
    pub meta_provenance: bool,
    /// fsync write-ahead logs and stored files.
    pub sync_writes: bool,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            service_id: "provnr".into(),
            meta_provenance: true,
            sync_writes: true,
        }
    }
}

/// Who is calling.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CallContext {
    pub client_id: String,
    pub user_id: String,
}

impl CallContext {
    pub fn new(client_id: impl Into<String>, user_id: impl Into<String>) -> Self {
        Self {
            client_id: client_id.into(),
            user_id: user_id.into(),
        }
    }
}

/// Response envelope: the result plus the token for the call, if any.
#[derive(Clone, Debug, Serialize)]
pub struct Response<T> {
    pub result: T,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub token: Option<SignedToken>,
}

struct DocumentEntry {
    state: ObjectState,
    history: Option<HistoryDocument>,
    tokens: BTreeMap<String, SignedToken>,
    wal: Wal,
}

struct TemplateLog {
    history: Option<HistoryDocument>,
    wal: Wal,
}

pub struct DocumentService {
    config: ServiceConfig,
    layout: Layout,
    pipeline: Option<EvidencePipeline>,
    templates: RwLock<HashMap<String, Arc<Template>>>,
    documents: RwLock<HashMap<String, Arc<Mutex<DocumentEntry>>>>,
    sessions: RwLock<HashMap<String, String>>,
    template_log: Mutex<TemplateLog>,
}

impl DocumentService {
    /// Opens the data directory and rebuilds all state from it. Evidence
    /// needs meta-provenance, so a pipeline without it is refused.
    pub fn open(config: ServiceConfig, pipeline: Option<EvidencePipeline>) -> Result<Self, ServiceError> {
        if pipeline.is_some() && !config.meta_provenance {
            return Err(ServiceError::Config(
                "non-repudiation requires meta-provenance to be enabled".into(),
            ));
        }
        let layout = Layout::create(&config.data_dir, config.sync_writes)?;
        let (wal, entries) = Wal::open(&layout.template_log(), layout.sync())?;
        let mut templates = HashMap::new();
        let mut history = config
            .meta_provenance
            .then(|| HistoryDocument::new(HistorySubject::Templates));
        for entry in &entries {
            let WalOp::NewTemplate { template_id } = &entry.op else {
                return Err(ServiceError::Storage("template log holds a document action".into()));
            };
            let t = layout.load_template(template_id).map_err(ServiceError::Storage)?;
            templates.insert(template_id.clone(), Arc::new(t));
            if let Some(h) = &mut history {
                h.record_action(&entry.call(), &template_effects(template_id), entry.ended_at)?;
            }
        }
        let service = Self {
            config,
            pipeline,
            templates: RwLock::new(templates),
            documents: RwLock::new(HashMap::new()),
            sessions: RwLock::new(HashMap::new()),
            template_log: Mutex::new(TemplateLog { history, wal }),
            layout,
        };
        for doc_id in service.layout.document_ids()? {
            service.load_document(&doc_id)?;
        }
        Ok(service)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn pipeline(&self) -> Option<&EvidencePipeline> {
        self.pipeline.as_ref()
    }

    fn load_document(&self, doc_id: &str) -> Result<(), ServiceError> {
        let (wal, entries) = Wal::open(&self.layout.document_log(doc_id), self.layout.sync())?;
        let mut doc = DocumentEntry {
            state: ObjectState::default(),
            history: self
                .config
                .meta_provenance
                .then(|| HistoryDocument::new(HistorySubject::Document(doc_id.to_string()))),
            tokens: BTreeMap::new(),
            wal,
        };
        let mut sessions = self.sessions.write().expect("sessions lock");
        for entry in entries {
            let op = entry
                .op
                .to_operation()
                .map_err(ServiceError::Storage)?
                .ok_or_else(|| ServiceError::Storage(format!("{doc_id}: newTemplate in a document log")))?;
            let applied = doc.state.apply(&op, &|id: &str| self.template(id))?;
            let call = entry.call();
            if let Some(h) = &mut doc.history {
                let action = h.record_action(&call, &applied.effects, entry.ended_at)?;
                if let Some(token) = &entry.token {
                    record_evidence(h, action.number, &call, token)?;
                }
            }
            match &op {
                Operation::GenerateInitialise { session_id, .. } => {
                    sessions.insert(session_id.clone(), doc_id.to_string());
                }
                Operation::GenerateFinalise { session_id } => {
                    sessions.remove(session_id);
                }
                _ => {}
            }
            if let Some(token) = entry.token {
                doc.tokens.insert(token.header.token_id.clone(), token);
            }
        }
        self.documents
            .write()
            .expect("documents lock")
            .insert(doc_id.to_string(), Arc::new(Mutex::new(doc)));
        Ok(())
    }

    pub fn template(&self, id: &str) -> Option<Arc<Template>> {
        self.templates.read().expect("templates lock").get(id).cloned()
    }

    pub fn template_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.templates.read().expect("templates lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn document_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.documents.read().expect("documents lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    fn document(&self, doc_id: &str) -> Result<Arc<Mutex<DocumentEntry>>, ServiceError> {
        self.documents
            .read()
            .expect("documents lock")
            .get(doc_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownDocument(doc_id.to_string()))
    }

    fn session_document(&self, session_id: &str) -> Result<String, ServiceError> {
        self.sessions
            .read()
            .expect("sessions lock")
            .get(session_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(session_id.to_string()))
    }

    fn call(ctx: &CallContext, action: ActionName) -> ServiceCall {
        ServiceCall {
            call_id: uuid::Uuid::new_v4().to_string(),
            action,
            client_id: ctx.client_id.clone(),
            user_id: ctx.user_id.clone(),
            received_at: Timestamp::now(),
        }
    }

    /// Uploads a template. Every upload gets a fresh id.
    pub fn new_template(&self, ctx: &CallContext, template: Template) -> Result<Response<String>, ServiceError> {
        let call = Self::call(ctx, ActionName::NewTemplate);
        let id = format!("tpl-{}", uuid::Uuid::new_v4().simple());
        let mut log = self.template_log.lock().expect("template log lock");
        let ended_at = Timestamp::now();
        let mut history = log.history.clone();
        if let Some(h) = &mut history {
            h.record_action(&call, &template_effects(&id), ended_at)?;
        }
        self.layout.save_template(&id, &template)?;
        log.wal.append(&WalEntry {
            call_id: call.call_id,
            client_id: call.client_id,
            user_id: call.user_id,
            received_at: call.received_at,
            ended_at,
            op: WalOp::NewTemplate { template_id: id.clone() },
            token: None,
        })?;
        log.history = history;
        self.templates
            .write()
            .expect("templates lock")
            .insert(id.clone(), Arc::new(template));
        Ok(Response { result: id, token: None })
    }

    pub fn new_document(&self, ctx: &CallContext, default_url: Option<String>) -> Result<Response<String>, ServiceError> {
        let doc_id = format!("doc-{}", uuid::Uuid::new_v4().simple());
        let path = self.layout.document_log(&doc_id);
        let (wal, _) = Wal::open(&path, self.layout.sync())?;
        let mut entry = DocumentEntry {
            state: ObjectState::default(),
            history: self
                .config
                .meta_provenance
                .then(|| HistoryDocument::new(HistorySubject::Document(doc_id.clone()))),
            tokens: BTreeMap::new(),
            wal,
        };
        match self.perform(&mut entry, &doc_id, ctx, Operation::NewDocument { default_url }) {
            Ok(token) => {
                self.documents
                    .write()
                    .expect("documents lock")
                    .insert(doc_id.clone(), Arc::new(Mutex::new(entry)));
                Ok(Response { result: doc_id, token })
            }
            Err(e) => {
                drop(entry);
                let _ = std::fs::remove_file(&path);
                Err(e)
            }
        }
    }

    pub fn add_namespace(
        &self,
        ctx: &CallContext,
        doc_id: &str,
        prefix: &str,
        uri: &str,
    ) -> Result<Response<()>, ServiceError> {
        self.on_document(
            ctx,
            doc_id,
            Operation::AddNamespace {
                prefix: prefix.to_string(),
                uri: uri.to_string(),
            },
        )
    }

    pub fn register_template(&self, ctx: &CallContext, doc_id: &str, template_id: &str) -> Result<Response<()>, ServiceError> {
        self.on_document(
            ctx,
            doc_id,
            Operation::RegisterTemplate {
                template_id: template_id.to_string(),
            },
        )
    }

    pub fn generate(
        &self,
        ctx: &CallContext,
        doc_id: &str,
        template_id: &str,
        substitution: Substitution,
    ) -> Result<Response<()>, ServiceError> {
        self.on_document(
            ctx,
            doc_id,
            Operation::Generate {
                template_id: template_id.to_string(),
                substitution,
            },
        )
    }

    /// Opens a zoned fragment session; the result is the session id.
    pub fn generate_initialise(
        &self,
        ctx: &CallContext,
        doc_id: &str,
        template_id: &str,
        substitution: Substitution,
    ) -> Result<Response<String>, ServiceError> {
        let session_id = format!("ses-{}", uuid::Uuid::new_v4().simple());
        let r = self.on_document(
            ctx,
            doc_id,
            Operation::GenerateInitialise {
                template_id: template_id.to_string(),
                session_id: session_id.clone(),
                substitution,
            },
        )?;
        Ok(Response {
            result: session_id,
            token: r.token,
        })
    }

    pub fn generate_zone(
        &self,
        ctx: &CallContext,
        session_id: &str,
        zone: &str,
        bindings: Bindings,
    ) -> Result<Response<()>, ServiceError> {
        let doc_id = self.session_document(session_id)?;
        self.on_document(
            ctx,
            &doc_id,
            Operation::GenerateZone {
                session_id: session_id.to_string(),
                zone: zone.to_string(),
                bindings,
            },
        )
    }

    pub fn generate_finalise(&self, ctx: &CallContext, session_id: &str) -> Result<Response<()>, ServiceError> {
        let doc_id = self.session_document(session_id)?;
        self.on_document(
            ctx,
            &doc_id,
            Operation::GenerateFinalise {
                session_id: session_id.to_string(),
            },
        )
    }

    fn on_document(&self, ctx: &CallContext, doc_id: &str, op: Operation) -> Result<Response<()>, ServiceError> {
        let doc = self.document(doc_id)?;
        let mut entry = doc.lock().expect("document lock");
        let token = self.perform(&mut entry, doc_id, ctx, op)?;
        Ok(Response { result: (), token })
    }

    fn perform(
        &self,
        entry: &mut DocumentEntry,
        doc_id: &str,
        ctx: &CallContext,
        op: Operation,
    ) -> Result<Option<SignedToken>, ServiceError> {
        let call = Self::call(ctx, op.action());
        let mut state = entry.state.clone();
        let applied = state.apply(&op, &|id: &str| self.template(id))?;
        let ended_at = Timestamp::now();
        let mut history = entry.history.clone();
        let token = match (&mut history, &self.pipeline) {
            (Some(h), Some(pipeline)) => {
                let template_bytes = match &op {
                    Operation::RegisterTemplate { template_id } => {
                        self.template(template_id).map(|t| t.canonical_bytes())
                    }
                    _ => None,
                };
                let inputs = TokenInputs::for_effects(
                    doc_id,
                    &pipeline.service_id,
                    call.action,
                    &applied.effects,
                    template_bytes.as_deref(),
                );
                let out = pipeline.process_action(h, &call, &applied.effects, &inputs, ended_at)?;
                Some(out.token)
            }
            (Some(h), None) => {
                h.record_action(&call, &applied.effects, ended_at)?;
                None
            }
            (None, _) => None,
        };
        if self.config.meta_provenance {
            if let Some(s) = &applied.effects.substitution {
                let (id, sub_doc) = persist_substitution(s);
                self.layout.save_substitution(&id, &sub_doc)?;
            }
        }
        entry.wal.append(&WalEntry {
            call_id: call.call_id.clone(),
            client_id: call.client_id.clone(),
            user_id: call.user_id.clone(),
            received_at: call.received_at,
            ended_at,
            op: WalOp::from_operation(&op),
            token: token.clone(),
        })?;
        match &op {
            Operation::GenerateInitialise { session_id, .. } => {
                self.sessions
                    .write()
                    .expect("sessions lock")
                    .insert(session_id.clone(), doc_id.to_string());
            }
            Operation::GenerateFinalise { session_id } => {
                self.sessions.write().expect("sessions lock").remove(session_id);
            }
            _ => {}
        }
        entry.state = state;
        entry.history = history;
        if let Some(t) = &token {
            entry.tokens.insert(t.header.token_id.clone(), t.clone());
        }
        Ok(token)
    }

    /// Canonical interchange JSON of the object document.
    pub fn export_document(&self, doc_id: &str) -> Result<String, ServiceError> {
        let doc = self.document(doc_id)?;
        let entry = doc.lock().expect("document lock");
        Ok(encode_document(&entry.state.doc))
    }

    pub fn document_snapshot(&self, doc_id: &str) -> Result<ProvDocument, ServiceError> {
        let doc = self.document(doc_id)?;
        let entry = doc.lock().expect("document lock");
        Ok(entry.state.doc.clone())
    }

    pub fn history(&self, doc_id: &str) -> Result<HistoryDocument, ServiceError> {
        let doc = self.document(doc_id)?;
        let entry = doc.lock().expect("document lock");
        entry.history.clone().ok_or(ServiceError::MetaProvenanceDisabled)
    }

    pub fn export_history(&self, doc_id: &str) -> Result<String, ServiceError> {
        Ok(encode_document(self.history(doc_id)?.document()))
    }

    pub fn template_history(&self) -> Result<HistoryDocument, ServiceError> {
        self.template_log
            .lock()
            .expect("template log lock")
            .history
            .clone()
            .ok_or(ServiceError::MetaProvenanceDisabled)
    }

    pub fn evidence(&self, doc_id: &str, token_id: &str) -> Result<SignedToken, ServiceError> {
        let doc = self.document(doc_id)?;
        let entry = doc.lock().expect("document lock");
        entry
            .tokens
            .get(token_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownToken(token_id.to_string()))
    }

    /// Tokens of a document in action order.
    pub fn tokens(&self, doc_id: &str) -> Result<Vec<SignedToken>, ServiceError> {
        let doc = self.document(doc_id)?;
        let entry = doc.lock().expect("document lock");
        let mut tokens: Vec<SignedToken> = entry.tokens.values().cloned().collect();
        tokens.sort_by_key(|t| t.payload.action_number);
        Ok(tokens)
    }

    /// Rebuilds the object document from its history alone.
    pub fn reconstruct(&self, doc_id: &str) -> Result<ProvDocument, ServiceError> {
        Ok(reconstruct_document(&self.history(doc_id)?, self)?)
    }

    pub fn reconstruct_between(&self, doc_id: &str, from: u64, to: u64) -> Result<ProvDocument, ServiceError> {
        Ok(reconstruct_between(&self.history(doc_id)?, from, to, self)?)
    }
}

impl TemplateLookup for DocumentService {
    fn template(&self, id: &str) -> Option<Arc<Template>> {
        DocumentService::template(self, id)
    }
}

impl ReplaySource for DocumentService {
    fn substitution_document(&self, id: &str) -> Option<ProvDocument> {
        self.layout.load_substitution(id)
    }
}

/// Templates and substitution documents of a data directory, read on
/// demand; enough to replay an exported history offline.
pub struct DataDirSource {
    layout: Layout,
}

impl DataDirSource {
    pub fn open(dir: &std::path::Path) -> Self {
        Self { layout: Layout::at(dir) }
    }
}

impl TemplateLookup for DataDirSource {
    fn template(&self, id: &str) -> Option<Arc<Template>> {
        if id.contains(['/', '\\']) || id.starts_with('.') {
            return None;
        }
        self.layout.load_template(id).ok().map(Arc::new)
    }
}

impl ReplaySource for DataDirSource {
    fn substitution_document(&self, id: &str) -> Option<ProvDocument> {
        self.layout.load_substitution(id)
    }
}

fn template_effects(template_id: &str) -> crate::meta::ActionEffects {
    crate::meta::ActionEffects {
        template_id: Some(template_id.to_string()),
        ..Default::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::{verify_evidence, Keyring, TrustPolicy};
    use crate::notary::{open_backend, Notary, NotaryKind};
    use crate::prov::QualifiedName;
    use crate::template::tests::chatbot_template;

    fn q(s: &str) -> QualifiedName {
        s.parse().unwrap()
    }

    fn ctx() -> CallContext {
        CallContext::new("app", "patient-1")
    }

    struct Env {
        dir: tempfile::TempDir,
        keyring: Keyring,
        notary: Arc<Notary>,
    }

    impl Env {
        fn new() -> Self {
            let dir = tempfile::tempdir().unwrap();
            let keyring = Keyring::generate("prov");
            let notary = Arc::new(
                Notary::new("notary-1", open_backend(NotaryKind::File, &dir.path().join("notary")).unwrap())
                    .with_hash_certificate(keyring.hash_signer().certificate().clone()),
            );
            Self { dir, keyring, notary }
        }

        fn service(&self) -> DocumentService {
            let mut config = ServiceConfig::new(self.dir.path().join("data"));
            config.sync_writes = false;
            let pipeline = EvidencePipeline {
                keyring: self.keyring.clone(),
                notary: self.notary.clone(),
                service_id: "dss".into(),
            };
            DocumentService::open(config, Some(pipeline)).unwrap()
        }
    }

    fn chat_session(svc: &DocumentService) -> (String, Vec<SignedToken>) {
        let c = ctx();
        let tpl = svc.new_template(&c, chatbot_template()).unwrap().result;
        let doc = svc.new_document(&c, Some("http://example.org/".into())).unwrap();
        let mut tokens = vec![doc.token.unwrap()];
        let doc = doc.result;
        tokens.extend(svc.register_template(&c, &doc, &tpl).unwrap().token);
        let init = svc
            .generate_initialise(
                &c,
                &doc,
                &tpl,
                Substitution::new()
                    .bind(q("var:patient"), q("ex:alice"))
                    .bind(q("vvar:name"), "Alice")
                    .bind(q("var:chat"), q("ex:chat1")),
            )
            .unwrap();
        tokens.extend(init.token);
        for i in 0..2 {
            let mut b = Bindings::new();
            b.insert(q("var:answer"), q(&format!("ex:answer{i}")).into());
            b.insert(q("vvar:text"), format!("reply {i}").into());
            tokens.extend(svc.generate_zone(&c, &init.result, "turn", b).unwrap().token);
        }
        tokens.extend(svc.generate_finalise(&c, &init.result).unwrap().token);
        (doc, tokens)
    }

    #[test]
    fn chatbot_session_is_traced_and_verifiable() {
        let env = Env::new();
        let svc = env.service();
        let (doc, tokens) = chat_session(&svc);
        assert_eq!(tokens.len(), 6);
        let numbers: Vec<u64> = tokens.iter().map(|t| t.payload.action_number).collect();
        assert_eq!(numbers, [1, 2, 3, 4, 5, 6]);
        let policy = TrustPolicy::trusting(&env.keyring.certificates());
        for t in &tokens {
            let report = verify_evidence(t, "patient-1", env.notary.as_ref(), &policy);
            assert!(report.passed, "{report}");
        }
        assert_eq!(svc.history(&doc).unwrap().action_count(), 6);
        let live = svc.export_document(&doc).unwrap();
        assert_eq!(encode_document(&svc.reconstruct(&doc).unwrap()), live);
        assert!(live.contains("ex:answer1"));
        let offline = DataDirSource::open(&env.dir.path().join("data"));
        let history = HistoryDocument::from_document(svc.history(&doc).unwrap().into_document()).unwrap();
        assert_eq!(encode_document(&reconstruct_document(&history, &offline).unwrap()), live);
        assert_eq!(svc.template_history().unwrap().action_count(), 1);
    }

    #[test]
    fn state_survives_restart() {
        let env = Env::new();
        let (doc, tokens, doc_json, hist_json) = {
            let svc = env.service();
            let (doc, tokens) = chat_session(&svc);
            let d = svc.export_document(&doc).unwrap();
            let h = svc.export_history(&doc).unwrap();
            (doc, tokens, d, h)
        };
        let svc = env.service();
        assert_eq!(svc.export_document(&doc).unwrap(), doc_json);
        assert_eq!(svc.export_history(&doc).unwrap(), hist_json);
        assert_eq!(svc.tokens(&doc).unwrap(), tokens);
        assert_eq!(svc.template_ids().len(), 1);
        svc.add_namespace(&ctx(), &doc, "foaf", "http://xmlns.com/foaf/0.1/").unwrap();
        assert_eq!(svc.history(&doc).unwrap().action_count(), 7);
    }

    #[test]
    fn failed_calls_change_nothing() {
        let env = Env::new();
        let svc = env.service();
        let c = ctx();
        let doc = svc.new_document(&c, None).unwrap().result;
        svc.add_namespace(&c, &doc, "ex", "http://example.org/").unwrap();
        let before = (svc.export_document(&doc).unwrap(), svc.export_history(&doc).unwrap());
        let audit = env.notary.audit().records;

        assert!(matches!(
            svc.add_namespace(&c, &doc, "ex", "http://other.org/"),
            Err(ServiceError::Prov(ProvError::NamespaceClash { .. }))
        ));
        assert!(matches!(
            svc.register_template(&c, &doc, "nope"),
            Err(ServiceError::UnknownTemplate(_))
        ));
        let tpl = svc.new_template(&c, chatbot_template()).unwrap().result;
        assert!(matches!(
            svc.generate_initialise(&c, &doc, &tpl, Substitution::new()),
            Err(ServiceError::TemplateNotRegistered(_))
        ));
        assert!(matches!(
            svc.generate_finalise(&c, "ses-missing"),
            Err(ServiceError::UnknownSession(_))
        ));
        assert!(matches!(
            svc.add_namespace(&c, "doc-missing", "a", "http://a/"),
            Err(ServiceError::UnknownDocument(_))
        ));
        assert_eq!(before, (svc.export_document(&doc).unwrap(), svc.export_history(&doc).unwrap()));
        assert_eq!(env.notary.audit().records, audit);

        // identical re-add is idempotent but still an action
        svc.add_namespace(&c, &doc, "ex", "http://example.org/").unwrap();
        assert_eq!(svc.history(&doc).unwrap().action_count(), 3);
    }

    #[test]
    fn unreachable_notary_aborts_the_call() {
        struct Down;
        impl crate::notary::NotaryClient for Down {
            fn notary_id(&self) -> &str {
                "down"
            }
            fn submit(
                &self,
                _: &crate::notary::NotarySubmission,
            ) -> Result<crate::notary::NotaryReceipt, crate::notary::NotaryError> {
                Err(crate::notary::NotaryError::Unavailable("offline".into()))
            }
            fn validate(
                &self,
                _: &str,
                _: Option<&crate::crypto::Digest>,
            ) -> Result<crate::notary::PresenceReport, crate::notary::NotaryError> {
                Err(crate::notary::NotaryError::Unavailable("offline".into()))
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let pipeline = EvidencePipeline {
            keyring: Keyring::generate("p"),
            notary: Arc::new(Down),
            service_id: "dss".into(),
        };
        let svc = DocumentService::open(ServiceConfig::new(dir.path()), Some(pipeline)).unwrap();
        assert!(matches!(
            svc.new_document(&ctx(), None),
            Err(ServiceError::Evidence(EvidenceError::NotaryUnavailable(_)))
        ));
        assert!(svc.document_ids().is_empty());
        assert!(DocumentService::open(ServiceConfig::new(dir.path()), None)
            .unwrap()
            .document_ids()
            .is_empty());
    }

    #[test]
    fn evidence_requires_meta_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = ServiceConfig::new(dir.path());
        config.meta_provenance = false;
        let notary = Arc::new(Notary::new("n", open_backend(NotaryKind::Object, dir.path()).unwrap()));
        let pipeline = EvidencePipeline {
            keyring: Keyring::generate("p"),
            notary,
            service_id: "dss".into(),
        };
        assert!(matches!(
            DocumentService::open(config.clone(), Some(pipeline)),
            Err(ServiceError::Config(_))
        ));
        let svc = DocumentService::open(config, None).unwrap();
        let doc = svc.new_document(&ctx(), None).unwrap();
        assert!(doc.token.is_none());
        assert!(matches!(svc.history(&doc.result), Err(ServiceError::MetaProvenanceDisabled)));
    }

    #[test]
    fn token_hashes_match_inputs() {
        let env = Env::new();
        let svc = env.service();
        let c = ctx();
        let template = chatbot_template().without_zones().unwrap();
        let expected = crate::crypto::Digest::of(&template.canonical_bytes());
        let tpl = svc.new_template(&c, template).unwrap().result;
        let doc = svc.new_document(&c, None).unwrap().result;
        let reg = svc.register_template(&c, &doc, &tpl).unwrap().token.unwrap();
        assert_eq!(reg.payload.template_hash, Some(expected));
        let s = Substitution::new()
            .bind(q("var:patient"), q("ex:bob"))
            .bind(q("vvar:name"), "Bob")
            .bind(q("var:chat"), q("ex:c"))
            .bind(q("var:answer"), q("ex:a"))
            .bind(q("vvar:text"), "hello");
        let generated = svc.generate(&c, &doc, &tpl, s.clone()).unwrap().token.unwrap();
        assert_eq!(
            generated.payload.substitution_hash,
            Some(crate::crypto::Digest::of(&s.canonical_bytes()))
        );
        let ids = svc.export_history(&doc).unwrap();
        let sub_id = crate::meta::substitution_id(&s);
        assert!(ids.contains(&sub_id));
        let (back_id, back) =
            crate::meta::decode_substitution_document(&svc.substitution_document(&sub_id).unwrap()).unwrap();
        assert_eq!((back_id, back), (sub_id, s));
    }
}
