//! Blocking HTTP clients for the notary and the provenance service.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::ErrorBody;
use crate::notary_api::NotaryInfo;
use crate::provenance_api::{CLIENT_HEADER, USER_HEADER};
use provnr_core::crypto::Digest;
use provnr_core::evidence::SignedToken;
use provnr_core::notary::{
    AuditReport, NotaryClient, NotaryError, NotaryKind, NotaryReceipt, NotarySubmission, PresenceReport,
};
use provnr_core::service::CallContext;
use provnr_core::sim::{ProvenanceClient, Reply};
use provnr_core::template::{bindings_json, Bindings, Substitution, Template};

/// A failed request: the HTTP status (0 for transport errors) and the
/// server's error body when there was one.
#[derive(Clone, Debug)]
pub struct HttpError {
    pub status: u16,
    pub error: String,
    pub message: String,
}

impl std::fmt::Display for HttpError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.status == 0 {
            write!(f, "{}: {}", self.error, self.message)
        } else {
            write!(f, "HTTP {} {}: {}", self.status, self.error, self.message)
        }
    }
}

impl std::error::Error for HttpError {}

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::AgentBuilder::new().timeout(timeout).build()
}

fn convert(e: ureq::Error) -> HttpError {
    match e {
        ureq::Error::Status(status, resp) => {
            let text = resp.into_string().unwrap_or_default();
            match serde_json::from_str::<ErrorBody>(&text) {
                Ok(b) => HttpError {
                    status,
                    error: b.error,
                    message: b.message,
                },
                Err(_) => HttpError {
                    status,
                    error: "Http".into(),
                    message: text,
                },
            }
        }
        ureq::Error::Transport(t) => HttpError {
            status: 0,
            error: "Transport".into(),
            message: t.to_string(),
        },
    }
}

fn read<T: DeserializeOwned>(r: Result<ureq::Response, ureq::Error>) -> Result<T, HttpError> {
    let resp = r.map_err(convert)?;
    resp.into_json().map_err(|e| HttpError {
        status: 0,
        error: "Decode".into(),
        message: e.to_string(),
    })
}

fn read_text(r: Result<ureq::Response, ureq::Error>) -> Result<String, HttpError> {
    r.map_err(convert)?.into_string().map_err(|e| HttpError {
        status: 0,
        error: "Decode".into(),
        message: e.to_string(),
    })
}

/// Remote notary over HTTP.
pub struct HttpNotaryClient {
    base: String,
    agent: ureq::Agent,
    info: NotaryInfo,
}

impl HttpNotaryClient {
    /// Connects and learns the notary id and kind.
    pub fn connect(url: &str, timeout: Duration) -> Result<Self, HttpError> {
        let base = url.trim_end_matches('/').to_string();
        let agent = agent(timeout);
        let info: NotaryInfo = read(agent.get(&format!("{base}/notary")).call())?;
        Ok(Self { base, agent, info })
    }

    pub fn kind(&self) -> NotaryKind {
        self.info.kind
    }

    pub fn audit(&self) -> Result<AuditReport, HttpError> {
        read(self.agent.get(&format!("{}/notary/audit", self.base)).call())
    }
}

fn notary_error(e: HttpError) -> NotaryError {
    match (e.status, e.error.as_str()) {
        (409, _) => NotaryError::DuplicateTokenId(e.message),
        (400, "InvalidSignature") => NotaryError::InvalidSignature,
        (400, _) => NotaryError::BadRequest(e.message),
        (500, _) => NotaryError::StorageFailure(e.message),
        _ => NotaryError::Unavailable(e.to_string()),
    }
}

impl NotaryClient for HttpNotaryClient {
    fn notary_id(&self) -> &str {
        &self.info.notary_id
    }

    fn submit(&self, submission: &NotarySubmission) -> Result<NotaryReceipt, NotaryError> {
        let body = serde_json::to_value(submission).expect("submission serializes");
        read(self.agent.post(&format!("{}/notary/records", self.base)).send_json(body)).map_err(notary_error)
    }

    fn validate(&self, token_id: &str, hash: Option<&Digest>) -> Result<PresenceReport, NotaryError> {
        let mut req = self.agent.get(&format!("{}/notary/records/{token_id}", self.base));
        if let Some(h) = hash {
            req = req.query("hash", &h.to_string());
        }
        read(req.call()).map_err(notary_error)
    }
}

#[derive(Deserialize)]
struct Envelope {
    #[serde(default)]
    result: Value,
    #[serde(default)]
    token: Option<SignedToken>,
}

impl From<Envelope> for Reply {
    fn from(e: Envelope) -> Self {
        Reply {
            result: match e.result {
                Value::String(s) => s,
                Value::Null => String::new(),
                other => other.to_string(),
            },
            token: e.token,
        }
    }
}

#[derive(Deserialize)]
struct TokenList {
    tokens: Vec<SignedToken>,
}

/// Remote provenance service over HTTP.
pub struct HttpProvenanceClient {
    base: String,
    agent: ureq::Agent,
}

impl HttpProvenanceClient {
    pub fn new(url: &str, timeout: Duration) -> Self {
        Self {
            base: url.trim_end_matches('/').to_string(),
            agent: agent(timeout),
        }
    }

    fn post(&self, ctx: &CallContext, path: &str, body: Value) -> Result<Reply, HttpError> {
        let r = self
            .agent
            .post(&format!("{}{path}", self.base))
            .set(CLIENT_HEADER, &ctx.client_id)
            .set(USER_HEADER, &ctx.user_id)
            .send_json(body);
        read::<Envelope>(r).map(Reply::from)
    }

    fn get_text(&self, path: &str) -> Result<String, HttpError> {
        read_text(self.agent.get(&format!("{}{path}", self.base)).call())
    }

    pub fn add_namespace(&self, ctx: &CallContext, doc_id: &str, prefix: &str, uri: &str) -> Result<Reply, HttpError> {
        self.post(
            ctx,
            &format!("/documents/{doc_id}/namespaces"),
            json!({ "prefix": prefix, "uri": uri }),
        )
    }

    /// Canonical JSON of the document.
    pub fn document(&self, doc_id: &str) -> Result<String, HttpError> {
        self.get_text(&format!("/documents/{doc_id}"))
    }

    /// Canonical JSON of the document's history.
    pub fn history(&self, doc_id: &str) -> Result<String, HttpError> {
        self.get_text(&format!("/documents/{doc_id}/history"))
    }

    pub fn template_json(&self, template_id: &str) -> Result<String, HttpError> {
        self.get_text(&format!("/templates/{template_id}"))
    }

    pub fn substitution(&self, id: &str) -> Result<String, HttpError> {
        self.get_text(&format!("/substitutions/{id}"))
    }

    pub fn evidence(&self, doc_id: &str, token_id: &str) -> Result<SignedToken, HttpError> {
        read(self.agent.get(&format!("{}/documents/{doc_id}/evidence/{token_id}", self.base)).call())
    }

    pub fn tokens(&self, doc_id: &str) -> Result<Vec<SignedToken>, HttpError> {
        read::<TokenList>(self.agent.get(&format!("{}/documents/{doc_id}/tokens", self.base)).call()).map(|l| l.tokens)
    }
}

impl ProvenanceClient for HttpProvenanceClient {
    fn new_template(&self, ctx: &CallContext, template: &Template) -> Result<Reply, String> {
        self.post(ctx, "/templates", template.to_json()).map_err(|e| e.to_string())
    }

    fn new_document(&self, ctx: &CallContext, default_url: Option<&str>) -> Result<Reply, String> {
        let body = match default_url {
            Some(u) => json!({ "defaultUrl": u }),
            None => json!({}),
        };
        self.post(ctx, "/documents", body).map_err(|e| e.to_string())
    }

    fn register_template(&self, ctx: &CallContext, doc_id: &str, template_id: &str) -> Result<Reply, String> {
        self.post(
            ctx,
            &format!("/documents/{doc_id}/registrations"),
            json!({ "templateId": template_id }),
        )
        .map_err(|e| e.to_string())
    }

    fn generate(&self, ctx: &CallContext, doc_id: &str, template_id: &str, s: &Substitution) -> Result<Reply, String> {
        self.post(
            ctx,
            &format!("/documents/{doc_id}/generate"),
            json!({ "templateId": template_id, "substitution": s.to_json() }),
        )
        .map_err(|e| e.to_string())
    }

    fn generate_initialise(
        &self,
        ctx: &CallContext,
        doc_id: &str,
        template_id: &str,
        s: &Substitution,
    ) -> Result<Reply, String> {
        self.post(
            ctx,
            &format!("/documents/{doc_id}/fragments"),
            json!({ "templateId": template_id, "substitution": s.to_json() }),
        )
        .map_err(|e| e.to_string())
    }

    fn generate_zone(&self, ctx: &CallContext, session_id: &str, zone: &str, b: &Bindings) -> Result<Reply, String> {
        self.post(
            ctx,
            &format!("/fragments/{session_id}/zones"),
            json!({ "zone": zone, "bindings": bindings_json(b) }),
        )
        .map_err(|e| e.to_string())
    }

    fn generate_finalise(&self, ctx: &CallContext, session_id: &str) -> Result<Reply, String> {
        self.post(ctx, &format!("/fragments/{session_id}/finalise"), json!({}))
            .map_err(|e| e.to_string())
    }
}
