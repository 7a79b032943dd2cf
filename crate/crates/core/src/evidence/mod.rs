//! Non-repudiation evidence: token construction, timestamping, signing,
//! notarization, grafting into the history document, and verification.
//!
//! Pipeline order for one action: record the action, build the token,
//! timestamp its payload, sign it (signature1), record the evidence
//! subgraph, then hash the signed token, sign the hash (signature2) and
//! submit it to the notary.

mod keys;
mod token;
mod verify;

pub use keys::{Keyring, LocalTsa, TimestampAuthority};
pub use token::{NonRepudiationToken, SignedToken, TimestampToken, TokenHeader, TokenPayload};
pub use verify::{verify_evidence, verify_token_bytes, Check, TrustPolicy, VerificationReport};

use std::sync::Arc;

use thiserror::Error;

use crate::crypto::Digest;
use crate::meta::{
    ActionEffects, ActionName, HistoryDocument, HistorySubject, MetaError, MetaTemplateSet, RecordedAction,
    ServiceCall,
};
use crate::notary::{NotaryClient, NotaryError, NotaryReceipt, NotarySubmission};
use crate::prov::{canonical_bytes_of, encode_document, QualifiedName, Timestamp};
use crate::template::{instantiate, Substitution, TemplateError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvidenceError {
    #[error("hash must be 32 bytes, got {0}")]
    BadHashLength(usize),
    #[error("TSA clock ahead of server clock by {0} ms")]
    ClockSkew(i64),
    #[error("missing meta-provenance: {0}")]
    MissingMetaProvenance(String),
    #[error("key unavailable: {0}")]
    KeyUnavailable(String),
    #[error("notary unavailable: {0}")]
    NotaryUnavailable(String),
    #[error("token id {0} already notarized")]
    DuplicateTokenId(String),
    #[error("unknown action {0}")]
    UnknownAction(QualifiedName),
    #[error("evidence for {0} already recorded")]
    DuplicateEvidence(QualifiedName),
    #[error(transparent)]
    Meta(#[from] MetaError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Per-call inputs to the token beyond the recorded action.
#[derive(Clone, Debug)]
pub struct TokenInputs {
    pub doc_id: String,
    pub service_id: String,
    /// Hash of the template, for registerTemplate.
    pub template_hash: Option<Digest>,
    /// Hash of the call's substitution, for generation actions.
    pub substitution_hash: Option<Digest>,
    /// Times of inputs other than the request; the request time is used
    /// when empty.
    pub input_timestamps: Vec<Timestamp>,
}

impl TokenInputs {
    /// Hash fields derived from what the action touched.
    pub fn for_effects(
        doc_id: &str,
        service_id: &str,
        action: ActionName,
        effects: &ActionEffects,
        template_bytes: Option<&[u8]>,
    ) -> Self {
        Self {
            doc_id: doc_id.to_string(),
            service_id: service_id.to_string(),
            template_hash: match action {
                ActionName::RegisterTemplate => template_bytes.map(Digest::of),
                _ => None,
            },
            substitution_hash: if action.takes_substitution() {
                effects.substitution.as_ref().map(substitution_hash)
            } else {
                None
            },
            input_timestamps: Vec::new(),
        }
    }
}

pub fn substitution_hash(s: &Substitution) -> Digest {
    Digest::of(&s.canonical_bytes())
}

/// Assembles and timestamps the token for a recorded action.
pub fn build_token(
    call: &ServiceCall,
    action: &RecordedAction,
    inputs: &TokenInputs,
    keyring: &Keyring,
    notary_id: &str,
) -> Result<NonRepudiationToken, EvidenceError> {
    let name = action.name;
    if action.fragment.element(&action.id).is_none() {
        return Err(EvidenceError::MissingMetaProvenance(format!("{} not in its fragment", action.id)));
    }
    if (name == ActionName::RegisterTemplate) != inputs.template_hash.is_some() {
        return Err(EvidenceError::MissingMetaProvenance(format!("template hash presence wrong for {name}")));
    }
    if name.takes_substitution() != inputs.substitution_hash.is_some() {
        return Err(EvidenceError::MissingMetaProvenance(format!(
            "substitution hash presence wrong for {name}"
        )));
    }
    if call.user_id.is_empty() {
        return Err(EvidenceError::MissingMetaProvenance("service call has no patient".into()));
    }
    let payload = TokenPayload {
        doc_id: inputs.doc_id.clone(),
        action_id: action.id.to_string(),
        action_name: name,
        action_number: action.number,
        meta_provenance: encode_document(&action.fragment),
        template_hash: inputs.template_hash,
        substitution_hash: inputs.substitution_hash,
        request_received_at: call.received_at,
        input_timestamps: if inputs.input_timestamps.is_empty() {
            vec![call.received_at]
        } else {
            inputs.input_timestamps.clone()
        },
    };
    let timestamp = keyring.tsa().issue(payload.digest().as_bytes())?;
    let header = TokenHeader {
        token_id: uuid::Uuid::new_v4().to_string(),
        patient_id: call.user_id.clone(),
        service_id: inputs.service_id.clone(),
        tsa_id: timestamp.tsa_id.clone(),
        timestamp,
        notary_id: notary_id.to_string(),
        certificates: keyring.certificates(),
    };
    Ok(NonRepudiationToken { header, payload })
}

/// signature1 over the token digest with the token-signing key.
pub fn sign_token(token: NonRepudiationToken, keyring: &Keyring) -> Result<SignedToken, EvidenceError> {
    let signer = keyring.token_signer();
    let signature1 = signer
        .sign_digest(&token.digest())
        .map_err(|e| EvidenceError::KeyUnavailable(e.to_string()))?;
    Ok(SignedToken {
        header: token.header,
        payload: token.payload,
        signature1,
        cert_ref: signer.certificate().fingerprint(),
    })
}

fn hist(local: String) -> QualifiedName {
    QualifiedName::of(crate::meta::HIST_PREFIX, &local)
}

/// Instantiates the evidence template with `var:action` bound to the
/// recorded action and grafts it into the history.
pub fn record_evidence(
    history: &mut HistoryDocument,
    action_number: u64,
    call: &ServiceCall,
    token: &SignedToken,
) -> Result<(), EvidenceError> {
    if !matches!(history.subject(), HistorySubject::Document(_)) {
        return Err(EvidenceError::Meta(MetaError::UnknownHistory));
    }
    let action = HistoryDocument::action_id(action_number);
    if history.document().element(&action).is_none() {
        return Err(EvidenceError::UnknownAction(action));
    }
    let sign = hist(format!("signToken-{action_number}"));
    if history.document().element(&sign).is_some() {
        return Err(EvidenceError::DuplicateEvidence(action));
    }
    let v = |l: &str| QualifiedName::of("var", l);
    let vv = |l: &str| QualifiedName::of("vvar", l);
    let cert = token
        .header
        .certificate(crate::crypto::KeyRole::TokenSigning)
        .ok_or_else(|| EvidenceError::KeyUnavailable("token carries no token-signing certificate".into()))?;
    let s = Substitution::new()
        .bind(v("action"), action)
        .bind(v("serviceCall"), hist(format!("serviceCall-{action_number}")))
        .bind(vv("callId"), call.call_id.as_str())
        .bind(vv("clientId"), call.client_id.as_str())
        .bind(vv("userId"), call.user_id.as_str())
        .bind(vv("receivedAt"), call.received_at)
        .bind(v("tokenHeader"), hist(format!("tokenHeader-{action_number}")))
        .bind(vv("tokenId"), token.header.token_id.as_str())
        .bind(vv("timestamp"), token.header.timestamp.gen_time)
        .bind(vv("tsaId"), token.header.tsa_id.as_str())
        .bind(vv("notaryId"), token.header.notary_id.as_str())
        .bind(v("tokenContent"), hist(format!("tokenContent-{action_number}")))
        .bind(vv("payloadHash"), token.payload.digest().hex())
        .bind(v("signature"), hist(format!("signature-{action_number}")))
        .bind(vv("signatureValue"), token.signature1.to_string())
        .bind(vv("certificate"), String::from_utf8(canonical_bytes_of(cert)).expect("utf-8"))
        .bind(v("signToken"), sign);
    let fragment = instantiate(&MetaTemplateSet::get().evidence, &s)?;
    history.graft(&fragment)?;
    Ok(())
}

/// Hashes the signed token, signs the hash with the hash-signing key and
/// submits it.
pub fn notarize(
    token: &SignedToken,
    keyring: &Keyring,
    notary: &dyn NotaryClient,
) -> Result<(NotarySubmission, NotaryReceipt), EvidenceError> {
    let hash = token.hash();
    let signature2 = keyring
        .hash_signer()
        .sign_digest(hash.as_bytes())
        .map_err(|e| EvidenceError::KeyUnavailable(e.to_string()))?;
    let submission = NotarySubmission {
        token_id: token.header.token_id.clone(),
        hash,
        signature2,
    };
    let receipt = notary.submit(&submission).map_err(|e| match e {
        NotaryError::DuplicateTokenId(id) => EvidenceError::DuplicateTokenId(id),
        other => EvidenceError::NotaryUnavailable(other.to_string()),
    })?;
    Ok((submission, receipt))
}

/// Keys, notary and service identity used for every action.
#[derive(Clone)]
pub struct EvidencePipeline {
    pub keyring: Keyring,
    pub notary: Arc<dyn NotaryClient>,
    pub service_id: String,
}

/// Outcome of [`EvidencePipeline::process_action`].
#[derive(Clone, Debug)]
pub struct ProcessedAction {
    pub action: RecordedAction,
    pub token: SignedToken,
    pub receipt: NotaryReceipt,
}

impl EvidencePipeline {
    /// Records the action and its evidence in `history` and notarizes the
    /// token. On error `history` may hold a partial update; callers work
    /// on a copy.
    pub fn process_action(
        &self,
        history: &mut HistoryDocument,
        call: &ServiceCall,
        effects: &ActionEffects,
        inputs: &TokenInputs,
        ended_at: Timestamp,
    ) -> Result<ProcessedAction, EvidenceError> {
        let action = history.record_action(call, effects, ended_at)?;
        let token = build_token(call, &action, inputs, &self.keyring, self.notary.notary_id())?;
        let token = sign_token(token, &self.keyring)?;
        record_evidence(history, action.number, call, &token)?;
        let (_, receipt) = notarize(&token, &self.keyring, self.notary.as_ref())?;
        Ok(ProcessedAction { action, token, receipt })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyRole;
    use crate::notary::{open_backend, Notary, NotaryKind};
    use crate::prov::RelationKind;

    pub(crate) fn pipeline(dir: &std::path::Path) -> EvidencePipeline {
        let keyring = Keyring::generate("prov-server");
        let notary = Notary::new("notary-1", open_backend(NotaryKind::Object, dir).unwrap())
            .with_hash_certificate(keyring.hash_signer().certificate().clone());
        EvidencePipeline {
            keyring,
            notary: Arc::new(notary),
            service_id: "dss-1".into(),
        }
    }

    fn call(action: ActionName) -> ServiceCall {
        ServiceCall {
            call_id: uuid::Uuid::new_v4().to_string(),
            action,
            client_id: "app".into(),
            user_id: "patient-7".into(),
            received_at: Timestamp::now(),
        }
    }

    #[test]
    fn hash_fields_follow_the_action() {
        let dir = tempfile::tempdir().unwrap();
        let p = pipeline(dir.path());
        let mut h = HistoryDocument::new(HistorySubject::Document("d".into()));
        let c = call(ActionName::NewDocument);
        let effects = ActionEffects::default();
        let inputs = TokenInputs::for_effects("d", "dss-1", c.action, &effects, None);
        let out = p.process_action(&mut h, &c, &effects, &inputs, Timestamp::now()).unwrap();
        assert!(out.token.payload.template_hash.is_none());
        assert!(out.token.payload.substitution_hash.is_none());
        assert_eq!(out.token.payload.input_timestamps, vec![c.received_at]);

        let c = call(ActionName::RegisterTemplate);
        let effects = ActionEffects {
            template_id: Some("t".into()),
            ..Default::default()
        };
        let inputs = TokenInputs::for_effects("d", "dss-1", c.action, &effects, Some(b"template"));
        let out = p.process_action(&mut h, &c, &effects, &inputs, Timestamp::now()).unwrap();
        assert_eq!(out.token.payload.template_hash, Some(Digest::of(b"template")));
        assert!(out.token.payload.substitution_hash.is_none());

        let c = call(ActionName::Generate);
        let sub = Substitution::new().bind("vvar:x".parse().unwrap(), 1i64);
        let effects = ActionEffects {
            template_id: Some("t".into()),
            substitution: Some(sub.clone()),
            annotations: vec![],
        };
        let inputs = TokenInputs::for_effects("d", "dss-1", c.action, &effects, None);
        let out = p.process_action(&mut h, &c, &effects, &inputs, Timestamp::now()).unwrap();
        assert_eq!(out.token.payload.substitution_hash, Some(Digest::of(&sub.canonical_bytes())));
        assert!(out.token.payload.template_hash.is_none());
    }

    #[test]
    fn evidence_grafts_onto_the_action() {
        let dir = tempfile::tempdir().unwrap();
        let p = pipeline(dir.path());
        let mut h = HistoryDocument::new(HistorySubject::Document("d".into()));
        let c = call(ActionName::NewDocument);
        let inputs = TokenInputs::for_effects("d", "s", c.action, &ActionEffects::default(), None);
        let out = p
            .process_action(&mut h, &c, &ActionEffects::default(), &inputs, Timestamp::now())
            .unwrap();
        let doc = h.document();
        let sig = hist("signature-1".into());
        let sign = hist("signToken-1".into());
        assert!(doc
            .relations()
            .any(|r| r.kind == RelationKind::WasGeneratedBy && r.source == sig && r.target == sign));
        assert!(doc
            .relations()
            .any(|r| r.kind == RelationKind::WasInformedBy && r.source == sign && r.target == out.action.id));
        assert!(doc
            .element(&sig)
            .unwrap()
            .attribute(&QualifiedName::of("meta", "certificate"))
            .is_some());
        assert_eq!(
            record_evidence(&mut h, 1, &c, &out.token).unwrap_err(),
            EvidenceError::DuplicateEvidence(out.action.id.clone())
        );
        assert!(matches!(
            record_evidence(&mut h, 9, &c, &out.token),
            Err(EvidenceError::UnknownAction(_))
        ));
        // evidence does not disturb the action chain
        let back = HistoryDocument::from_document(h.document().clone()).unwrap();
        assert_eq!(back.action_count(), 1);
    }

    #[test]
    fn signature_roles_are_separate() {
        let ring = Keyring::generate("x");
        let dir = tempfile::tempdir().unwrap();
        let notary = Notary::new("n", open_backend(NotaryKind::File, dir.path()).unwrap())
            .with_hash_certificate(ring.hash_signer().certificate().clone());
        let mut h = HistoryDocument::new(HistorySubject::Document("d".into()));
        let c = call(ActionName::NewDocument);
        let action = h.record_action(&c, &ActionEffects::default(), Timestamp::now()).unwrap();
        let inputs = TokenInputs::for_effects("d", "s", c.action, &ActionEffects::default(), None);
        let token = sign_token(build_token(&c, &action, &inputs, &ring, "n").unwrap(), &ring).unwrap();
        let digest = token.unsigned().digest();
        let key1 = token.header.certificate(KeyRole::TokenSigning).unwrap();
        let key2 = token.header.certificate(KeyRole::HashSigning).unwrap();
        assert!(key1.verify_digest(&digest, &token.signature1));
        assert!(!key2.verify_digest(&digest, &token.signature1));
        let (sub, _) = notarize(&token, &ring, &notary).unwrap();
        assert!(key2.verify_digest(sub.hash.as_bytes(), &sub.signature2));
        assert!(!key1.verify_digest(sub.hash.as_bytes(), &sub.signature2));
        assert!(matches!(
            notarize(&token, &ring, &notary),
            Err(EvidenceError::DuplicateTokenId(_))
        ));
        // a notary expecting another hash key refuses the submission
        let other = Notary::new("m", open_backend(NotaryKind::Object, dir.path()).unwrap())
            .with_hash_certificate(Keyring::generate("y").hash_signer().certificate().clone());
        assert!(matches!(
            notarize(&token, &ring, &other),
            Err(EvidenceError::NotaryUnavailable(_))
        ));
    }
}
