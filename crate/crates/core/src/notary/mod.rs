//! Trusted notary: stores signed hashes of signed tokens in write-once,
//! auditable storage.
//!
//! Three backends share one record format and differ in storage semantics:
//!
//! * [`LedgerBackend`]: hash-chained blocks in `blocks.log`, one canonical
//!   JSON block per line, plus a `state.json` head pointer.
//! * [`FileBackend`]: `records.log`, frames of 4-byte big-endian length,
//!   canonical JSON record, 4-byte big-endian CRC32 of the JSON.
//! * [`ObjectBackend`]: `objects/{tokenId}`, created exclusively, holding
//!   the hex SHA-256 of the record, a newline, and the record.

mod file;
mod ledger;
mod object;

pub use file::FileBackend;
pub use ledger::{block_hash, Block, LedgerBackend, LedgerOptions};
pub use object::ObjectBackend;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{Certificate, Digest, SignatureBytes};
use crate::prov::Timestamp;

/// What the provenance server sends: no token content, only its hash.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct NotarySubmission {
    pub token_id: String,
    pub hash: Digest,
    pub signature2: SignatureBytes,
}

/// A stored submission.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct NotaryRecord {
    pub token_id: String,
    pub hash: Digest,
    pub signature2: SignatureBytes,
    pub received_at: Timestamp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct NotaryReceipt {
    pub notary_id: String,
    pub token_id: String,
    pub locator: String,
    pub received_at: Timestamp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PresenceReport {
    pub token_id: String,
    pub found: bool,
    /// Present when a hash was supplied and the record exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hash_match: Option<bool>,
    /// Present when the notary knows the hash-signing certificate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature2_valid: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<NotaryRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locator: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AuditIssue {
    /// Backend-specific position: `block N`, `offset N`, `state`, or
    /// `object ID`.
    pub location: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AuditReport {
    pub kind: NotaryKind,
    pub records: u64,
    pub issues: Vec<AuditIssue>,
    /// Ledger only: the first block whose link or hash fails.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_broken_block: Option<u64>,
    /// File only: byte offset of the first bad frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_bad_offset: Option<u64>,
}

impl AuditReport {
    pub fn clean(kind: NotaryKind, records: u64) -> Self {
        Self {
            kind,
            records,
            issues: Vec::new(),
            first_broken_block: None,
            first_bad_offset: None,
        }
    }

    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }

    pub(crate) fn issue(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.issues.push(AuditIssue {
            location: location.into(),
            message: message.into(),
        });
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NotaryError {
    #[error("token id {0} already notarized")]
    DuplicateTokenId(String),
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("signature2 does not verify under the hash-signing certificate")]
    InvalidSignature,
    #[error("notary unavailable: {0}")]
    Unavailable(String),
    #[error("bad request: {0}")]
    BadRequest(String),
}

impl From<std::io::Error> for NotaryError {
    fn from(e: std::io::Error) -> Self {
        NotaryError::StorageFailure(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NotaryKind {
    Ledger,
    Object,
    File,
}

impl NotaryKind {
    pub const ALL: [NotaryKind; 3] = [NotaryKind::Ledger, NotaryKind::File, NotaryKind::Object];

    pub fn as_str(&self) -> &'static str {
        match self {
            NotaryKind::Ledger => "ledger",
            NotaryKind::Object => "object",
            NotaryKind::File => "file",
        }
    }
}

impl fmt::Display for NotaryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NotaryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ledger" => Ok(NotaryKind::Ledger),
            "object" => Ok(NotaryKind::Object),
            "file" => Ok(NotaryKind::File),
            other => Err(format!("unknown notary kind `{other}` (ledger, object, file)")),
        }
    }
}

/// Write-once record storage.
pub trait NotaryBackend: Send + Sync {
    fn kind(&self) -> NotaryKind;
    /// Stores `record`; fails with `DuplicateTokenId` leaving state unchanged
    /// if the token id is already present.
    fn add(&self, record: &NotaryRecord) -> Result<String, NotaryError>;
    /// The stored record and its locator.
    fn get(&self, token_id: &str) -> Option<(NotaryRecord, String)>;
    /// Re-reads persisted state and checks its integrity.
    fn audit(&self) -> AuditReport;
}

pub fn open_backend(kind: NotaryKind, dir: &Path) -> Result<Box<dyn NotaryBackend>, NotaryError> {
    Ok(match kind {
        NotaryKind::Ledger => Box::new(LedgerBackend::open(dir, LedgerOptions::default())?),
        NotaryKind::Object => Box::new(ObjectBackend::open(dir)?),
        NotaryKind::File => Box::new(FileBackend::open(dir, true)?),
    })
}

/// Client side of the notary protocol, local or remote.
pub trait NotaryClient: Send + Sync {
    fn notary_id(&self) -> &str;
    fn submit(&self, submission: &NotarySubmission) -> Result<NotaryReceipt, NotaryError>;
    fn validate(&self, token_id: &str, hash: Option<&Digest>) -> Result<PresenceReport, NotaryError>;
}

/// The notary service over one backend.
pub struct Notary {
    id: String,
    backend: Box<dyn NotaryBackend>,
    hash_certificate: Option<Certificate>,
}

impl Notary {
    pub fn new(id: impl Into<String>, backend: Box<dyn NotaryBackend>) -> Self {
        Self {
            id: id.into(),
            backend,
            hash_certificate: None,
        }
    }

    /// Rejects submissions whose signature2 does not verify under `cert`.
    pub fn with_hash_certificate(mut self, cert: Certificate) -> Self {
        self.hash_certificate = Some(cert);
        self
    }

    pub fn kind(&self) -> NotaryKind {
        self.backend.kind()
    }

    pub fn add(&self, submission: &NotarySubmission) -> Result<NotaryReceipt, NotaryError> {
        if submission.token_id.is_empty() || submission.token_id.contains(['/', '\\']) || submission.token_id.starts_with('.') {
            return Err(NotaryError::BadRequest(format!("unusable token id `{}`", submission.token_id)));
        }
        if let Some(cert) = &self.hash_certificate {
            if !cert.verify_digest(submission.hash.as_bytes(), &submission.signature2) {
                return Err(NotaryError::InvalidSignature);
            }
        }
        let record = NotaryRecord {
            token_id: submission.token_id.clone(),
            hash: submission.hash,
            signature2: submission.signature2,
            received_at: Timestamp::now(),
        };
        let locator = self.backend.add(&record)?;
        Ok(NotaryReceipt {
            notary_id: self.id.clone(),
            token_id: record.token_id,
            locator,
            received_at: record.received_at,
        })
    }

    pub fn presence(&self, token_id: &str, hash: Option<&Digest>) -> PresenceReport {
        match self.backend.get(token_id) {
            None => PresenceReport {
                token_id: token_id.to_string(),
                found: false,
                hash_match: None,
                signature2_valid: None,
                record: None,
                locator: None,
            },
            Some((record, locator)) => PresenceReport {
                token_id: token_id.to_string(),
                found: true,
                hash_match: hash.map(|h| *h == record.hash),
                signature2_valid: self
                    .hash_certificate
                    .as_ref()
                    .map(|c| c.verify_digest(record.hash.as_bytes(), &record.signature2)),
                record: Some(record),
                locator: Some(locator),
            },
        }
    }

    pub fn audit(&self) -> AuditReport {
        self.backend.audit()
    }
}

impl NotaryClient for Notary {
    fn notary_id(&self) -> &str {
        &self.id
    }

    fn submit(&self, submission: &NotarySubmission) -> Result<NotaryReceipt, NotaryError> {
        self.add(submission)
    }

    fn validate(&self, token_id: &str, hash: Option<&Digest>) -> Result<PresenceReport, NotaryError> {
        Ok(self.presence(token_id, hash))
    }
}

impl<T: NotaryClient + ?Sized> NotaryClient for std::sync::Arc<T> {
    fn notary_id(&self) -> &str {
        (**self).notary_id()
    }

    fn submit(&self, submission: &NotarySubmission) -> Result<NotaryReceipt, NotaryError> {
        (**self).submit(submission)
    }

    fn validate(&self, token_id: &str, hash: Option<&Digest>) -> Result<PresenceReport, NotaryError> {
        (**self).validate(token_id, hash)
    }
}

/// fsyncs a directory so a rename or create inside it is durable.
pub(crate) fn sync_dir(dir: &Path) -> std::io::Result<()> {
    std::fs::File::open(dir)?.sync_all()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{KeyRole, Signer, SoftwareKey, B64};

    fn submission(key: &SoftwareKey, id: &str, seed: u8) -> NotarySubmission {
        let hash = Digest::of(&[seed]);
        NotarySubmission {
            token_id: id.into(),
            hash,
            signature2: key.sign_digest(hash.as_bytes()).unwrap(),
        }
    }

    #[test]
    fn presence_reports_for_every_backend() {
        let key = SoftwareKey::generate_now("dss", KeyRole::HashSigning);
        for kind in NotaryKind::ALL {
            let dir = tempfile::tempdir().unwrap();
            let notary = Notary::new("n1", open_backend(kind, dir.path()).unwrap())
                .with_hash_certificate(key.certificate().clone());
            let s = submission(&key, "tok-1", 1);
            let receipt = notary.add(&s).unwrap();
            assert_eq!(receipt.token_id, "tok-1");

            let found = notary.presence("tok-1", Some(&s.hash));
            assert!(found.found, "{kind}");
            assert_eq!(found.hash_match, Some(true));
            assert_eq!(found.signature2_valid, Some(true));
            assert_eq!(found.locator.as_deref(), Some(receipt.locator.as_str()));

            let other = Digest::of(b"other");
            assert_eq!(notary.presence("tok-1", Some(&other)).hash_match, Some(false));
            assert!(!notary.presence("nope", None).found);

            assert_eq!(
                notary.add(&s).unwrap_err(),
                NotaryError::DuplicateTokenId("tok-1".into()),
                "{kind}"
            );
            let forged = NotarySubmission {
                signature2: B64([7; 64]),
                ..submission(&key, "tok-2", 2)
            };
            assert_eq!(notary.add(&forged).unwrap_err(), NotaryError::InvalidSignature);
            assert!(notary.audit().is_clean(), "{kind}: {:?}", notary.audit());
            assert_eq!(notary.audit().records, 1);
        }
    }

    #[test]
    fn submissions_carry_only_three_fields() {
        let key = SoftwareKey::generate_now("dss", KeyRole::HashSigning);
        let v = serde_json::to_value(submission(&key, "t", 0)).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["hash", "signature2", "tokenId"]);
        let extra = r#"{"tokenId":"t","hash":"AAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAA","signature2":"x","payload":{}}"#;
        assert!(serde_json::from_str::<NotarySubmission>(extra).is_err());
    }

    #[test]
    fn reopen_keeps_records() {
        let key = SoftwareKey::generate_now("dss", KeyRole::HashSigning);
        for kind in NotaryKind::ALL {
            let dir = tempfile::tempdir().unwrap();
            {
                let n = Notary::new("n", open_backend(kind, dir.path()).unwrap());
                for i in 0..3u8 {
                    n.add(&submission(&key, &format!("t{i}"), i)).unwrap();
                }
            }
            let n = Notary::new("n", open_backend(kind, dir.path()).unwrap());
            assert!(n.presence("t2", None).found, "{kind}");
            assert_eq!(
                n.add(&submission(&key, "t1", 9)).unwrap_err(),
                NotaryError::DuplicateTokenId("t1".into())
            );
            n.add(&submission(&key, "t3", 3)).unwrap();
            let report = n.audit();
            assert!(report.is_clean(), "{kind}: {report:?}");
            assert_eq!(report.records, 4);
        }
    }
}
