use std::path::Path;
use std::sync::{Arc, Mutex};

use super::{EvidenceError, TimestampToken};
use crate::crypto::{Certificate, Digest, KeyRole, Signer, SoftwareKey};
use crate::prov::Timestamp;

/// Client interface of a timestamping authority.
pub trait TimestampAuthority: Send + Sync {
    fn tsa_id(&self) -> &str;
    fn certificate(&self) -> &Certificate;
    fn issue(&self, hash: &[u8]) -> Result<TimestampToken, EvidenceError>;
}

/// In-process TSA. `gen_time` never decreases across calls.
pub struct LocalTsa {
    id: String,
    key: Arc<dyn Signer>,
    max_skew_ms: i64,
    last: Mutex<i64>,
}

impl LocalTsa {
    pub fn new(id: impl Into<String>, key: Arc<dyn Signer>, max_skew_ms: i64) -> Result<Self, EvidenceError> {
        if key.role() != KeyRole::Timestamping {
            return Err(EvidenceError::KeyUnavailable(format!(
                "TSA key has role {}",
                key.role()
            )));
        }
        Ok(Self {
            id: id.into(),
            key,
            max_skew_ms,
            last: Mutex::new(i64::MIN),
        })
    }
}

impl TimestampAuthority for LocalTsa {
    fn tsa_id(&self) -> &str {
        &self.id
    }

    fn certificate(&self) -> &Certificate {
        self.key.certificate()
    }

    fn issue(&self, hash: &[u8]) -> Result<TimestampToken, EvidenceError> {
        let message_hash = Digest::from_slice(hash).ok_or(EvidenceError::BadHashLength(hash.len()))?;
        let mut last = self.last.lock().expect("tsa lock");
        let now = Timestamp::now().millis();
        let gen = now.max(*last);
        if gen - now > self.max_skew_ms {
            return Err(EvidenceError::ClockSkew(gen - now));
        }
        let gen_time = Timestamp::from_millis(gen).expect("in range");
        let digest = TimestampToken::signed_digest(&message_hash, gen_time, &self.id);
        let tsa_signature = self
            .key
            .sign_digest(&digest)
            .map_err(|e| EvidenceError::KeyUnavailable(e.to_string()))?;
        *last = gen;
        Ok(TimestampToken {
            message_hash,
            gen_time,
            tsa_id: self.id.clone(),
            tsa_signature,
        })
    }
}

/// The three keys of the evidence pipeline, kept apart by role.
#[derive(Clone)]
pub struct Keyring {
    token: Arc<dyn Signer>,
    hash: Arc<dyn Signer>,
    tsa: Arc<dyn TimestampAuthority>,
}

impl Keyring {
    pub fn new(
        token: Arc<dyn Signer>,
        hash: Arc<dyn Signer>,
        tsa: Arc<dyn TimestampAuthority>,
    ) -> Result<Self, EvidenceError> {
        let check = |signer: &dyn Signer, role: KeyRole| {
            if signer.role() == role {
                Ok(())
            } else {
                Err(EvidenceError::KeyUnavailable(format!(
                    "expected a {role} key, got {}",
                    signer.role()
                )))
            }
        };
        check(token.as_ref(), KeyRole::TokenSigning)?;
        check(hash.as_ref(), KeyRole::HashSigning)?;
        if tsa.certificate().role != KeyRole::Timestamping {
            return Err(EvidenceError::KeyUnavailable("TSA certificate is not a timestamping key".into()));
        }
        Ok(Self { token, hash, tsa })
    }

    /// Fresh software keys and a local TSA.
    pub fn generate(subject: &str) -> Self {
        let tsa_key: Arc<dyn Signer> = Arc::new(SoftwareKey::generate_now(&format!("{subject}-tsa"), KeyRole::Timestamping));
        Self::new(
            Arc::new(SoftwareKey::generate_now(subject, KeyRole::TokenSigning)),
            Arc::new(SoftwareKey::generate_now(&format!("{subject}-dss"), KeyRole::HashSigning)),
            Arc::new(LocalTsa::new(format!("{subject}-tsa"), tsa_key, 5_000).expect("timestamping key")),
        )
        .expect("roles match")
    }

    /// Loads `token.key`, `hash.key` and `tsa.key` from `dir`.
    pub fn load(dir: &Path, tsa_id: &str) -> Result<Self, EvidenceError> {
        let load = |name: &str| -> Result<Arc<dyn Signer>, EvidenceError> {
            SoftwareKey::load(&dir.join(name))
                .map(|k| Arc::new(k) as Arc<dyn Signer>)
                .map_err(|e| EvidenceError::KeyUnavailable(e.to_string()))
        };
        Self::new(
            load("token.key")?,
            load("hash.key")?,
            Arc::new(LocalTsa::new(tsa_id, load("tsa.key")?, 5_000)?),
        )
    }

    pub fn token_signer(&self) -> &dyn Signer {
        self.token.as_ref()
    }

    pub fn hash_signer(&self) -> &dyn Signer {
        self.hash.as_ref()
    }

    pub fn tsa(&self) -> &dyn TimestampAuthority {
        self.tsa.as_ref()
    }

    /// Token-signing, hash-signing and TSA certificates.
    pub fn certificates(&self) -> Vec<Certificate> {
        vec![
            self.token.certificate().clone(),
            self.hash.certificate().clone(),
            self.tsa.certificate().clone(),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamps_are_monotone_and_bound_to_hash() {
        let ring = Keyring::generate("svc");
        let h = Digest::of(b"payload");
        let t1 = ring.tsa().issue(h.as_bytes()).unwrap();
        let t2 = ring.tsa().issue(h.as_bytes()).unwrap();
        assert!(t2.gen_time >= t1.gen_time);
        let cert = ring.tsa().certificate();
        assert!(t1.verify(cert, &h));
        assert!(!t1.verify(cert, &Digest::of(b"other")));
        let mut tampered = t1.clone();
        tampered.gen_time = Timestamp::from_millis(t1.gen_time.millis() + 1).unwrap();
        assert!(!tampered.verify(cert, &h));
        assert!(matches!(ring.tsa().issue(&[0; 31]), Err(EvidenceError::BadHashLength(31))));
    }

    #[test]
    fn keyring_enforces_roles() {
        let tsa_key: Arc<dyn Signer> = Arc::new(SoftwareKey::generate_now("t", KeyRole::Timestamping));
        let tsa = Arc::new(LocalTsa::new("t", tsa_key, 0).unwrap());
        let token = Arc::new(SoftwareKey::generate_now("a", KeyRole::TokenSigning));
        let wrong = Arc::new(SoftwareKey::generate_now("b", KeyRole::TokenSigning));
        assert!(Keyring::new(token, wrong, tsa).is_err());
    }

    #[test]
    fn key_files_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        for (name, role) in [
            ("token.key", KeyRole::TokenSigning),
            ("hash.key", KeyRole::HashSigning),
            ("tsa.key", KeyRole::Timestamping),
        ] {
            SoftwareKey::generate_now(name, role).save(&dir.path().join(name)).unwrap();
        }
        let ring = Keyring::load(dir.path(), "tsa-1").unwrap();
        assert_eq!(ring.tsa().tsa_id(), "tsa-1");
        assert_eq!(ring.certificates().len(), 3);
    }
}
