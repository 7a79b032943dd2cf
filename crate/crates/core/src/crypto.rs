//! Hashing, fixed-width binary fields and software signing keys.
//!
//! Signatures are Ed25519 over the SHA-256 digest of canonical bytes.
//! Certificates are self-signed JSON documents; their fingerprint is the
//! hex SHA-256 of their canonical encoding.

use std::fmt;
use std::path::Path;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use ed25519_dalek::{Signer as _, SigningKey, Verifier as _, VerifyingKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::prov::{canonical_bytes_of, Timestamp};

pub const ED25519: &str = "Ed25519";

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

pub fn b64url(bytes: &[u8]) -> String {
    URL_SAFE_NO_PAD.encode(bytes)
}

pub fn from_b64url(s: &str) -> Result<Vec<u8>, base64::DecodeError> {
    URL_SAFE_NO_PAD.decode(s)
}

/// Fixed-width binary value, base64url (unpadded) on the wire.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct B64<const N: usize>(pub [u8; N]);

pub type Digest = B64<32>;
pub type SignatureBytes = B64<64>;
pub type PublicKeyBytes = B64<32>;

impl<const N: usize> B64<N> {
    pub fn as_bytes(&self) -> &[u8; N] {
        &self.0
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        bytes.try_into().ok().map(B64)
    }

    pub fn hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl Digest {
    pub fn of(bytes: &[u8]) -> Self {
        B64(sha256(bytes))
    }
}

impl<const N: usize> fmt::Display for B64<N> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&b64url(&self.0))
    }
}

impl<const N: usize> fmt::Debug for B64<N> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "B64({})", b64url(&self.0))
    }
}

impl<const N: usize> std::str::FromStr for B64<N> {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = from_b64url(s).map_err(|e| e.to_string())?;
        Self::from_slice(&bytes).ok_or_else(|| format!("expected {N} bytes, got {}", bytes.len()))
    }
}

impl<const N: usize> Serialize for B64<N> {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de, const N: usize> Deserialize<'de> for B64<N> {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error)]
pub enum KeyError {
    #[error("key unavailable: {0}")]
    Unavailable(String),
    #[error("key file {path}: {message}")]
    BadKeyFile { path: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeyRole {
    /// Signs evidence tokens.
    TokenSigning,
    /// Signs token hashes submitted to the notary.
    HashSigning,
    /// Signs timestamp tokens.
    Timestamping,
}

impl fmt::Display for KeyRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KeyRole::TokenSigning => "token-signing",
            KeyRole::HashSigning => "hash-signing",
            KeyRole::Timestamping => "timestamping",
        })
    }
}

/// Self-signed public-key certificate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Certificate {
    pub subject: String,
    pub role: KeyRole,
    pub algorithm: String,
    pub key_size: u32,
    pub public_key: PublicKeyBytes,
    pub not_before: Timestamp,
    pub not_after: Timestamp,
    pub self_signature: SignatureBytes,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct CertificateBody<'a> {
    subject: &'a str,
    role: KeyRole,
    algorithm: &'a str,
    key_size: u32,
    public_key: &'a PublicKeyBytes,
    not_before: Timestamp,
    not_after: Timestamp,
}

impl Certificate {
    fn body_digest(&self) -> [u8; 32] {
        sha256(&canonical_bytes_of(&CertificateBody {
            subject: &self.subject,
            role: self.role,
            algorithm: &self.algorithm,
            key_size: self.key_size,
            public_key: &self.public_key,
            not_before: self.not_before,
            not_after: self.not_after,
        }))
    }

    /// Hex SHA-256 of the canonical certificate, used as its reference.
    pub fn fingerprint(&self) -> String {
        hex::encode(sha256(&canonical_bytes_of(self)))
    }

    pub fn verify_self_signature(&self) -> bool {
        self.verify_digest(&self.body_digest(), &self.self_signature)
    }

    /// Verifies an Ed25519 signature over a 32-byte digest.
    pub fn verify_digest(&self, digest: &[u8; 32], signature: &SignatureBytes) -> bool {
        if self.algorithm != ED25519 {
            return false;
        }
        let Ok(key) = VerifyingKey::from_bytes(self.public_key.as_bytes()) else {
            return false;
        };
        let sig = ed25519_dalek::Signature::from_bytes(signature.as_bytes());
        key.verify(digest, &sig).is_ok()
    }

    pub fn valid_at(&self, at: Timestamp) -> bool {
        self.not_before <= at && at <= self.not_after
    }
}

/// A signing-key handle. Private material never leaves the implementation.
pub trait Signer: Send + Sync {
    fn certificate(&self) -> &Certificate;
    fn sign_digest(&self, digest: &[u8; 32]) -> Result<SignatureBytes, KeyError>;

    fn role(&self) -> KeyRole {
        self.certificate().role
    }
}

/// In-memory Ed25519 key standing in for a hardware token.
pub struct SoftwareKey {
    key: SigningKey,
    certificate: Certificate,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct KeyFile {
    certificate: Certificate,
    secret_key: B64<32>,
}

impl SoftwareKey {
    pub fn generate(subject: &str, role: KeyRole, not_before: Timestamp, not_after: Timestamp) -> Self {
        let key = SigningKey::generate(&mut rand::rngs::OsRng);
        Self::from_signing_key(key, subject, role, not_before, not_after)
    }

    /// Generated key valid for ten years from now.
    pub fn generate_now(subject: &str, role: KeyRole) -> Self {
        let now = Timestamp::now();
        let later = Timestamp::from_millis(now.millis() + 10 * 365 * 24 * 3600 * 1000).expect("in range");
        let earlier = Timestamp::from_millis(now.millis() - 24 * 3600 * 1000).expect("in range");
        Self::generate(subject, role, earlier, later)
    }

    pub fn from_seed(seed: [u8; 32], subject: &str, role: KeyRole, not_before: Timestamp, not_after: Timestamp) -> Self {
        Self::from_signing_key(SigningKey::from_bytes(&seed), subject, role, not_before, not_after)
    }

    fn from_signing_key(
        key: SigningKey,
        subject: &str,
        role: KeyRole,
        not_before: Timestamp,
        not_after: Timestamp,
    ) -> Self {
        let mut certificate = Certificate {
            subject: subject.to_string(),
            role,
            algorithm: ED25519.to_string(),
            key_size: 256,
            public_key: B64(key.verifying_key().to_bytes()),
            not_before,
            not_after,
            self_signature: B64([0; 64]),
        };
        let digest = certificate.body_digest();
        certificate.self_signature = B64(key.sign(&digest).to_bytes());
        Self { key, certificate }
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let file = KeyFile {
            certificate: self.certificate.clone(),
            secret_key: B64(self.key.to_bytes()),
        };
        std::fs::write(path, serde_json::to_vec_pretty(&file)?)
    }

    pub fn load(path: &Path) -> Result<Self, KeyError> {
        let bad = |message: String| KeyError::BadKeyFile {
            path: path.display().to_string(),
            message,
        };
        let bytes = std::fs::read(path).map_err(|e| bad(e.to_string()))?;
        let file: KeyFile = serde_json::from_slice(&bytes).map_err(|e| bad(e.to_string()))?;
        let key = SigningKey::from_bytes(file.secret_key.as_bytes());
        if key.verifying_key().to_bytes() != file.certificate.public_key.0 {
            return Err(bad("certificate does not match secret key".into()));
        }
        if !file.certificate.verify_self_signature() {
            return Err(bad("certificate self-signature invalid".into()));
        }
        Ok(Self {
            key,
            certificate: file.certificate,
        })
    }
}

impl Signer for SoftwareKey {
    fn certificate(&self) -> &Certificate {
        &self.certificate
    }

    fn sign_digest(&self, digest: &[u8; 32]) -> Result<SignatureBytes, KeyError> {
        Ok(B64(self.key.sign(digest).to_bytes()))
    }
}
