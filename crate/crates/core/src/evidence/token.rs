use serde::{Deserialize, Serialize};

use crate::crypto::{sha256, Certificate, Digest, KeyRole, SignatureBytes};
use crate::meta::ActionName;
use crate::prov::{canonical_bytes_of, Timestamp};

/// Signed statement by a timestamping authority that `message_hash`
/// existed at `gen_time`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TimestampToken {
    pub message_hash: Digest,
    pub gen_time: Timestamp,
    pub tsa_id: String,
    pub tsa_signature: SignatureBytes,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct TimestampBody<'a> {
    gen_time: Timestamp,
    message_hash: &'a Digest,
    tsa_id: &'a str,
}

impl TimestampToken {
    /// Digest the TSA signs.
    pub fn signed_digest(message_hash: &Digest, gen_time: Timestamp, tsa_id: &str) -> [u8; 32] {
        sha256(&canonical_bytes_of(&TimestampBody {
            gen_time,
            message_hash,
            tsa_id,
        }))
    }

    pub fn verify(&self, tsa: &Certificate, expected_hash: &Digest) -> bool {
        self.message_hash == *expected_hash
            && tsa.role == KeyRole::Timestamping
            && tsa.verify_digest(
                &Self::signed_digest(&self.message_hash, self.gen_time, &self.tsa_id),
                &self.tsa_signature,
            )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TokenHeader {
    pub token_id: String,
    pub patient_id: String,
    pub service_id: String,
    pub timestamp: TimestampToken,
    pub tsa_id: String,
    pub notary_id: String,
    /// Token-signing, hash-signing and timestamping certificates, in that
    /// order.
    pub certificates: Vec<Certificate>,
}

impl TokenHeader {
    pub fn certificate(&self, role: KeyRole) -> Option<&Certificate> {
        self.certificates.iter().find(|c| c.role == role)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TokenPayload {
    pub doc_id: String,
    pub action_id: String,
    pub action_name: ActionName,
    pub action_number: u64,
    /// Canonical JSON of the action's meta-provenance.
    pub meta_provenance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_hash: Option<Digest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substitution_hash: Option<Digest>,
    pub request_received_at: Timestamp,
    pub input_timestamps: Vec<Timestamp>,
}

impl TokenPayload {
    pub fn digest(&self) -> Digest {
        Digest::of(&canonical_bytes_of(self))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct NonRepudiationToken {
    pub header: TokenHeader,
    pub payload: TokenPayload,
}

impl NonRepudiationToken {
    /// Digest covered by signature1.
    pub fn digest(&self) -> [u8; 32] {
        sha256(&canonical_bytes_of(self))
    }
}

/// The token as returned to the patient.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SignedToken {
    pub header: TokenHeader,
    pub payload: TokenPayload,
    pub signature1: SignatureBytes,
    /// Fingerprint of the token-signing certificate.
    pub cert_ref: String,
}

impl SignedToken {
    pub fn unsigned(&self) -> NonRepudiationToken {
        NonRepudiationToken {
            header: self.header.clone(),
            payload: self.payload.clone(),
        }
    }

    /// Canonical wire bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        canonical_bytes_of(self)
    }

    /// Parses wire bytes, accepting only the canonical encoding.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        let token: SignedToken = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
        if token.to_bytes() != bytes {
            return Err("token is not in canonical form".into());
        }
        Ok(token)
    }

    /// SHA-256 of the canonical bytes; what the notary stores.
    pub fn hash(&self) -> Digest {
        Digest::of(&self.to_bytes())
    }
}
