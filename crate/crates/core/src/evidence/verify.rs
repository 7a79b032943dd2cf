use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SignedToken;
use crate::crypto::{Certificate, KeyRole, ED25519};
use crate::meta::{ActionName, HistoryDocument};
use crate::notary::NotaryClient;
use crate::prov::{decode_document, encode_document, QualifiedName};

/// The patient-side checks, in report order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    PayloadWellFormed,
    Timestamp,
    PatientLink,
    NotaryRecord,
    HashSignature,
    HashMatch,
    TokenSignature,
    KeyQuality,
}

impl Check {
    pub const ALL: [Check; 8] = [
        Check::PayloadWellFormed,
        Check::Timestamp,
        Check::PatientLink,
        Check::NotaryRecord,
        Check::HashSignature,
        Check::HashMatch,
        Check::TokenSignature,
        Check::KeyQuality,
    ];

    pub fn letter(&self) -> char {
        (b'a' + Self::ALL.iter().position(|c| c == self).expect("listed") as u8) as char
    }

    pub fn description(&self) -> &'static str {
        match self {
            Check::PayloadWellFormed => "payload well-formed, meta-provenance decodes",
            Check::Timestamp => "timestamp token valid",
            Check::PatientLink => "token linked to patient",
            Check::NotaryRecord => "notary holds a record for the token",
            Check::HashSignature => "notarized hash signed by the DSS",
            Check::HashMatch => "notarized hash equals token hash",
            Check::TokenSignature => "token signature valid",
            Check::KeyQuality => "keys trusted, unrevoked, unexpired, allowed algorithm and size",
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}) {}", self.letter(), self.description())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CheckResult {
    pub check: Check,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VerificationReport {
    pub token_id: Option<String>,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

impl VerificationReport {
    pub fn check(&self, check: Check) -> &CheckResult {
        self.checks.iter().find(|c| c.check == check).expect("every check reported")
    }

    pub fn failed(&self) -> Vec<Check> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.check).collect()
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(id) = &self.token_id {
            writeln!(f, "token {id}")?;
        }
        for c in &self.checks {
            let mark = if c.passed { "PASS" } else { "FAIL" };
            if c.detail.is_empty() {
                writeln!(f, "  {mark} {}", c.check)?;
            } else {
                writeln!(f, "  {mark} {}: {}", c.check, c.detail)?;
            }
        }
        write!(f, "overall: {}", if self.passed { "PASS" } else { "FAIL" })
    }
}

/// What the verifying party trusts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TrustPolicy {
    /// Certificate fingerprints accepted as the DSS and TSA keys.
    pub trusted: BTreeSet<String>,
    #[serde(default)]
    pub revoked: BTreeSet<String>,
    #[serde(default = "default_algorithms")]
    pub allowed_algorithms: BTreeSet<String>,
    #[serde(default = "default_min_key_size")]
    pub min_key_size: u32,
    /// Tolerated distance between the request time and the TSA time.
    #[serde(default = "default_skew")]
    pub max_clock_skew_ms: i64,
}

fn default_algorithms() -> BTreeSet<String> {
    BTreeSet::from([ED25519.to_string()])
}

fn default_min_key_size() -> u32 {
    256
}

fn default_skew() -> i64 {
    5_000
}

impl TrustPolicy {
    pub fn trusting<'a>(certificates: impl IntoIterator<Item = &'a Certificate>) -> Self {
        Self {
            trusted: certificates.into_iter().map(Certificate::fingerprint).collect(),
            revoked: BTreeSet::new(),
            allowed_algorithms: default_algorithms(),
            min_key_size: default_min_key_size(),
            max_clock_skew_ms: default_skew(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Adds fingerprints from a revocation list: one per line, `#` starts
    /// a comment.
    pub fn with_revocation_list(mut self, path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if !line.is_empty() {
                self.revoked.insert(line.to_ascii_lowercase());
            }
        }
        Ok(self)
    }

    fn key_problem(&self, cert: &Certificate, role: KeyRole, at: crate::prov::Timestamp) -> Option<String> {
        let fp = cert.fingerprint();
        if cert.role != role {
            Some(format!("{} certificate has role {}", role, cert.role))
        } else if !self.trusted.contains(&fp) {
            Some(format!("{role} certificate {fp} is not trusted"))
        } else if self.revoked.contains(&fp) {
            Some(format!("{role} certificate {fp} is revoked"))
        } else if !self.allowed_algorithms.contains(&cert.algorithm) {
            Some(format!("{role} algorithm {} not allowed", cert.algorithm))
        } else if cert.key_size < self.min_key_size {
            Some(format!("{role} key size {} below {}", cert.key_size, self.min_key_size))
        } else if !cert.valid_at(at) {
            Some(format!("{role} certificate not valid at {at}"))
        } else if !cert.verify_self_signature() {
            Some(format!("{role} certificate self-signature invalid"))
        } else {
            None
        }
    }
}

struct Builder {
    checks: Vec<CheckResult>,
}

impl Builder {
    fn record(&mut self, check: Check, outcome: Result<(), String>) {
        let (passed, detail) = match outcome {
            Ok(()) => (true, String::new()),
            Err(d) => (false, d),
        };
        self.checks.push(CheckResult { check, passed, detail });
    }

    fn finish(mut self, token_id: Option<String>) -> VerificationReport {
        self.checks.sort_by_key(|c| c.check);
        let passed = self.checks.len() == Check::ALL.len() && self.checks.iter().all(|c| c.passed);
        VerificationReport {
            token_id,
            checks: self.checks,
            passed,
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Parses token bytes strictly, then verifies. Unparsable input fails
/// every check.
pub fn verify_token_bytes(
    bytes: &[u8],
    patient_id: &str,
    notary: &dyn NotaryClient,
    policy: &TrustPolicy,
) -> VerificationReport {
    match SignedToken::from_bytes(bytes) {
        Ok(token) => verify_evidence(&token, patient_id, notary, policy),
        Err(e) => {
            let mut b = Builder { checks: Vec::new() };
            b.record(Check::PayloadWellFormed, Err(format!("token does not parse: {e}")));
            for c in &Check::ALL[1..] {
                b.record(*c, Err("not evaluated".into()));
            }
            b.finish(None)
        }
    }
}

fn check_payload(token: &SignedToken) -> Result<(), String> {
    let h = &token.header;
    let p = &token.payload;
    for (name, value) in [
        ("tokenId", &h.token_id),
        ("patientId", &h.patient_id),
        ("serviceId", &h.service_id),
        ("tsaId", &h.tsa_id),
        ("notaryId", &h.notary_id),
        ("docId", &p.doc_id),
        ("certRef", &token.cert_ref),
    ] {
        ensure(!value.is_empty(), || format!("{name} is empty"))?;
    }
    ensure(h.certificates.len() == 3, || format!("{} certificates, expected 3", h.certificates.len()))?;
    ensure(!p.input_timestamps.is_empty(), || "no input timestamps".into())?;
    ensure(p.action_number >= 1, || "action number 0".into())?;
    ensure(
        (p.action_name == ActionName::RegisterTemplate) == p.template_hash.is_some(),
        || "template hash present for the wrong action".into(),
    )?;
    ensure(
        p.action_name.takes_substitution() == p.substitution_hash.is_some(),
        || "substitution hash present for the wrong action".into(),
    )?;
    let expected_id = HistoryDocument::action_id(p.action_number);
    ensure(p.action_id == expected_id.to_string(), || {
        format!("action id {} does not match number {}", p.action_id, p.action_number)
    })?;
    let doc = decode_document(&p.meta_provenance).map_err(|e| format!("meta-provenance: {e}"))?;
    ensure(encode_document(&doc) == p.meta_provenance, || {
        "meta-provenance not in canonical form".into()
    })?;
    let action = doc
        .element(&expected_id)
        .ok_or_else(|| format!("meta-provenance lacks {expected_id}"))?;
    let meta = |l: &str| QualifiedName::of("meta", l);
    ensure(
        action.attribute(&meta("actionName")).and_then(|v| v.as_str()) == Some(p.action_name.as_str()),
        || "meta-provenance action name differs".into(),
    )?;
    ensure(
        action.attribute(&meta("actionNumber")).and_then(|v| v.as_integer()) == Some(p.action_number as i64),
        || "meta-provenance action number differs".into(),
    )?;
    Ok(())
}

/// Runs checks (a) to (h) against `notary`.
pub fn verify_evidence(
    token: &SignedToken,
    patient_id: &str,
    notary: &dyn NotaryClient,
    policy: &TrustPolicy,
) -> VerificationReport {
    let mut b = Builder { checks: Vec::new() };
    let h = &token.header;
    let p = &token.payload;
    let gen_time = h.timestamp.gen_time;
    let key1 = h.certificate(KeyRole::TokenSigning);
    let key2 = h.certificate(KeyRole::HashSigning);
    let tsa = h.certificate(KeyRole::Timestamping);

    b.record(Check::PayloadWellFormed, check_payload(token));

    b.record(
        Check::Timestamp,
        (|| {
            let tsa = tsa.ok_or("no timestamping certificate")?;
            ensure(h.timestamp.tsa_id == h.tsa_id, || "TSA id mismatch".into())?;
            ensure(h.timestamp.verify(tsa, &p.digest()), || {
                "timestamp signature or message hash invalid".into()
            })?;
            let skew = gen_time.millis() - p.request_received_at.millis();
            ensure((-policy.max_clock_skew_ms..).contains(&skew), || {
                format!("timestamp {skew} ms from request time")
            })
        })(),
    );

    b.record(
        Check::PatientLink,
        ensure(h.patient_id == patient_id, || {
            format!("token is for {:?}, expected {patient_id:?}", h.patient_id)
        }),
    );

    let recomputed = token.hash();
    let record = match notary.validate(&h.token_id, Some(&recomputed)) {
        Ok(report) if report.found => {
            b.record(Check::NotaryRecord, Ok(()));
            report.record
        }
        Ok(_) => {
            b.record(Check::NotaryRecord, Err(format!("notary {} has no record", h.notary_id)));
            None
        }
        Err(e) => {
            b.record(Check::NotaryRecord, Err(format!("notary lookup failed: {e}")));
            None
        }
    };

    b.record(
        Check::HashSignature,
        (|| {
            let record = record.as_ref().ok_or("no notary record")?;
            let key2 = key2.ok_or("no hash-signing certificate")?;
            ensure(policy.trusted.contains(&key2.fingerprint()), || {
                "hash-signing key is not the DSS's".into()
            })?;
            ensure(key2.verify_digest(record.hash.as_bytes(), &record.signature2), || {
                "signature2 does not verify".into()
            })
        })(),
    );

    b.record(
        Check::HashMatch,
        match &record {
            Some(r) => ensure(r.hash == recomputed, || {
                format!("stored {} but token hashes to {}", r.hash.hex(), recomputed.hex())
            }),
            None => Err("no notary record".into()),
        },
    );

    b.record(
        Check::TokenSignature,
        (|| {
            let key1 = key1.ok_or("no token-signing certificate")?;
            ensure(key1.fingerprint() == token.cert_ref, || "certRef does not name key 1".into())?;
            ensure(key1.verify_digest(&token.unsigned().digest(), &token.signature1), || {
                "signature1 does not verify".into()
            })
        })(),
    );

    b.record(
        Check::KeyQuality,
        (|| {
            for (cert, role) in [
                (key1, KeyRole::TokenSigning),
                (key2, KeyRole::HashSigning),
                (tsa, KeyRole::Timestamping),
            ] {
                let cert = cert.ok_or_else(|| format!("no {role} certificate"))?;
                if let Some(problem) = policy.key_problem(cert, role, gen_time) {
                    return Err(problem);
                }
            }
            Ok(())
        })(),
    );

    b.finish(Some(h.token_id.clone()))
}
