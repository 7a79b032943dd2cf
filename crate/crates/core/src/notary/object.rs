use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use super::{AuditReport, NotaryBackend, NotaryError, NotaryKind, NotaryRecord};
use crate::crypto::sha256;
use crate::prov::canonical_bytes_of;

const OBJECTS: &str = "objects";

fn object_bytes(record: &NotaryRecord) -> Vec<u8> {
    let json = canonical_bytes_of(record);
    let mut out = hex::encode(sha256(&json)).into_bytes();
    out.push(b'\n');
    out.extend_from_slice(&json);
    out
}

fn parse_object(name: &str, bytes: &[u8]) -> Result<NotaryRecord, String> {
    let split = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or("missing content address line")?;
    let (address, json) = (&bytes[..split], &bytes[split + 1..]);
    if address != hex::encode(sha256(json)).as_bytes() {
        return Err("content does not match its address".into());
    }
    let record: NotaryRecord = serde_json::from_slice(json).map_err(|e| format!("unparsable record: {e}"))?;
    if canonical_bytes_of(&record) != json {
        return Err("record not in canonical form".into());
    }
    if record.token_id != name {
        return Err(format!("object holds token {}", record.token_id));
    }
    Ok(record)
}

/// Write-once object directory; one file per token id.
pub struct ObjectBackend {
    dir: PathBuf,
    index: RwLock<HashMap<String, NotaryRecord>>,
}

impl ObjectBackend {
    pub fn open(dir: &Path) -> Result<Self, NotaryError> {
        let objects = dir.join(OBJECTS);
        fs::create_dir_all(&objects)?;
        let mut index = HashMap::new();
        for entry in fs::read_dir(&objects)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Ok(record) = parse_object(&name, &fs::read(entry.path())?) {
                index.insert(name, record);
            }
        }
        Ok(Self {
            dir: objects,
            index: RwLock::new(index),
        })
    }
}

impl NotaryBackend for ObjectBackend {
    fn kind(&self) -> NotaryKind {
        NotaryKind::Object
    }

    fn add(&self, record: &NotaryRecord) -> Result<String, NotaryError> {
        let mut index = self.index.write().expect("object lock");
        let path = self.dir.join(&record.token_id);
        let mut file = match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(NotaryError::DuplicateTokenId(record.token_id.clone()))
            }
            Err(e) => return Err(e.into()),
        };
        if let Err(e) = file.write_all(&object_bytes(record)) {
            drop(file);
            let _ = fs::remove_file(&path);
            return Err(e.into());
        }
        index.insert(record.token_id.clone(), record.clone());
        Ok(format!("object:{}", record.token_id))
    }

    fn get(&self, token_id: &str) -> Option<(NotaryRecord, String)> {
        self.index
            .read()
            .expect("object lock")
            .get(token_id)
            .map(|r| (r.clone(), format!("object:{token_id}")))
    }

    fn audit(&self) -> AuditReport {
        let index = self.index.read().expect("object lock");
        let mut report = AuditReport::clean(NotaryKind::Object, 0);
        let entries = match fs::read_dir(&self.dir) {
            Ok(e) => e,
            Err(e) => {
                report.issue("objects", e.to_string());
                return report;
            }
        };
        let mut names: Vec<String> = entries
            .filter_map(Result::ok)
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        for name in &names {
            match fs::read(self.dir.join(name)).map_err(|e| e.to_string()).and_then(|b| parse_object(name, &b)) {
                Ok(_) => report.records += 1,
                Err(msg) => report.issue(format!("object {name}"), msg),
            }
        }
        for id in index.keys() {
            if !names.contains(id) {
                report.issue(format!("object {id}"), "object missing");
            }
        }
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{Digest, B64};
    use crate::prov::Timestamp;

    #[test]
    fn content_address_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        let backend = ObjectBackend::open(dir.path()).unwrap();
        let record = NotaryRecord {
            token_id: "tok".into(),
            hash: Digest::of(b"x"),
            signature2: B64([3; 64]),
            received_at: Timestamp::from_millis(0).unwrap(),
        };
        backend.add(&record).unwrap();
        let path = dir.path().join(OBJECTS).join("tok");
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 3;
        bytes[last] ^= 1;
        fs::write(&path, bytes).unwrap();
        let report = backend.audit();
        assert_eq!(report.issues.len(), 1);
        assert_eq!(report.issues[0].location, "object tok");
    }
}
