use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{AuditReport, NotaryBackend, NotaryError, NotaryKind, NotaryRecord};
use crate::prov::canonical_bytes_of;

const RECORDS: &str = "records.log";

/// Encodes one frame: length, canonical record JSON, CRC32 of the JSON.
pub(crate) fn frame(record: &NotaryRecord) -> Vec<u8> {
    let json = canonical_bytes_of(record);
    let mut out = Vec::with_capacity(json.len() + 8);
    out.extend_from_slice(&(json.len() as u32).to_be_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&crc32fast::hash(&json).to_be_bytes());
    out
}

enum Frame {
    Record(NotaryRecord, usize),
    Bad(String),
}

/// Parses the frame at the start of `bytes`.
fn parse_frame(bytes: &[u8]) -> Frame {
    if bytes.len() < 4 {
        return Frame::Bad("truncated length prefix".into());
    }
    let len = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
    let Some(end) = len.checked_add(8).filter(|e| *e <= bytes.len()) else {
        return Frame::Bad(format!("frame of {len} bytes runs past end of file"));
    };
    let json = &bytes[4..4 + len];
    let crc = u32::from_be_bytes(bytes[4 + len..end].try_into().expect("4 bytes"));
    if crc32fast::hash(json) != crc {
        return Frame::Bad("CRC32 mismatch".into());
    }
    match serde_json::from_slice::<NotaryRecord>(json) {
        Ok(r) if canonical_bytes_of(&r) == json => Frame::Record(r, end),
        Ok(_) => Frame::Bad("record not in canonical form".into()),
        Err(e) => Frame::Bad(format!("unparsable record: {e}")),
    }
}

struct Inner {
    log: File,
    len: u64,
    index: HashMap<String, (NotaryRecord, u64)>,
}

/// Append-only length-prefixed record file.
pub struct FileBackend {
    path: PathBuf,
    fsync: bool,
    inner: Mutex<Inner>,
}

impl FileBackend {
    pub fn open(dir: &Path, fsync: bool) -> Result<Self, NotaryError> {
        fs::create_dir_all(dir)?;
        let path = dir.join(RECORDS);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let mut index = HashMap::new();
        let mut offset = 0;
        while offset < bytes.len() {
            match parse_frame(&bytes[offset..]) {
                Frame::Record(r, used) => {
                    index.insert(r.token_id.clone(), (r, offset as u64));
                    offset += used;
                }
                Frame::Bad(_) => break,
            }
        }
        let log = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            fsync,
            inner: Mutex::new(Inner {
                log,
                len: bytes.len() as u64,
                index,
            }),
        })
    }
}

impl NotaryBackend for FileBackend {
    fn kind(&self) -> NotaryKind {
        NotaryKind::File
    }

    fn add(&self, record: &NotaryRecord) -> Result<String, NotaryError> {
        let mut inner = self.inner.lock().expect("file lock");
        if inner.index.contains_key(&record.token_id) {
            return Err(NotaryError::DuplicateTokenId(record.token_id.clone()));
        }
        let bytes = frame(record);
        let offset = inner.len;
        inner.log.write_all(&bytes)?;
        if self.fsync {
            inner.log.sync_data()?;
        }
        inner.len += bytes.len() as u64;
        inner.index.insert(record.token_id.clone(), (record.clone(), offset));
        Ok(format!("offset:{offset}"))
    }

    fn get(&self, token_id: &str) -> Option<(NotaryRecord, String)> {
        let inner = self.inner.lock().expect("file lock");
        inner
            .index
            .get(token_id)
            .map(|(r, o)| (r.clone(), format!("offset:{o}")))
    }

    fn audit(&self) -> AuditReport {
        let _guard = self.inner.lock().expect("file lock");
        let mut report = AuditReport::clean(NotaryKind::File, 0);
        let bytes = match fs::read(&self.path) {
            Ok(b) => b,
            Err(e) => {
                report.issue("records.log", e.to_string());
                return report;
            }
        };
        let mut seen = HashMap::new();
        let mut offset = 0;
        while offset < bytes.len() {
            match parse_frame(&bytes[offset..]) {
                Frame::Record(r, used) => {
                    if let Some(first) = seen.insert(r.token_id.clone(), offset) {
                        report.first_bad_offset.get_or_insert(offset as u64);
                        report.issue(format!("offset {offset}"), format!("token {} already at offset {first}", r.token_id));
                    }
                    report.records += 1;
                    offset += used;
                }
                Frame::Bad(msg) => {
                    report.first_bad_offset.get_or_insert(offset as u64);
                    report.issue(format!("offset {offset}"), msg);
                    break;
                }
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

    fn record(id: &str) -> NotaryRecord {
        NotaryRecord {
            token_id: id.into(),
            hash: Digest::of(id.as_bytes()),
            signature2: B64([2; 64]),
            received_at: Timestamp::from_millis(1_600_000_000_000).unwrap(),
        }
    }

    #[test]
    fn append_only_growth() {
        let dir = tempfile::tempdir().unwrap();
        let backend = FileBackend::open(dir.path(), true).unwrap();
        backend.add(&record("a")).unwrap();
        let before = fs::read(dir.path().join(RECORDS)).unwrap();
        backend.add(&record("b")).unwrap();
        let after = fs::read(dir.path().join(RECORDS)).unwrap();
        assert!(after.len() > before.len());
        assert_eq!(&after[..before.len()], &before[..]);
        assert_eq!(after[before.len()..], frame(&record("b"))[..]);
    }

    #[test]
    fn truncation_is_a_framing_error_at_the_tail() {
        let dir = tempfile::tempdir().unwrap();
        let backend = FileBackend::open(dir.path(), false).unwrap();
        backend.add(&record("a")).unwrap();
        let second = backend.add(&record("b")).unwrap();
        let path = dir.path().join(RECORDS);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let report = backend.audit();
        assert_eq!(Some(format!("offset:{}", report.first_bad_offset.unwrap())), Some(second));
        assert_eq!(report.records, 1);
    }
}
