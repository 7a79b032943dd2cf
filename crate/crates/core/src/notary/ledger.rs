use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{sync_dir, AuditReport, NotaryBackend, NotaryError, NotaryKind, NotaryRecord};
use crate::crypto::{sha256, Digest, B64};
use crate::prov::canonical_bytes_of;

const BLOCKS: &str = "blocks.log";
const STATE: &str = "state.json";
const GENESIS: Digest = B64([0; 32]);

#[derive(Clone, Debug)]
pub struct LedgerOptions {
    /// fsync the block log and the head pointer on every commit.
    pub fsync: bool,
    /// Artificial extra latency per commit.
    pub commit_delay: Duration,
    /// Records per block.
    pub batch_size: usize,
    /// A partial batch older than this is committed by the next operation.
    pub flush_interval: Duration,
}

impl Default for LedgerOptions {
    fn default() -> Self {
        Self {
            fsync: true,
            commit_delay: Duration::ZERO,
            batch_size: 1,
            flush_interval: Duration::from_millis(50),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Block {
    pub index: u64,
    pub prev_hash: Digest,
    pub records: Vec<NotaryRecord>,
    pub block_hash: Digest,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct Head {
    height: u64,
    head_hash: Digest,
}

/// SHA-256 over the 8-byte big-endian index, the previous hash and the
/// canonical JSON array of records.
pub fn block_hash(index: u64, prev_hash: &Digest, records: &[NotaryRecord]) -> Digest {
    let mut bytes = index.to_be_bytes().to_vec();
    bytes.extend_from_slice(prev_hash.as_bytes());
    bytes.extend_from_slice(&canonical_bytes_of(&records));
    B64(sha256(&bytes))
}

struct Inner {
    log: File,
    height: u64,
    head: Digest,
    index: HashMap<String, (NotaryRecord, u64)>,
    pending: Vec<NotaryRecord>,
    pending_since: Option<Instant>,
}

/// Hash-chained block log.
pub struct LedgerBackend {
    dir: PathBuf,
    options: LedgerOptions,
    inner: Mutex<Inner>,
}

impl LedgerBackend {
    pub fn open(dir: &Path, options: LedgerOptions) -> Result<Self, NotaryError> {
        fs::create_dir_all(dir)?;
        let path = dir.join(BLOCKS);
        let existing = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let mut height = 0;
        let mut head = GENESIS;
        let mut index = HashMap::new();
        for line in existing.split(|b| *b == b'\n').filter(|l| !l.is_empty()) {
            let Ok(block) = serde_json::from_slice::<Block>(line) else {
                break;
            };
            for r in &block.records {
                index.insert(r.token_id.clone(), (r.clone(), block.index));
            }
            height = block.index + 1;
            head = block.block_hash;
        }
        let log = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            options: LedgerOptions {
                batch_size: options.batch_size.max(1),
                ..options
            },
            inner: Mutex::new(Inner {
                log,
                height,
                head,
                index,
                pending: Vec::new(),
                pending_since: None,
            }),
        })
    }

    /// Commits any partial batch.
    pub fn flush(&self) -> Result<(), NotaryError> {
        let mut inner = self.inner.lock().expect("ledger lock");
        self.commit(&mut inner)
    }

    fn commit(&self, inner: &mut Inner) -> Result<(), NotaryError> {
        if inner.pending.is_empty() {
            return Ok(());
        }
        let records = std::mem::take(&mut inner.pending);
        inner.pending_since = None;
        let index = inner.height;
        let hash = block_hash(index, &inner.head, &records);
        let block = Block {
            index,
            prev_hash: inner.head,
            records,
            block_hash: hash,
        };
        let result = self.write_block(inner, &block);
        if let Err(e) = result {
            for r in &block.records {
                inner.index.remove(&r.token_id);
            }
            return Err(e);
        }
        inner.height = index + 1;
        inner.head = hash;
        if !self.options.commit_delay.is_zero() {
            std::thread::sleep(self.options.commit_delay);
        }
        Ok(())
    }

    fn write_block(&self, inner: &mut Inner, block: &Block) -> Result<(), NotaryError> {
        let mut line = canonical_bytes_of(block);
        line.push(b'\n');
        inner.log.write_all(&line)?;
        if self.options.fsync {
            inner.log.sync_data()?;
        }
        let head = canonical_bytes_of(&Head {
            height: block.index + 1,
            head_hash: block.block_hash,
        });
        let tmp = self.dir.join(format!("{STATE}.tmp"));
        {
            let mut f = File::create(&tmp)?;
            f.write_all(&head)?;
            if self.options.fsync {
                f.sync_data()?;
            }
        }
        fs::rename(&tmp, self.dir.join(STATE))?;
        if self.options.fsync {
            sync_dir(&self.dir)?;
        }
        Ok(())
    }

    fn flush_if_stale(&self, inner: &mut Inner) {
        if let Some(since) = inner.pending_since {
            if since.elapsed() >= self.options.flush_interval {
                let _ = self.commit(inner);
            }
        }
    }
}

impl Drop for LedgerBackend {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

impl NotaryBackend for LedgerBackend {
    fn kind(&self) -> NotaryKind {
        NotaryKind::Ledger
    }

    fn add(&self, record: &NotaryRecord) -> Result<String, NotaryError> {
        let mut inner = self.inner.lock().expect("ledger lock");
        self.flush_if_stale(&mut inner);
        if inner.index.contains_key(&record.token_id) {
            return Err(NotaryError::DuplicateTokenId(record.token_id.clone()));
        }
        let block = inner.height;
        inner.index.insert(record.token_id.clone(), (record.clone(), block));
        inner.pending.push(record.clone());
        inner.pending_since.get_or_insert_with(Instant::now);
        if inner.pending.len() >= self.options.batch_size {
            self.commit(&mut inner)?;
        }
        Ok(format!("block:{block}"))
    }

    fn get(&self, token_id: &str) -> Option<(NotaryRecord, String)> {
        let mut inner = self.inner.lock().expect("ledger lock");
        self.flush_if_stale(&mut inner);
        inner
            .index
            .get(token_id)
            .map(|(r, b)| (r.clone(), format!("block:{b}")))
    }

    fn audit(&self) -> AuditReport {
        let _guard = self.inner.lock().expect("ledger lock");
        let mut report = AuditReport::clean(NotaryKind::Ledger, 0);
        let bytes = match fs::read(self.dir.join(BLOCKS)) {
            Ok(b) => b,
            Err(e) => {
                report.issue("blocks.log", e.to_string());
                return report;
            }
        };
        let mut lines: Vec<&[u8]> = bytes.split(|b| *b == b'\n').collect();
        let tail = lines.pop().unwrap_or_default();
        let mut prev = GENESIS;
        let mut seen = HashMap::new();
        let mut height = 0u64;
        let broken = |report: &mut AuditReport, i: u64, msg: String| {
            report.first_broken_block.get_or_insert(i);
            report.issue(format!("block {i}"), msg);
        };
        for (i, line) in lines.iter().enumerate() {
            let i = i as u64;
            let block: Block = match serde_json::from_slice(line) {
                Ok(b) => b,
                Err(e) => {
                    broken(&mut report, i, format!("unparsable: {e}"));
                    break;
                }
            };
            if canonical_bytes_of(&block) != *line {
                broken(&mut report, i, "not in canonical form".into());
            }
            if block.index != i {
                broken(&mut report, i, format!("index field is {}", block.index));
            }
            if block.prev_hash != prev {
                broken(&mut report, i, "prevHash does not match the previous block".into());
            }
            if block_hash(block.index, &block.prev_hash, &block.records) != block.block_hash {
                broken(&mut report, i, "blockHash does not match its contents".into());
            }
            for r in &block.records {
                if let Some(first) = seen.insert(r.token_id.clone(), i) {
                    broken(&mut report, i, format!("token {} already in block {first}", r.token_id));
                }
            }
            report.records += block.records.len() as u64;
            prev = block.block_hash;
            height = i + 1;
        }
        if !tail.is_empty() {
            let at = lines.len() as u64;
            broken(&mut report, at, "truncated block at end of log".into());
        }
        match fs::read(self.dir.join(STATE)) {
            Ok(state) => match serde_json::from_slice::<Head>(&state) {
                Ok(head) => {
                    if canonical_bytes_of(&head) != state {
                        report.issue("state", "not in canonical form");
                    }
                    if head.height != height || head.head_hash != prev {
                        report.issue("state", "head pointer disagrees with the chain");
                    }
                }
                Err(e) => report.issue("state", format!("unparsable: {e}")),
            },
            Err(e) if e.kind() == std::io::ErrorKind::NotFound && height == 0 => {}
            Err(e) => report.issue("state", e.to_string()),
        }
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prov::Timestamp;

    fn record(id: &str) -> NotaryRecord {
        NotaryRecord {
            token_id: id.into(),
            hash: Digest::of(id.as_bytes()),
            signature2: B64([1; 64]),
            received_at: Timestamp::from_millis(1_700_000_000_000).unwrap(),
        }
    }

    #[test]
    fn chain_links_and_genesis() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = LedgerBackend::open(dir.path(), LedgerOptions::default()).unwrap();
        for i in 0..3 {
            assert_eq!(ledger.add(&record(&format!("t{i}"))).unwrap(), format!("block:{i}"));
        }
        let text = fs::read_to_string(dir.path().join(BLOCKS)).unwrap();
        let blocks: Vec<Block> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(blocks[0].prev_hash, GENESIS);
        for w in blocks.windows(2) {
            assert_eq!(w[1].prev_hash, w[0].block_hash);
        }
        // independent recomputation of the first block hash
        let mut pre = 0u64.to_be_bytes().to_vec();
        pre.extend([0u8; 32]);
        pre.extend(canonical_bytes_of(&blocks[0].records));
        assert_eq!(blocks[0].block_hash.0, sha256(&pre));
    }

    #[test]
    fn flipped_record_byte_names_its_block() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = LedgerBackend::open(dir.path(), LedgerOptions::default()).unwrap();
        for i in 0..4 {
            ledger.add(&record(&format!("tok{i}"))).unwrap();
        }
        let path = dir.path().join(BLOCKS);
        let mut bytes = fs::read(&path).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        let third = text.match_indices('\n').nth(1).unwrap().0 + 1;
        let pos = third + text[third..].find("tok2").unwrap() + 3;
        bytes[pos] = b'9';
        fs::write(&path, bytes).unwrap();
        let report = ledger.audit();
        assert_eq!(report.first_broken_block, Some(2), "{report:?}");
    }

    #[test]
    fn batches_group_records() {
        let dir = tempfile::tempdir().unwrap();
        let options = LedgerOptions {
            batch_size: 3,
            flush_interval: Duration::from_secs(3600),
            ..LedgerOptions::default()
        };
        let ledger = LedgerBackend::open(dir.path(), options).unwrap();
        for i in 0..4 {
            ledger.add(&record(&format!("b{i}"))).unwrap();
        }
        assert!(ledger.get("b3").is_some());
        ledger.flush().unwrap();
        let report = ledger.audit();
        assert!(report.is_clean(), "{report:?}");
        assert_eq!(report.records, 4);
        assert_eq!(fs::read_to_string(dir.path().join(BLOCKS)).unwrap().lines().count(), 2);
    }
}
