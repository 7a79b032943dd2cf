use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::evidence::SignedToken;
use crate::meta::{ActionName, Operation, ServiceCall};
use crate::prov::{canonical_bytes_of, decode_document, encode_document, ProvDocument, Timestamp};
use crate::template::{Substitution, Template};

/// One recorded call, enough to rebuild object state, history and evidence.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub(crate) struct WalEntry {
    pub call_id: String,
    pub client_id: String,
    pub user_id: String,
    pub received_at: Timestamp,
    pub ended_at: Timestamp,
    pub op: WalOp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<SignedToken>,
}

impl WalEntry {
    pub fn call(&self) -> ServiceCall {
        ServiceCall {
            call_id: self.call_id.clone(),
            action: self.op.action(),
            client_id: self.client_id.clone(),
            user_id: self.user_id.clone(),
            received_at: self.received_at,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "camelCase", rename_all_fields = "camelCase", deny_unknown_fields)]
pub(crate) enum WalOp {
    NewTemplate { template_id: String },
    NewDocument { default_url: Option<String> },
    AddNamespace { prefix: String, uri: String },
    RegisterTemplate { template_id: String },
    Generate { template_id: String, substitution: Value },
    GenerateInitialise { template_id: String, session_id: String, substitution: Value },
    GenerateZone { session_id: String, zone: String, bindings: Value },
    GenerateFinalise { session_id: String },
}

impl WalOp {
    pub fn action(&self) -> ActionName {
        match self {
            WalOp::NewTemplate { .. } => ActionName::NewTemplate,
            WalOp::NewDocument { .. } => ActionName::NewDocument,
            WalOp::AddNamespace { .. } => ActionName::AddNamespace,
            WalOp::RegisterTemplate { .. } => ActionName::RegisterTemplate,
            WalOp::Generate { .. } => ActionName::Generate,
            WalOp::GenerateInitialise { .. } => ActionName::GenerateInitialise,
            WalOp::GenerateZone { .. } => ActionName::GenerateZone,
            WalOp::GenerateFinalise { .. } => ActionName::GenerateFinalise,
        }
    }

    pub fn from_operation(op: &Operation) -> Self {
        match op.clone() {
            Operation::NewDocument { default_url } => WalOp::NewDocument { default_url },
            Operation::AddNamespace { prefix, uri } => WalOp::AddNamespace { prefix, uri },
            Operation::RegisterTemplate { template_id } => WalOp::RegisterTemplate { template_id },
            Operation::Generate {
                template_id,
                substitution,
            } => WalOp::Generate {
                template_id,
                substitution: substitution.to_json(),
            },
            Operation::GenerateInitialise {
                template_id,
                session_id,
                substitution,
            } => WalOp::GenerateInitialise {
                template_id,
                session_id,
                substitution: substitution.to_json(),
            },
            Operation::GenerateZone {
                session_id,
                zone,
                bindings,
            } => WalOp::GenerateZone {
                session_id,
                bindings: Substitution::for_zone(zone.clone(), bindings).to_json(),
                zone,
            },
            Operation::GenerateFinalise { session_id } => WalOp::GenerateFinalise { session_id },
        }
    }

    /// The document-level operation; `None` for newTemplate.
    pub fn to_operation(&self) -> Result<Option<Operation>, String> {
        let sub = |v: &Value| Substitution::from_json(v).map_err(|e| e.to_string());
        Ok(Some(match self.clone() {
            WalOp::NewTemplate { .. } => return Ok(None),
            WalOp::NewDocument { default_url } => Operation::NewDocument { default_url },
            WalOp::AddNamespace { prefix, uri } => Operation::AddNamespace { prefix, uri },
            WalOp::RegisterTemplate { template_id } => Operation::RegisterTemplate { template_id },
            WalOp::Generate {
                template_id,
                substitution,
            } => Operation::Generate {
                template_id,
                substitution: sub(&substitution)?,
            },
            WalOp::GenerateInitialise {
                template_id,
                session_id,
                substitution,
            } => Operation::GenerateInitialise {
                template_id,
                session_id,
                substitution: sub(&substitution)?,
            },
            WalOp::GenerateZone {
                session_id,
                zone,
                bindings,
            } => {
                let s = sub(&bindings)?;
                match <[_; 1]>::try_from(s.zone_bindings) {
                    Ok([z]) if z.zone == zone && s.bindings.is_empty() => Operation::GenerateZone {
                        session_id,
                        zone,
                        bindings: z.bindings,
                    },
                    _ => return Err(format!("malformed zone bindings for {zone}")),
                }
            }
            WalOp::GenerateFinalise { session_id } => Operation::GenerateFinalise { session_id },
        }))
    }
}

/// Append-only log of JSON lines.
pub(crate) struct Wal {
    file: File,
    sync: bool,
}

impl Wal {
    /// Opens or creates `path`, returning the complete entries. A torn
    /// final line, left by a crash mid-append, is cut off.
    pub fn open(path: &Path, sync: bool) -> io::Result<(Self, Vec<WalEntry>)> {
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path)?;
        let mut entries = Vec::new();
        let mut good = 0u64;
        {
            let mut reader = BufReader::new(&file);
            let mut line = Vec::new();
            loop {
                line.clear();
                let n = reader.read_until(b'\n', &mut line)?;
                if n == 0 || line.last() != Some(&b'\n') {
                    break;
                }
                let entry: WalEntry = serde_json::from_slice(&line[..n - 1]).map_err(|e| {
                    io::Error::new(
                        io::ErrorKind::InvalidData,
                        format!("{} at byte {good}: {e}", path.display()),
                    )
                })?;
                entries.push(entry);
                good += n as u64;
            }
        }
        if file.metadata()?.len() != good {
            file.set_len(good)?;
            file.seek(SeekFrom::End(0))?;
        }
        Ok((Self { file, sync }, entries))
    }

    pub fn append(&mut self, entry: &WalEntry) -> io::Result<()> {
        let mut line = canonical_bytes_of(entry);
        line.push(b'\n');
        self.file.write_all(&line)?;
        if self.sync {
            self.file.sync_data()?;
        }
        Ok(())
    }
}

/// Directory layout under the data dir.
pub(crate) struct Layout {
    root: PathBuf,
    sync: bool,
}

impl Layout {
    pub fn at(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            sync: false,
        }
    }

    pub fn create(root: &Path, sync: bool) -> io::Result<Self> {
        for sub in ["templates", "substitutions", "documents"] {
            fs::create_dir_all(root.join(sub))?;
        }
        Ok(Self {
            root: root.to_path_buf(),
            sync,
        })
    }

    pub fn sync(&self) -> bool {
        self.sync
    }

    pub fn template_log(&self) -> PathBuf {
        self.root.join("templates.wal")
    }

    pub fn document_log(&self, doc_id: &str) -> PathBuf {
        self.root.join("documents").join(format!("{doc_id}.wal"))
    }

    pub fn document_ids(&self) -> io::Result<Vec<String>> {
        let mut ids: Vec<String> = fs::read_dir(self.root.join("documents"))?
            .filter_map(Result::ok)
            .filter_map(|e| {
                e.file_name()
                    .to_str()
                    .and_then(|n| n.strip_suffix(".wal"))
                    .map(str::to_string)
            })
            .collect();
        ids.sort();
        Ok(ids)
    }

    fn template_path(&self, id: &str) -> PathBuf {
        self.root.join("templates").join(format!("{id}.json"))
    }

    fn substitution_path(&self, id: &str) -> PathBuf {
        self.root.join("substitutions").join(format!("{id}.json"))
    }

    fn write_new(&self, path: &Path, bytes: &[u8]) -> io::Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = File::create(&tmp)?;
            f.write_all(bytes)?;
            if self.sync {
                f.sync_data()?;
            }
        }
        fs::rename(&tmp, path)
    }

    pub fn save_template(&self, id: &str, template: &Template) -> io::Result<()> {
        self.write_new(&self.template_path(id), &template.canonical_bytes())
    }

    pub fn load_template(&self, id: &str) -> Result<Template, String> {
        let text = fs::read_to_string(self.template_path(id)).map_err(|e| e.to_string())?;
        Template::decode(&text).map_err(|e| e.to_string())
    }

    /// Substitution documents are content-addressed, so an existing file
    /// already holds the same content.
    pub fn save_substitution(&self, id: &str, doc: &ProvDocument) -> io::Result<()> {
        let path = self.substitution_path(id);
        if path.exists() {
            return Ok(());
        }
        self.write_new(&path, encode_document(doc).as_bytes())
    }

    pub fn load_substitution(&self, id: &str) -> Option<ProvDocument> {
        if id.contains(['/', '\\']) || id.starts_with('.') {
            return None;
        }
        let text = fs::read_to_string(self.substitution_path(id)).ok()?;
        decode_document(&text).ok()
    }
}
