//! Meta-provenance: history documents recording every service action,
//! substitution documents, and reconstruction of object documents by replay.

mod history;
mod replay;
mod state;
mod substitution_doc;
mod templates;

pub use history::{ActionRecord, HistoryDocument, HistorySubject, RecordedAction, HIST_PREFIX};
pub use replay::{reconstruct_between, reconstruct_document, MemoryStore, ReplaySource};
pub use state::{Applied, ObjectError, ObjectState, OpenSession, Operation, TemplateLookup};
pub use substitution_doc::{decode_substitution_document, persist_substitution, substitution_id};
pub use templates::MetaTemplateSet;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::prov::{Literal, ProvError, QualifiedName, Timestamp};
use crate::template::{Substitution, TemplateError};

/// The closed set of service actions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActionName {
    NewTemplate,
    NewDocument,
    AddNamespace,
    RegisterTemplate,
    Generate,
    GenerateInitialise,
    GenerateZone,
    GenerateFinalise,
}

impl ActionName {
    pub const ALL: [ActionName; 8] = [
        ActionName::NewTemplate,
        ActionName::NewDocument,
        ActionName::AddNamespace,
        ActionName::RegisterTemplate,
        ActionName::Generate,
        ActionName::GenerateInitialise,
        ActionName::GenerateZone,
        ActionName::GenerateFinalise,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ActionName::NewTemplate => "newTemplate",
            ActionName::NewDocument => "newDocument",
            ActionName::AddNamespace => "addNamespace",
            ActionName::RegisterTemplate => "registerTemplate",
            ActionName::Generate => "generate",
            ActionName::GenerateInitialise => "generateInitialise",
            ActionName::GenerateZone => "generateZone",
            ActionName::GenerateFinalise => "generateFinalise",
        }
    }

    /// Actions whose input includes a substitution.
    pub fn takes_substitution(&self) -> bool {
        matches!(
            self,
            ActionName::Generate | ActionName::GenerateInitialise | ActionName::GenerateZone
        )
    }

    /// Actions that merge a fragment into the object document.
    pub fn produces_fragment(&self) -> bool {
        matches!(self, ActionName::Generate | ActionName::GenerateFinalise)
    }
}

impl fmt::Display for ActionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActionName {
    type Err = MetaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| MetaError::InvalidHistory(format!("unknown action name `{s}`")))
    }
}

impl serde::Serialize for ActionName {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> serde::Deserialize<'de> for ActionName {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A service call as seen by the meta-provenance layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ServiceCall {
    pub call_id: String,
    pub action: ActionName,
    pub client_id: String,
    pub user_id: String,
    pub received_at: Timestamp,
}

/// What an action touched, as needed to instantiate its meta-template.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ActionEffects {
    pub template_id: Option<String>,
    /// Substitution supplied with the call, persisted as a substitution
    /// document.
    pub substitution: Option<Substitution>,
    /// Remaining call data, stored as `meta:` annotations on the action.
    pub annotations: Vec<(QualifiedName, Literal)>,
}

impl ActionEffects {
    pub fn annotate(mut self, local: &str, value: impl Into<Literal>) -> Self {
        self.annotations.push((QualifiedName::of("meta", local), value.into()));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetaError {
    #[error("history document does not track an object document")]
    UnknownHistory,
    #[error("invalid history document: {0}")]
    InvalidHistory(String),
    #[error("action chain broken: expected action {expected}")]
    BrokenChain { expected: u64 },
    #[error("action range {from}..={to} is outside 1..={actions}")]
    BadRange { from: u64, to: u64, actions: u64 },
    #[error("missing template {0}")]
    MissingTemplate(String),
    #[error("missing substitution document {0}")]
    MissingSubstitution(String),
    #[error("replay of action {action} failed: {source}")]
    Replay {
        action: u64,
        #[source]
        source: ObjectError,
    },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Prov(#[from] ProvError),
}
