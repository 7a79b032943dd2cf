//! PROV document model, canonical serialization and fragment merging.

mod codec;
mod document;
mod literal;
mod name;

pub use codec::{
    canonical_bytes, canonical_bytes_of, canonical_json, decode_document, document_from_json,
    document_json, encode_document, write_canonical,
};
pub(crate) use codec::{
    document_from_json_with, expect_array, expect_object, expect_str, reject_unknown_keys,
    violation, DecodeOptions,
};
pub use document::{
    Attribute, Element, ElementKind, ProvDocument, Relation, RelationKind, Statement,
};
pub use literal::{Decimal, Literal, Timestamp};
pub use name::*;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProvError {
    #[error("invalid qualified name `{0}`")]
    InvalidName(String),
    #[error("invalid timestamp {0}")]
    InvalidTimestamp(String),
    #[error("invalid literal: {0}")]
    InvalidLiteral(String),
    #[error("undeclared namespace prefix `{0}`")]
    UnknownPrefix(String),
    #[error("relation {relation} refers to missing element {endpoint}")]
    DanglingEndpoint { relation: String, endpoint: QualifiedName },
    #[error("relation {relation}: {endpoint} is {found}, expected {expected}")]
    KindMismatch {
        relation: String,
        endpoint: QualifiedName,
        expected: ElementKind,
        found: ElementKind,
    },
    #[error("element {0} already exists with different content")]
    DuplicateElementId(QualifiedName),
    #[error("prefix `{prefix}` bound to {existing}, cannot rebind to {incoming}")]
    NamespaceClash {
        prefix: String,
        existing: String,
        incoming: String,
    },
    #[error("element {0} has conflicting kinds")]
    IdKindConflict(QualifiedName),
    #[error("invalid timing on {0}")]
    InvalidTiming(QualifiedName),
    #[error("conflicting timing on {0}")]
    TimingConflict(QualifiedName),
    #[error("schema violation at {path}: {message}")]
    SchemaViolation { path: String, message: String },
}

/// SHA-256 of a document's canonical bytes.
pub fn document_hash(doc: &ProvDocument) -> [u8; 32] {
    crate::crypto::sha256(&canonical_bytes(doc))
}
