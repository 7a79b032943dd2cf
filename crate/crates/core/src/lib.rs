//! Provenance template service with meta-provenance tracing and
//! non-repudiable, notarized evidence.
//!
//! * [`prov`]: PROV document model and canonical serialization.
//! * [`template`]: templates, substitutions and (zoned) instantiation.
//! * [`meta`]: history documents, substitution documents and replay.
//! * [`evidence`]: evidence tokens, timestamping, signing and verification.
//! * [`notary`]: tamper-evident notary backends.
//! * [`service`]: the document service tying the above together.
//! * [`sim`]: workload scenarios and latency statistics.

pub mod crypto;
pub mod evidence;
pub mod meta;
pub mod notary;
pub mod prov;
pub mod service;
pub mod sim;
pub mod template;

pub use prov::{ProvDocument, QualifiedName, Timestamp};
pub use template::{Substitution, Template};
