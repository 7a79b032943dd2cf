//! Support code for the `provnr` binary.

pub mod fixtures;

use provnr_core::crypto::sha256;

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(sha256(bytes))
}
