//! Desk-scale cloud MRI pipeline.
//!
//! Raw k-space is packed into a checksummed binary container
//! ([`raw_format`]), sealed with AES-256-GCM and moved over simulated
//! network profiles ([`transport`]), reconstructed by zero-filling or
//! compressed sensing ([`recon`]) on a simulated cloud/edge fleet
//! ([`orchestrator`]), recorded on a hash-chained audit ledger with
//! declarative access rules ([`ledger`]), improved across hospitals by
//! federated averaging ([`federated`]) and watched by a small SIEM-style
//! monitor ([`monitor`]). The [`gateway`] binds everything behind a REST
//! API and a command line.
//!
//! Every capability has a runnable program under `examples/`.

pub mod acquisition;
pub mod clock;
pub mod federated;
pub mod fourier;
pub mod gateway;
pub mod ledger;
pub mod monitor;
pub mod orchestrator;
pub mod raw_format;
pub mod recon;
pub mod transport;

pub use num_complex::{Complex32, Complex64};

/// SHA-256 of `bytes`.
pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).into()
}

/// Lowercase hex SHA-256 of `bytes`; the content address used by the object store.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(sha256(bytes))
}
