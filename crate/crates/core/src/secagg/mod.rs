//! Asynchronous secure aggregation.
//!
//! Clients mask fixed-point updates with an additive one-time pad expanded
//! from a 16-byte seed. Masked vectors go to the aggregator, which sums them
//! with wrapping arithmetic. Seeds travel to a trusted party inside an
//! authenticated envelope keyed by a per-slot X25519 exchange. The trusted
//! party sums the regenerated masks and releases that sum once, and only
//! after at least `threshold` distinct slots have contributed.
//!
//! Primitives:
//! - key agreement: X25519, initial messages signed with Ed25519
//! - key derivation: HKDF-SHA256, salt `asyncfl-secagg-v1`
//! - seed envelope: ChaCha20-Poly1305, nonce = slot (u32 LE) || sequence (u64 LE)
//! - mask expansion: ChaCha20 keystream under `SHA-256("asyncfl-mask-v1" || seed)`,
//!   zero nonce, consumed as little-endian `u32` words reduced mod `2^b`

mod client;
mod dh;
mod envelope;
mod group;
mod mask;
mod tsa;
pub mod wire;

pub use client::{mask_client_update, ClientSubmission};
pub use dh::{
    dh_complete, dh_finalize, dh_initiate, CompletingMessage, DhSetup, InitialMessage, SharedSecret,
    SlotPrivate,
};
pub use envelope::{decrypt_seed, encrypt_seed, SeedEnvelope};
pub use group::{from_fixed_sum, to_fixed, GroupConfig};
pub use mask::{add_assign_wrapping, expand_mask, mask_update, unmask_sum, MaskedUpdate};
pub use tsa::{
    BoundaryCounters, KeySlot, ReleaseRefusal, TrustedParty, TrustedPartyChannel, TsaRejection,
};

use thiserror::Error;

/// 16-byte mask seed chosen by a client.
pub type Seed = [u8; 16];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SecAggError {
    #[error("vector length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("value {value} scaled by {scale} falls outside the representable range of Z_2^{bits}")]
    Overflow { value: String, scale: String, bits: u32 },
    #[error("invalid group configuration: {0}")]
    InvalidGroup(String),
    #[error("initial message signature is invalid")]
    InvalidSignature,
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("seed envelope failed authentication")]
    BadMac,
}
