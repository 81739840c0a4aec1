//! Group arithmetic, authenticated encryption, key derivation and the two
//! discrete-log proofs used throughout the protocol.
//!
//! The concrete group is Ristretto255; nothing outside this module names it.

mod aead;
mod group;
mod nizk;

pub use aead::{adec, aenc, kdf, AuthCiphertext, SymmetricKey, NONCE_LEN, TAG_LEN};
pub use group::{dh, keygen, GroupElement, Scalar};
pub use nizk::{prove_dleq, prove_dlog, verify_dleq, verify_dlog, DleqProof, DlogProof};

/// Fiat-Shamir domain tags, one per proof site.
pub mod tags {
    pub const CLIENT_SUBMISSION: &[u8] = b"xrd/client-submission";
    pub const KEYGEN_BLIND: &[u8] = b"xrd/keygen-blind";
    pub const KEYGEN_MIX: &[u8] = b"xrd/keygen-mix";
    pub const KEYGEN_INNER: &[u8] = b"xrd/keygen-inner";
    pub const MIX_BLIND: &[u8] = b"xrd/mix-blind";
    pub const BLAME_KEY: &[u8] = b"xrd/blame-key";
    pub const BLAME_DECRYPT: &[u8] = b"xrd/blame-decrypt";
}

use sha2::{Digest, Sha256};

/// SHA-256 over length-prefixed parts.
pub(crate) fn hash_parts(label: &[u8], parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((label.len() as u16).to_be_bytes());
    h.update(label);
    for p in parts {
        h.update((p.len() as u32).to_be_bytes());
        h.update(p);
    }
    h.finalize().into()
}
