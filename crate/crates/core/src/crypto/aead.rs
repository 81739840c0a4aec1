use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use serde::{Deserialize, Serialize};

use super::{hash_parts, GroupElement};

pub const TAG_LEN: usize = 16;
pub const NONCE_LEN: usize = 12;

const SYMKEY_LABEL: &[u8] = b"xrd/symmetric-key";
const KDF_LABEL: &[u8] = b"xrd/kdf";

/// A 32-byte secret for authenticated encryption.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct SymmetricKey([u8; 32]);

impl SymmetricKey {
    pub const LEN: usize = 32;

    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        SymmetricKey(bytes)
    }

    /// Hash of the element's canonical encoding under a fixed derivation tag.
    pub fn from_element(e: &GroupElement) -> Self {
        SymmetricKey(hash_parts(SYMKEY_LABEL, &[e.as_bytes()]))
    }

    /// Domain-separated derivation from arbitrary labelled input.
    pub fn derive(label: &[u8], parts: &[&[u8]]) -> Self {
        SymmetricKey(hash_parts(label, parts))
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl std::fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SymmetricKey(..)")
    }
}

/// Key derivation binding a shared secret to a context element.
pub fn kdf(shared: &GroupElement, context: &GroupElement) -> SymmetricKey {
    SymmetricKey(hash_parts(KDF_LABEL, &[shared.as_bytes(), context.as_bytes()]))
}

/// Ciphertext with a trailing authentication tag.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AuthCiphertext(Vec<u8>);

impl AuthCiphertext {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        AuthCiphertext(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Plaintext length this ciphertext would carry if authentic.
    pub fn plaintext_len(&self) -> Option<usize> {
        self.0.len().checked_sub(TAG_LEN)
    }
}

impl std::fmt::Debug for AuthCiphertext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "AuthCiphertext({} bytes)", self.0.len())
    }
}

/// 8-byte little-endian round number, zero-padded to the nonce width.
fn round_nonce(round: u64) -> Nonce {
    let mut n = [0u8; NONCE_LEN];
    n[..8].copy_from_slice(&round.to_le_bytes());
    Nonce::from(n)
}

pub fn aenc(key: &SymmetricKey, round: u64, plaintext: &[u8]) -> AuthCiphertext {
    let cipher = ChaCha20Poly1305::new(Key::from_slice(&key.0));
    let ct = cipher
        .encrypt(&round_nonce(round), plaintext)
        .expect("chacha20poly1305 encryption is infallible for in-memory buffers");
    AuthCiphertext(ct)
}

/// `None` when the key, nonce or ciphertext do not authenticate.
pub fn adec(key: &SymmetricKey, round: u64, ct: &[u8]) -> Option<Vec<u8>> {
    if ct.len() < TAG_LEN {
        return None;
    }
    let cipher = ChaCha20Poly1305::new(Key::from_slice(&key.0));
    cipher.decrypt(&round_nonce(round), ct).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Scalar;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn key(seed: u8) -> SymmetricKey {
        SymmetricKey::from_bytes([seed; 32])
    }

    #[test]
    fn roundtrip() {
        let m = b"hello mixnet".to_vec();
        let c = aenc(&key(1), 9, &m);
        assert_eq!(c.len(), m.len() + TAG_LEN);
        assert_eq!(adec(&key(1), 9, c.as_bytes()), Some(m));
    }

    #[test]
    fn wrong_key_or_nonce_fails() {
        let c = aenc(&key(1), 9, b"payload");
        assert_eq!(adec(&key(2), 9, c.as_bytes()), None);
        assert_eq!(adec(&key(1), 10, c.as_bytes()), None);
        assert_eq!(adec(&key(1), 9, &c.as_bytes()[..4]), None);
    }

    #[test]
    fn every_single_byte_flip_is_detected() {
        let c = aenc(&key(3), 1, b"short msg").into_bytes();
        for pos in 0..c.len() {
            for bit in 0..8 {
                let mut t = c.clone();
                t[pos] ^= 1 << bit;
                assert_eq!(adec(&key(3), 1, &t), None, "flip at {pos}:{bit}");
            }
        }
    }

    #[test]
    fn kdf_determinism_and_context_separation() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let shared = GroupElement::random(&mut rng);
        let pk_a = GroupElement::base_exp(&Scalar::random_nonzero(&mut rng));
        let pk_b = GroupElement::base_exp(&Scalar::random_nonzero(&mut rng));
        assert_eq!(kdf(&shared, &pk_a), kdf(&shared, &pk_a));
        assert_ne!(kdf(&shared, &pk_a), kdf(&shared, &pk_b));
        assert_eq!(kdf(&shared, &pk_b).as_bytes().len(), SymmetricKey::LEN);
        assert_ne!(kdf(&shared, &pk_a), SymmetricKey::from_element(&shared));
    }
}
