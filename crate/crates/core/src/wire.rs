//! Inter-server message framing.
//!
//! Every message is `type (1B) ‖ round (8B LE) ‖ body`, with bodies built from
//! the fixed crypto encodings and little-endian `u32` counts.

use crate::crypto::{DleqProof, DlogProof, GroupElement, Scalar};
use crate::{Error, Result};

pub const TAG_KEYGEN: u8 = 1;
pub const TAG_INPUT_DIGEST: u8 = 2;
pub const TAG_HOP: u8 = 3;
pub const TAG_REVEAL: u8 = 4;
pub const TAG_BLAME_OPEN: u8 = 5;
pub const TAG_BLAME_STEP: u8 = 6;
pub const TAG_VERDICT: u8 = 7;
pub const TAG_INNER_KEY: u8 = 8;

pub const HEADER_LEN: usize = 9;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Body {
    Keygen {
        position: u32,
        bpk: GroupElement,
        mpk: GroupElement,
        blind_proof: DlogProof,
        mix_proof: DlogProof,
    },
    InputDigest([u8; 32]),
    /// `ciphertexts` is empty when only the key list and proof are broadcast.
    Hop {
        hop: u32,
        out_keys: Vec<GroupElement>,
        ciphertexts: Vec<Vec<u8>>,
        dleq: DleqProof,
    },
    Reveal { position: u32, isk: Scalar },
    BlameOpen { entries: Vec<u32> },
    /// `unblind_proof` is absent for the accuser's own reveal.
    BlameStep {
        position: u32,
        entry: u32,
        key: GroupElement,
        decrypt_key: GroupElement,
        unblind_proof: Option<DleqProof>,
        key_proof: DleqProof,
        ciphertext: Vec<u8>,
    },
    Verdict { users: Vec<u32>, server: Option<u32> },
    InnerKey { position: u32, ipk: GroupElement, proof: DlogProof },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WireMessage {
    pub round: u64,
    pub body: Body,
}

impl WireMessage {
    pub fn new(round: u64, body: Body) -> Self {
        WireMessage { round, body }
    }

    pub fn tag(&self) -> u8 {
        match self.body {
            Body::Keygen { .. } => TAG_KEYGEN,
            Body::InputDigest(_) => TAG_INPUT_DIGEST,
            Body::Hop { .. } => TAG_HOP,
            Body::Reveal { .. } => TAG_REVEAL,
            Body::BlameOpen { .. } => TAG_BLAME_OPEN,
            Body::BlameStep { .. } => TAG_BLAME_STEP,
            Body::Verdict { .. } => TAG_VERDICT,
            Body::InnerKey { .. } => TAG_INNER_KEY,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(64);
        out.push(self.tag());
        out.extend_from_slice(&self.round.to_le_bytes());
        match &self.body {
            Body::Keygen { position, bpk, mpk, blind_proof, mix_proof } => {
                put_u32(&mut out, *position);
                out.extend_from_slice(bpk.as_bytes());
                out.extend_from_slice(mpk.as_bytes());
                out.extend_from_slice(&blind_proof.to_bytes());
                out.extend_from_slice(&mix_proof.to_bytes());
            }
            Body::InputDigest(d) => out.extend_from_slice(d),
            Body::Hop { hop, out_keys, ciphertexts, dleq } => {
                let entry_len = ciphertexts.first().map_or(0, Vec::len);
                if !ciphertexts.is_empty() && ciphertexts.len() != out_keys.len() {
                    return Err(Error::Malformed("hop key/ciphertext count mismatch"));
                }
                if ciphertexts.iter().any(|c| c.len() != entry_len) {
                    return Err(Error::RaggedBatch);
                }
                put_u32(&mut out, *hop);
                put_u32(&mut out, out_keys.len() as u32);
                put_u32(&mut out, entry_len as u32);
                out.reserve(out_keys.len() * (32 + entry_len) + 96);
                for k in out_keys {
                    out.extend_from_slice(k.as_bytes());
                }
                for c in ciphertexts {
                    out.extend_from_slice(c);
                }
                out.extend_from_slice(&dleq.to_bytes());
            }
            Body::Reveal { position, isk } => {
                put_u32(&mut out, *position);
                out.extend_from_slice(&isk.to_bytes());
            }
            Body::BlameOpen { entries } => {
                put_u32(&mut out, entries.len() as u32);
                for e in entries {
                    put_u32(&mut out, *e);
                }
            }
            Body::BlameStep {
                position,
                entry,
                key,
                decrypt_key,
                unblind_proof,
                key_proof,
                ciphertext,
            } => {
                put_u32(&mut out, *position);
                put_u32(&mut out, *entry);
                out.extend_from_slice(key.as_bytes());
                out.extend_from_slice(decrypt_key.as_bytes());
                out.push(unblind_proof.is_some() as u8);
                if let Some(p) = unblind_proof {
                    out.extend_from_slice(&p.to_bytes());
                }
                out.extend_from_slice(&key_proof.to_bytes());
                put_u32(&mut out, ciphertext.len() as u32);
                out.extend_from_slice(ciphertext);
            }
            Body::Verdict { users, server } => {
                put_u32(&mut out, users.len() as u32);
                for u in users {
                    put_u32(&mut out, *u);
                }
                out.push(server.is_some() as u8);
                put_u32(&mut out, server.unwrap_or(0));
            }
            Body::InnerKey { position, ipk, proof } => {
                put_u32(&mut out, *position);
                out.extend_from_slice(ipk.as_bytes());
                out.extend_from_slice(&proof.to_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes };
        let tag = r.take(1)?[0];
        let round = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let body = match tag {
            TAG_KEYGEN => Body::Keygen {
                position: r.u32()?,
                bpk: r.element()?,
                mpk: r.element()?,
                blind_proof: DlogProof::from_slice(r.take(64)?)?,
                mix_proof: DlogProof::from_slice(r.take(64)?)?,
            },
            TAG_INPUT_DIGEST => Body::InputDigest(r.take(32)?.try_into().expect("32 bytes")),
            TAG_HOP => {
                let hop = r.u32()?;
                let count = r.u32()? as usize;
                let entry_len = r.u32()? as usize;
                let needed = count
                    .checked_mul(32 + entry_len)
                    .and_then(|n| n.checked_add(96))
                    .ok_or(Error::Malformed("hop size overflow"))?;
                if r.buf.len() != needed {
                    return Err(Error::Malformed("hop length"));
                }
                let out_keys = (0..count).map(|_| r.element()).collect::<Result<Vec<_>>>()?;
                let ciphertexts = if entry_len == 0 {
                    Vec::new()
                } else {
                    (0..count)
                        .map(|_| r.take(entry_len).map(<[u8]>::to_vec))
                        .collect::<Result<Vec<_>>>()?
                };
                Body::Hop { hop, out_keys, ciphertexts, dleq: DleqProof::from_slice(r.take(96)?)? }
            }
            TAG_REVEAL => Body::Reveal { position: r.u32()?, isk: Scalar::from_slice(r.take(32)?)? },
            TAG_BLAME_OPEN => {
                let n = r.u32()? as usize;
                if r.buf.len() != n.saturating_mul(4) {
                    return Err(Error::Malformed("blame-open length"));
                }
                Body::BlameOpen { entries: (0..n).map(|_| r.u32()).collect::<Result<_>>()? }
            }
            TAG_BLAME_STEP => {
                let position = r.u32()?;
                let entry = r.u32()?;
                let key = r.element()?;
                let decrypt_key = r.element()?;
                let unblind_proof = match r.take(1)?[0] {
                    0 => None,
                    1 => Some(DleqProof::from_slice(r.take(96)?)?),
                    _ => return Err(Error::Malformed("blame-step flag")),
                };
                let key_proof = DleqProof::from_slice(r.take(96)?)?;
                let len = r.u32()? as usize;
                let ciphertext = r.take(len)?.to_vec();
                Body::BlameStep { position, entry, key, decrypt_key, unblind_proof, key_proof, ciphertext }
            }
            TAG_VERDICT => {
                let n = r.u32()? as usize;
                if r.buf.len() != n.saturating_mul(4).saturating_add(5) {
                    return Err(Error::Malformed("verdict length"));
                }
                let users = (0..n).map(|_| r.u32()).collect::<Result<_>>()?;
                let flag = r.take(1)?[0];
                let server = r.u32()?;
                let server = match flag {
                    0 => None,
                    1 => Some(server),
                    _ => return Err(Error::Malformed("verdict flag")),
                };
                Body::Verdict { users, server }
            }
            TAG_INNER_KEY => Body::InnerKey {
                position: r.u32()?,
                ipk: r.element()?,
                proof: DlogProof::from_slice(r.take(64)?)?,
            },
            _ => return Err(Error::Malformed("unknown message type")),
        };
        if !r.buf.is_empty() {
            return Err(Error::Malformed("trailing bytes"));
        }
        Ok(WireMessage { round, body })
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Malformed("truncated"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn element(&mut self) -> Result<GroupElement> {
        GroupElement::from_slice(self.take(32)?)
    }
}

/// Chain-local endpoint: a server position, or 0 for the submitting side.
pub type Endpoint = u32;

#[derive(Clone, Debug)]
pub struct Delivery {
    pub from: Endpoint,
    pub to: Endpoint,
    /// Simulated arrival time in microseconds.
    pub at_us: u64,
    pub message: WireMessage,
}

/// Carries encoded messages between chain members.
pub trait Transport {
    fn send(&mut self, from: Endpoint, to: Endpoint, message: &WireMessage) -> Result<()>;
    /// Delivers everything queued, in delivery order.
    fn flush(&mut self) -> Result<Vec<Delivery>>;
    /// Current simulated time in microseconds.
    fn now_us(&self) -> u64;
    fn bytes_sent(&self) -> u64;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{prove_dleq, prove_dlog, tags};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn dleq(seed: u64) -> DleqProof {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let g = GroupElement::generator();
        let h = GroupElement::random(&mut rng);
        let s = Scalar::random_nonzero(&mut rng);
        prove_dleq(&mut rng, &g, &g.exp(&s), &h, &h.exp(&s), &s, tags::MIX_BLIND)
    }

    #[test]
    fn header_layout() {
        let m = WireMessage::new(0x0102_0304_0506_0708, Body::InputDigest([9; 32]));
        let b = m.encode().unwrap();
        assert_eq!(b[0], TAG_INPUT_DIGEST);
        assert_eq!(&b[1..9], &[8, 7, 6, 5, 4, 3, 2, 1]);
        assert_eq!(b.len(), HEADER_LEN + 32);
        assert_eq!(WireMessage::decode(&b).unwrap(), m);
    }

    #[test]
    fn fixed_sizes() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let g = GroupElement::generator();
        let s = Scalar::random_nonzero(&mut rng);
        let p = prove_dlog(&mut rng, &g, &g.exp(&s), &s, tags::KEYGEN_BLIND);
        let kg = WireMessage::new(
            1,
            Body::Keygen { position: 2, bpk: g, mpk: g, blind_proof: p, mix_proof: p },
        );
        assert_eq!(kg.encode().unwrap().len(), HEADER_LEN + 4 + 32 + 32 + 64 + 64);
        let rv = WireMessage::new(1, Body::Reveal { position: 1, isk: s });
        assert_eq!(rv.encode().unwrap().len(), HEADER_LEN + 4 + 32);
        for m in [kg, rv] {
            assert_eq!(WireMessage::decode(&m.encode().unwrap()).unwrap(), m);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(WireMessage::decode(&[]).is_err());
        assert!(WireMessage::decode(&[99, 0, 0, 0, 0, 0, 0, 0, 0]).is_err());
        let mut b = WireMessage::new(1, Body::InputDigest([0; 32])).encode().unwrap();
        b.push(0);
        assert!(WireMessage::decode(&b).is_err());
        let hop = WireMessage::new(
            1,
            Body::Hop { hop: 1, out_keys: vec![GroupElement::generator(); 2], ciphertexts: vec![vec![1, 2], vec![3]], dleq: dleq(1) },
        );
        assert!(hop.encode().is_err());
    }

    proptest! {
        #[test]
        fn hop_roundtrip(count in 0usize..6, entry_len in 0usize..40, round in any::<u64>(), seed in any::<u64>()) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let out_keys: Vec<_> = (0..count).map(|_| GroupElement::random(&mut rng)).collect();
            let ciphertexts = if entry_len == 0 { vec![] } else {
                (0..count).map(|i| vec![i as u8; entry_len]).collect()
            };
            let m = WireMessage::new(round, Body::Hop { hop: 2, out_keys, ciphertexts, dleq: dleq(seed) });
            prop_assert_eq!(WireMessage::decode(&m.encode().unwrap()).unwrap(), m);
        }

        #[test]
        fn blame_and_verdict_roundtrip(users in proptest::collection::vec(any::<u32>(), 0..8),
                                       server in proptest::option::of(any::<u32>()),
                                       ct in proptest::collection::vec(any::<u8>(), 0..64),
                                       with_unblind in any::<bool>()) {
            let v = WireMessage::new(3, Body::Verdict { users: users.clone(), server });
            prop_assert_eq!(WireMessage::decode(&v.encode().unwrap()).unwrap(), v);
            let o = WireMessage::new(3, Body::BlameOpen { entries: users });
            prop_assert_eq!(WireMessage::decode(&o.encode().unwrap()).unwrap(), o);
            let g = GroupElement::generator();
            let s = WireMessage::new(3, Body::BlameStep {
                position: 1, entry: 4, key: g, decrypt_key: g,
                unblind_proof: with_unblind.then(|| dleq(5)), key_proof: dleq(6), ciphertext: ct,
            });
            prop_assert_eq!(WireMessage::decode(&s.encode().unwrap()).unwrap(), s);
        }
    }
}
