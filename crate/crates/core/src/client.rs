//! Per-user message construction and mailbox decryption.
//!
//! Every user sends exactly one message to each chain in its (deduplicated)
//! chain set per round. A conversing user replaces the message on the chain it
//! shares with its partner by a conversation payload; all others are loopbacks
//! addressed to the user's own mailbox.

use std::collections::BTreeMap;

use rand::{CryptoRng, RngCore};

use crate::crypto::{
    adec, aenc, dh, kdf, prove_dlog, tags, AuthCiphertext, DlogProof, GroupElement, Scalar,
    SymmetricKey, TAG_LEN,
};
use crate::topology::{assign_group, ChainId, GroupChainSets};
use crate::{Error, Result};

pub const DEFAULT_MESSAGE_SIZE: usize = 256;

const KIND_DATA: u8 = 0x00;
const KIND_OFFLINE: u8 = 0x01;
/// Kind byte plus the 2-byte big-endian length.
const FRAME_HEADER: usize = 3;

/// What a padded plaintext carries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Content {
    Data(Vec<u8>),
    /// Sent from cover messages when the sender has gone offline.
    OfflineNotice,
}

impl Content {
    pub fn loopback() -> Self {
        Content::Data(Vec::new())
    }
}

/// Fixed plaintext size shared by every user.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MessageFormat {
    pub message_size: usize,
}

impl Default for MessageFormat {
    fn default() -> Self {
        MessageFormat { message_size: DEFAULT_MESSAGE_SIZE }
    }
}

impl MessageFormat {
    pub fn new(message_size: usize) -> Result<Self> {
        if message_size <= FRAME_HEADER || message_size > FRAME_HEADER + u16::MAX as usize {
            return Err(Error::InvalidParameter(format!(
                "message size {message_size} outside {}..={}",
                FRAME_HEADER + 1,
                FRAME_HEADER + u16::MAX as usize
            )));
        }
        Ok(MessageFormat { message_size })
    }

    pub fn capacity(&self) -> usize {
        self.message_size - FRAME_HEADER
    }

    /// `kind ‖ len (2B BE) ‖ content ‖ zero padding`, exactly `message_size` bytes.
    pub fn pad(&self, content: &Content) -> Result<Vec<u8>> {
        let mut out = vec![0u8; self.message_size];
        match content {
            Content::Data(bytes) => {
                if bytes.len() > self.capacity() {
                    return Err(Error::Oversized { len: bytes.len(), capacity: self.capacity() });
                }
                out[0] = KIND_DATA;
                out[1..3].copy_from_slice(&(bytes.len() as u16).to_be_bytes());
                out[FRAME_HEADER..FRAME_HEADER + bytes.len()].copy_from_slice(bytes);
            }
            Content::OfflineNotice => out[0] = KIND_OFFLINE,
        }
        Ok(out)
    }

    pub fn unpad(&self, bytes: &[u8]) -> Option<Content> {
        if bytes.len() != self.message_size {
            return None;
        }
        match bytes[0] {
            KIND_DATA => {
                let len = u16::from_be_bytes([bytes[1], bytes[2]]) as usize;
                (len <= self.capacity())
                    .then(|| Content::Data(bytes[FRAME_HEADER..FRAME_HEADER + len].to_vec()))
            }
            KIND_OFFLINE => Some(Content::OfflineNotice),
            _ => None,
        }
    }

    /// Bytes of a sealed payload body.
    pub fn body_len(&self) -> usize {
        self.message_size + TAG_LEN
    }

    /// Bytes of `dest_pk ‖ body`.
    pub fn payload_len(&self) -> usize {
        GroupElement::LEN + self.body_len()
    }

    pub fn inner_len(&self) -> usize {
        GroupElement::LEN + self.payload_len() + TAG_LEN
    }

    pub fn onion_len(&self, k: usize) -> usize {
        self.inner_len() + k * TAG_LEN
    }

    /// Wire size of one outer ciphertext for a chain of length `k`.
    pub fn outer_len(&self, k: usize) -> usize {
        GroupElement::LEN + DlogProof::LEN + self.onion_len(k)
    }
}

/// What the last server hands to the mailbox layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Payload {
    pub dest_pk: GroupElement,
    pub body: AuthCiphertext,
}

impl Payload {
    /// Pads `content` and seals it under `key` for `round`.
    pub fn seal(
        dest_pk: GroupElement,
        key: &SymmetricKey,
        round: u64,
        content: &Content,
        format: &MessageFormat,
    ) -> Result<Self> {
        let padded = format.pad(content)?;
        Ok(Payload { dest_pk, body: aenc(key, round, &padded) })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(GroupElement::LEN + self.body.len());
        out.extend_from_slice(self.dest_pk.as_bytes());
        out.extend_from_slice(self.body.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < GroupElement::LEN + TAG_LEN {
            return Err(Error::Malformed("payload too short"));
        }
        Ok(Payload {
            dest_pk: GroupElement::from_slice(&bytes[..32])?,
            body: AuthCiphertext::from_bytes(bytes[32..].to_vec()),
        })
    }
}

/// `(g^y, AEnc(DH(∏ipk, y), ρ, payload))`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InnerCiphertext {
    pub eph_pub: GroupElement,
    pub body: AuthCiphertext,
}

impl InnerCiphertext {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(GroupElement::LEN + self.body.len());
        out.extend_from_slice(self.eph_pub.as_bytes());
        out.extend_from_slice(self.body.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < GroupElement::LEN + TAG_LEN {
            return Err(Error::Malformed("inner ciphertext too short"));
        }
        Ok(InnerCiphertext {
            eph_pub: GroupElement::from_slice(&bytes[..32])?,
            body: AuthCiphertext::from_bytes(bytes[32..].to_vec()),
        })
    }
}

/// `(g^x, proof, c_1)` where `c_1` wraps the inner ciphertext in `k` layers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OuterCiphertext {
    pub eph_pub: GroupElement,
    pub proof: DlogProof,
    pub onion: AuthCiphertext,
}

impl OuterCiphertext {
    /// `eph_pub (32) ‖ proof (64) ‖ onion`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(96 + self.onion.len());
        out.extend_from_slice(self.eph_pub.as_bytes());
        out.extend_from_slice(&self.proof.to_bytes());
        out.extend_from_slice(self.onion.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 96 + TAG_LEN {
            return Err(Error::Malformed("outer ciphertext too short"));
        }
        Ok(OuterCiphertext {
            eph_pub: GroupElement::from_slice(&bytes[..32])?,
            proof: DlogProof::from_slice(&bytes[32..96])?,
            onion: AuthCiphertext::from_bytes(bytes[96..].to_vec()),
        })
    }

    pub fn wire_len(&self) -> usize {
        96 + self.onion.len()
    }

    pub fn verify_proof(&self) -> bool {
        crate::crypto::verify_dlog(
            &GroupElement::generator(),
            &self.eph_pub,
            &self.proof,
            tags::CLIENT_SUBMISSION,
        )
    }
}

/// One-shot encryption to the product of the chain's inner keys.
pub fn encrypt_inner<R: RngCore + CryptoRng>(
    rng: &mut R,
    payload: &Payload,
    round: u64,
    inner_pks: &[GroupElement],
) -> Result<InnerCiphertext> {
    if inner_pks.is_empty() {
        return Err(Error::InvalidParameter("no inner keys".into()));
    }
    let y = Scalar::random_nonzero(rng);
    let shared = dh(&GroupElement::product(inner_pks), &y)?;
    Ok(InnerCiphertext {
        eph_pub: GroupElement::base_exp(&y),
        body: aenc(&SymmetricKey::from_element(&shared), round, &payload.to_bytes()),
    })
}

/// Opens an inner ciphertext with the sum of all revealed inner secrets.
pub fn decrypt_inner(inner: &InnerCiphertext, round: u64, inner_sk_sum: &Scalar) -> Option<Payload> {
    let shared = dh(&inner.eph_pub, inner_sk_sum).ok()?;
    let bytes = adec(&SymmetricKey::from_element(&shared), round, inner.body.as_bytes())?;
    Payload::from_bytes(&bytes).ok()
}

/// Key for layer `i`, shared between the sender (`mpk_i^x`) and server `i`.
pub fn layer_key(shared: &GroupElement) -> SymmetricKey {
    SymmetricKey::from_element(shared)
}

/// Wraps `inner` in one layer per mixing key under a single ephemeral `x`.
pub fn encrypt_outer<R: RngCore + CryptoRng>(
    rng: &mut R,
    inner: &[u8],
    round: u64,
    mixing_pks: &[GroupElement],
) -> Result<OuterCiphertext> {
    let x = Scalar::random_nonzero(rng);
    encrypt_outer_with_secret(rng, &x, inner, round, mixing_pks)
}

pub(crate) fn encrypt_outer_with_secret<R: RngCore + CryptoRng>(
    rng: &mut R,
    x: &Scalar,
    inner: &[u8],
    round: u64,
    mixing_pks: &[GroupElement],
) -> Result<OuterCiphertext> {
    if mixing_pks.is_empty() {
        return Err(Error::InvalidParameter("no mixing keys".into()));
    }
    let g = GroupElement::generator();
    let eph_pub = GroupElement::base_exp(x);
    let proof = prove_dlog(rng, &g, &eph_pub, x, tags::CLIENT_SUBMISSION);
    let mut layer = inner.to_vec();
    for mpk in mixing_pks.iter().rev() {
        layer = aenc(&layer_key(&dh(mpk, x)?), round, &layer).into_bytes();
    }
    Ok(OuterCiphertext { eph_pub, proof, onion: AuthCiphertext::from_bytes(layer) })
}

/// A user's long-term identity and its public placement.
#[derive(Clone, Debug)]
pub struct UserIdentity {
    pub pk: GroupElement,
    pub sk: Scalar,
    pub group: u32,
    pub chains: Vec<ChainId>,
}

/// What other users know about a user.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UserPublic {
    pub pk: GroupElement,
    pub group: u32,
}

impl UserIdentity {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R, sets: &GroupChainSets) -> Result<Self> {
        UserIdentity::from_secret(Scalar::random_nonzero(rng), sets)
    }

    pub fn from_secret(sk: Scalar, sets: &GroupChainSets) -> Result<Self> {
        let sk = sk.into_private()?;
        let pk = GroupElement::base_exp(&sk);
        let group = assign_group(&pk, sets.ell());
        Ok(UserIdentity { pk, sk, group, chains: sets.chains(group)?.to_vec() })
    }

    pub fn public(&self) -> UserPublic {
        UserPublic { pk: self.pk, group: self.group }
    }

    /// Chain-specific loopback key known only to this user.
    pub fn loopback_key(&self, chain: ChainId) -> SymmetricKey {
        let own = self.pk.exp(&self.sk);
        SymmetricKey::derive(b"xrd/loopback", &[own.as_bytes(), &chain.to_le_bytes()])
    }

    /// Key for messages this user sends to `partner`.
    pub fn key_to(&self, partner: &GroupElement) -> Result<SymmetricKey> {
        Ok(kdf(&dh(partner, &self.sk)?, partner))
    }

    /// Key for messages `partner` sends to this user.
    pub fn key_from(&self, partner: &GroupElement) -> Result<SymmetricKey> {
        Ok(kdf(&dh(partner, &self.sk)?, &self.pk))
    }
}

/// Public keys of one chain for one round, ordered by position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChainKeys {
    pub mixing: Vec<GroupElement>,
    pub inner: Vec<GroupElement>,
}

/// The partner and what to say to them this round.
#[derive(Clone, Debug)]
pub struct Conversation<'a> {
    pub partner: &'a UserPublic,
    pub content: Content,
}

/// Kind of payload a built message carries; kept by the sender for bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MessageKind {
    Loopback,
    Conversation,
}

#[derive(Clone, Debug)]
pub struct BuiltMessage {
    pub chain: ChainId,
    pub kind: MessageKind,
    pub ciphertext: OuterCiphertext,
}

/// Builds the inner ciphertext bytes for one chain slot.
pub fn build_inner<R: RngCore + CryptoRng>(
    rng: &mut R,
    me: &UserIdentity,
    conversation: Option<&Conversation<'_>>,
    chain: ChainId,
    round: u64,
    keys: &ChainKeys,
    format: &MessageFormat,
) -> Result<Vec<u8>> {
    let payload = match conversation {
        Some(conv) => Payload::seal(
            conv.partner.pk,
            &me.key_to(&conv.partner.pk)?,
            round,
            &conv.content,
            format,
        )?,
        None => Payload::seal(me.pk, &me.loopback_key(chain), round, &Content::loopback(), format)?,
    };
    Ok(encrypt_inner(rng, &payload, round, &keys.inner)?.to_bytes())
}

/// The chain on which `me` talks to `conversation`, if any.
pub fn conversation_chain(
    me: &UserIdentity,
    conversation: Option<&Conversation<'_>>,
    sets: &GroupChainSets,
) -> Result<Option<ChainId>> {
    conversation
        .map(|c| sets.intersect(me.group, c.partner.group))
        .transpose()
}

/// One outer ciphertext per chain in `me.chains`.
pub fn build_round_messages<R: RngCore + CryptoRng>(
    rng: &mut R,
    me: &UserIdentity,
    conversation: Option<&Conversation<'_>>,
    round: u64,
    chain_keys: &BTreeMap<ChainId, ChainKeys>,
    sets: &GroupChainSets,
    format: &MessageFormat,
) -> Result<Vec<BuiltMessage>> {
    let conv_chain = conversation_chain(me, conversation, sets)?;
    if let Some(c) = conv_chain {
        if !me.chains.contains(&c) {
            return Err(Error::Internal(format!("conversation chain {c} not in sender's set")));
        }
    }
    me.chains
        .iter()
        .map(|&chain| {
            let keys = chain_keys.get(&chain).ok_or(Error::MissingChainKeys(chain))?;
            let (conv, kind) = if Some(chain) == conv_chain {
                (conversation, MessageKind::Conversation)
            } else {
                (None, MessageKind::Loopback)
            };
            let inner = build_inner(rng, me, conv, chain, round, keys, format)?;
            let ciphertext = encrypt_outer(rng, &inner, round, &keys.mixing)?;
            Ok(BuiltMessage { chain, kind, ciphertext })
        })
        .collect()
}

/// Messages for `next_round`, used only if this user disappears. With a partner,
/// the conversation slot carries an offline notice.
pub fn build_cover_messages<R: RngCore + CryptoRng>(
    rng: &mut R,
    me: &UserIdentity,
    partner: Option<&UserPublic>,
    next_round: u64,
    chain_keys: &BTreeMap<ChainId, ChainKeys>,
    sets: &GroupChainSets,
    format: &MessageFormat,
) -> Result<Vec<BuiltMessage>> {
    let conv = partner.map(|p| Conversation { partner: p, content: Content::OfflineNotice });
    build_round_messages(rng, me, conv.as_ref(), next_round, chain_keys, sets, format)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Source {
    /// A loopback this user sent on the given chain.
    Loopback(ChainId),
    Partner,
    /// Nothing this user can open.
    Foreign,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fetched {
    pub source: Source,
    pub content: Option<Content>,
}

/// Classifies each mailbox message by the key that opens it.
pub fn fetch_and_decrypt(
    me: &UserIdentity,
    partner: Option<&UserPublic>,
    round: u64,
    messages: &[AuthCiphertext],
    format: &MessageFormat,
) -> Vec<Fetched> {
    let loop_keys: Vec<(ChainId, SymmetricKey)> =
        me.chains.iter().map(|&c| (c, me.loopback_key(c))).collect();
    let partner_key = partner.and_then(|p| me.key_from(&p.pk).ok());
    messages
        .iter()
        .map(|m| {
            for (chain, key) in &loop_keys {
                if let Some(pt) = adec(key, round, m.as_bytes()) {
                    return Fetched { source: Source::Loopback(*chain), content: format.unpad(&pt) };
                }
            }
            if let Some(key) = &partner_key {
                if let Some(pt) = adec(key, round, m.as_bytes()) {
                    return Fetched { source: Source::Partner, content: format.unpad(&pt) };
                }
            }
            Fetched { source: Source::Foreign, content: None }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{adec, verify_dlog};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    /// Mixing and inner keypairs for a chain; mixing keys here are plain `g^msk`
    /// since blinding does not affect what the client computes.
    fn chain(rng: &mut ChaCha20Rng, k: usize) -> (Vec<Scalar>, Vec<Scalar>, ChainKeys) {
        let msk: Vec<_> = (0..k).map(|_| Scalar::random_nonzero(rng)).collect();
        let isk: Vec<_> = (0..k).map(|_| Scalar::random_nonzero(rng)).collect();
        let keys = ChainKeys {
            mixing: msk.iter().map(GroupElement::base_exp).collect(),
            inner: isk.iter().map(GroupElement::base_exp).collect(),
        };
        (msk, isk, keys)
    }

    /// Peels every layer the way an honest chain would, without blinding.
    fn peel(outer: &OuterCiphertext, msk: &[Scalar], round: u64) -> Option<Vec<u8>> {
        let mut layer = outer.onion.as_bytes().to_vec();
        for m in msk {
            layer = adec(&layer_key(&outer.eph_pub.exp(m)), round, &layer)?;
        }
        Some(layer)
    }

    fn open(outer: &OuterCiphertext, msk: &[Scalar], isk: &[Scalar], round: u64) -> Payload {
        let inner = InnerCiphertext::from_bytes(&peel(outer, msk, round).unwrap()).unwrap();
        decrypt_inner(&inner, round, &isk.iter().copied().sum()).unwrap()
    }

    #[test]
    fn padding_layout() {
        let f = MessageFormat::default();
        let p = f.pad(&Content::Data(b"hi".to_vec())).unwrap();
        assert_eq!(p.len(), 256);
        assert_eq!(&p[..5], &[0, 0, 2, b'h', b'i']);
        assert!(p[5..].iter().all(|&b| b == 0));
        assert_eq!(f.unpad(&p), Some(Content::Data(b"hi".to_vec())));
        let n = f.pad(&Content::OfflineNotice).unwrap();
        assert_eq!(n[0], 0x01);
        assert!(n[1..].iter().all(|&b| b == 0));
        assert_eq!(f.unpad(&n), Some(Content::OfflineNotice));
        assert!(matches!(
            f.pad(&Content::Data(vec![1; 254])),
            Err(Error::Oversized { len: 254, capacity: 253 })
        ));
        assert!(f.pad(&Content::Data(vec![1; 253])).is_ok());
    }

    #[test]
    fn inner_single_server_and_subsets() {
        let mut r = rng(1);
        let (_, isk, keys) = chain(&mut r, 3);
        let dest = GroupElement::base_exp(&Scalar::from_u64(9));
        let f = MessageFormat::default();
        let payload =
            Payload::seal(dest, &SymmetricKey::from_bytes([1; 32]), 4, &Content::loopback(), &f)
                .unwrap();
        let inner = encrypt_inner(&mut r, &payload, 4, &keys.inner).unwrap();
        assert_eq!(inner.to_bytes().len(), f.inner_len());
        let all: Scalar = isk.iter().copied().sum();
        assert_eq!(decrypt_inner(&inner, 4, &all).unwrap(), payload);
        for skip in 0..3 {
            let partial: Scalar =
                isk.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, s)| *s).sum();
            assert!(decrypt_inner(&inner, 4, &partial).is_none());
        }
        assert!(decrypt_inner(&inner, 4, &isk[0]).is_none());

        let single = encrypt_inner(&mut r, &payload, 4, &keys.inner[..1]).unwrap();
        assert_eq!(decrypt_inner(&single, 4, &isk[0]).unwrap(), payload);
    }

    #[test]
    fn inner_deterministic_under_seed() {
        let (_, _, keys) = chain(&mut rng(2), 2);
        let f = MessageFormat::default();
        let p = Payload::seal(
            GroupElement::generator(),
            &SymmetricKey::from_bytes([2; 32]),
            1,
            &Content::loopback(),
            &f,
        )
        .unwrap();
        let a = encrypt_inner(&mut rng(5), &p, 1, &keys.inner).unwrap();
        let b = encrypt_inner(&mut rng(5), &p, 1, &keys.inner).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn outer_unwraps_and_proves() {
        let mut r = rng(3);
        let (msk, _, keys) = chain(&mut r, 3);
        let inner = vec![7u8; 100];
        let outer = encrypt_outer(&mut r, &inner, 11, &keys.mixing).unwrap();
        assert_eq!(peel(&outer, &msk, 11).unwrap(), inner);
        assert!(peel(&outer, &msk, 12).is_none());
        assert!(verify_dlog(
            &GroupElement::generator(),
            &outer.eph_pub,
            &outer.proof,
            tags::CLIENT_SUBMISSION
        ));
        assert!(outer.verify_proof());
        let bytes = outer.to_bytes();
        assert_eq!(OuterCiphertext::from_bytes(&bytes).unwrap(), outer);
        assert_eq!(bytes.len(), 96 + 100 + 3 * TAG_LEN);
    }

    fn world(seed: u64) -> (GroupChainSets, BTreeMap<ChainId, ChainKeys>, BTreeMap<ChainId, (Vec<Scalar>, Vec<Scalar>)>) {
        let mut r = rng(seed);
        let sets = GroupChainSets::build(3, 6).unwrap();
        let mut keys = BTreeMap::new();
        let mut secrets = BTreeMap::new();
        for c in 1..=6 {
            let (m, i, k) = chain(&mut r, 3);
            keys.insert(c, k);
            secrets.insert(c, (m, i));
        }
        (sets, keys, secrets)
    }

    fn user_in_group(sets: &GroupChainSets, group: u32, seed: u64) -> UserIdentity {
        (seed..)
            .map(|s| UserIdentity::from_secret(Scalar::from_u64(s), sets).unwrap())
            .find(|u| u.group == group)
            .unwrap()
    }

    #[test]
    fn loopback_round() {
        let (sets, keys, secrets) = world(4);
        let f = MessageFormat::default();
        let me = user_in_group(&sets, 1, 100);
        let msgs = build_round_messages(&mut rng(6), &me, None, 1, &keys, &sets, &f).unwrap();
        assert_eq!(msgs.len(), me.chains.len());
        let mut bodies = Vec::new();
        for m in &msgs {
            assert_eq!(m.kind, MessageKind::Loopback);
            let (msk, isk) = &secrets[&m.chain];
            let p = open(&m.ciphertext, msk, isk, 1);
            assert_eq!(p.dest_pk, me.pk);
            bodies.push(p.body);
        }
        let fetched = fetch_and_decrypt(&me, None, 1, &bodies, &f);
        assert!(fetched.iter().all(|x| matches!(x.source, Source::Loopback(_))));
    }

    #[test]
    fn conversation_lands_on_intersection() {
        let (sets, keys, secrets) = world(7);
        let f = MessageFormat::default();
        let alice = user_in_group(&sets, 2, 1);
        let bob = user_in_group(&sets, 3, 1);
        let bob_pub = bob.public();
        let conv = Conversation { partner: &bob_pub, content: Content::Data(b"hi bob".to_vec()) };
        let msgs =
            build_round_messages(&mut rng(8), &alice, Some(&conv), 5, &keys, &sets, &f).unwrap();
        assert_eq!(msgs.len(), 3);
        let conv_msgs: Vec<_> = msgs.iter().filter(|m| m.kind == MessageKind::Conversation).collect();
        assert_eq!(conv_msgs.len(), 1);
        assert_eq!(conv_msgs[0].chain, 4);
        let (msk, isk) = &secrets[&4];
        let p = open(&conv_msgs[0].ciphertext, msk, isk, 5);
        assert_eq!(p.dest_pk, bob.pk);
        let alice_pub = alice.public();
        let got = fetch_and_decrypt(&bob, Some(&alice_pub), 5, &[p.body], &f);
        assert_eq!(got[0].source, Source::Partner);
        assert_eq!(got[0].content, Some(Content::Data(b"hi bob".to_vec())));
        for m in msgs.iter().filter(|m| m.kind == MessageKind::Loopback) {
            let (msk, isk) = &secrets[&m.chain];
            assert_eq!(open(&m.ciphertext, msk, isk, 5).dest_pk, alice.pk);
        }
    }

    #[test]
    fn shared_keys_agree() {
        let sets = GroupChainSets::build(3, 6).unwrap();
        let a = UserIdentity::from_secret(Scalar::from_u64(11), &sets).unwrap();
        let b = UserIdentity::from_secret(Scalar::from_u64(12), &sets).unwrap();
        assert_eq!(a.key_to(&b.pk).unwrap(), b.key_from(&a.pk).unwrap());
        assert_ne!(a.key_to(&b.pk).unwrap(), a.key_from(&b.pk).unwrap());
    }

    #[test]
    fn uniform_shape_with_and_without_partner() {
        let (sets, keys, _) = world(9);
        let f = MessageFormat::default();
        let a = user_in_group(&sets, 2, 30);
        let b = user_in_group(&sets, 4, 30);
        let bp = b.public();
        let conv = Conversation { partner: &bp, content: Content::Data(vec![1; 200]) };
        let idle = build_round_messages(&mut rng(1), &a, None, 2, &keys, &sets, &f).unwrap();
        let busy = build_round_messages(&mut rng(1), &a, Some(&conv), 2, &keys, &sets, &f).unwrap();
        let shape = |v: &[BuiltMessage]| {
            v.iter().map(|m| (m.chain, m.ciphertext.wire_len())).collect::<Vec<_>>()
        };
        assert_eq!(shape(&idle), shape(&busy));
        assert!(idle.iter().all(|m| m.ciphertext.wire_len() == f.outer_len(3)));
    }

    #[test]
    fn cover_messages() {
        let (sets, keys, secrets) = world(10);
        let f = MessageFormat::default();
        let a = user_in_group(&sets, 1, 50);
        let b = user_in_group(&sets, 3, 50);
        let ap = a.public();
        let bp = b.public();
        let idle = build_cover_messages(&mut rng(2), &a, None, 8, &keys, &sets, &f).unwrap();
        assert!(idle.iter().all(|m| m.kind == MessageKind::Loopback));
        let cover = build_cover_messages(&mut rng(2), &a, Some(&bp), 8, &keys, &sets, &f).unwrap();
        let notices: Vec<_> = cover.iter().filter(|m| m.kind == MessageKind::Conversation).collect();
        assert_eq!(notices.len(), 1);
        let (msk, isk) = &secrets[&notices[0].chain];
        assert!(peel(&notices[0].ciphertext, msk, 7).is_none());
        let p = open(&notices[0].ciphertext, msk, isk, 8);
        assert_eq!(p.dest_pk, b.pk);
        let got = fetch_and_decrypt(&b, Some(&ap), 8, std::slice::from_ref(&p.body), &f);
        assert_eq!(got[0].content, Some(Content::OfflineNotice));
        assert_eq!(fetch_and_decrypt(&b, Some(&ap), 7, &[p.body], &f)[0].source, Source::Foreign);
    }

    #[test]
    fn missing_keys_rejected() {
        let (sets, mut keys, _) = world(11);
        let f = MessageFormat::default();
        let a = user_in_group(&sets, 1, 70);
        keys.remove(&a.chains[0]);
        assert!(matches!(
            build_round_messages(&mut rng(1), &a, None, 1, &keys, &sets, &f),
            Err(Error::MissingChainKeys(_))
        ));
    }

    #[test]
    fn conversing_user_mailbox_classification() {
        let (sets, keys, secrets) = world(12);
        let f = MessageFormat::default();
        let a = user_in_group(&sets, 2, 90);
        let b = user_in_group(&sets, 4, 90);
        let (ap, bp) = (a.public(), b.public());
        let ca = Conversation { partner: &bp, content: Content::Data(b"from a".to_vec()) };
        let cb = Conversation { partner: &ap, content: Content::Data(b"from b".to_vec()) };
        let ma = build_round_messages(&mut rng(1), &a, Some(&ca), 3, &keys, &sets, &f).unwrap();
        let mb = build_round_messages(&mut rng(2), &b, Some(&cb), 3, &keys, &sets, &f).unwrap();
        let mut inbox_a = Vec::new();
        for m in ma.iter().chain(mb.iter()) {
            let (msk, isk) = &secrets[&m.chain];
            let p = open(&m.ciphertext, msk, isk, 3);
            if p.dest_pk == a.pk {
                inbox_a.push(p.body);
            }
        }
        assert_eq!(inbox_a.len(), a.chains.len());
        let got = fetch_and_decrypt(&a, Some(&bp), 3, &inbox_a, &f);
        let partner: Vec<_> = got.iter().filter(|g| g.source == Source::Partner).collect();
        assert_eq!(partner.len(), 1);
        assert_eq!(partner[0].content, Some(Content::Data(b"from b".to_vec())));
        assert_eq!(got.iter().filter(|g| matches!(g.source, Source::Loopback(_))).count(), a.chains.len() - 1);
    }
}
