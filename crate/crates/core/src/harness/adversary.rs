//! Scripted misbehaviour: tampering servers, false accusers and clients with
//! corrupted onion layers.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{CryptoRng, Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::client::{layer_key, OuterCiphertext};
use crate::crypto::{aenc, dh, prove_dlog, tags, AuthCiphertext, GroupElement, Scalar, TAG_LEN};
use crate::mixserver::{
    AccusationReveal, BlameOpening, BlameTrigger, ChainMember, HonestMember, HopProof, MixBatch,
    MixOutcome,
};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryMode {
    #[default]
    None,
    /// Overwrites output ciphertexts with random bytes.
    TamperReplace,
    /// Drops an output entry.
    TamperDrop,
    /// Multiplies one output key by `t` and another by `t⁻¹`.
    TamperProductPreserving,
    /// Overwrites one output entry with a copy of another.
    ReplayDuplicate,
    /// Rotates output keys without moving their ciphertexts.
    TamperReorderKeys,
    /// Users whose onion fails at the target hop.
    MaliciousClientBadInner,
    /// A server that accuses correctly formed entries.
    FalseAccuse,
}

impl AdversaryMode {
    pub const ALL: [AdversaryMode; 8] = [
        AdversaryMode::None,
        AdversaryMode::TamperReplace,
        AdversaryMode::TamperDrop,
        AdversaryMode::TamperProductPreserving,
        AdversaryMode::ReplayDuplicate,
        AdversaryMode::TamperReorderKeys,
        AdversaryMode::MaliciousClientBadInner,
        AdversaryMode::FalseAccuse,
    ];

    pub const TAMPER: [AdversaryMode; 5] = [
        AdversaryMode::TamperReplace,
        AdversaryMode::TamperDrop,
        AdversaryMode::TamperProductPreserving,
        AdversaryMode::ReplayDuplicate,
        AdversaryMode::TamperReorderKeys,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AdversaryMode::None => "none",
            AdversaryMode::TamperReplace => "tamper_replace",
            AdversaryMode::TamperDrop => "tamper_drop",
            AdversaryMode::TamperProductPreserving => "tamper_product_preserving",
            AdversaryMode::ReplayDuplicate => "replay_duplicate",
            AdversaryMode::TamperReorderKeys => "tamper_reorder_keys",
            AdversaryMode::MaliciousClientBadInner => "malicious_client_bad_inner",
            AdversaryMode::FalseAccuse => "false_accuse",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn is_tamper(self) -> bool {
        Self::TAMPER.contains(&self)
    }

    /// Whether a server at the target position misbehaves.
    pub fn is_server(self) -> bool {
        self.is_tamper() || self == AdversaryMode::FalseAccuse
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySpec {
    #[serde(default)]
    pub mode: AdversaryMode,
    #[serde(default = "one")]
    pub target_chain: u32,
    #[serde(default = "one")]
    pub target_hop: u32,
    /// Entries tampered, entries accused, or malicious clients.
    #[serde(default = "one")]
    pub count: u32,
}

fn one() -> u32 {
    1
}

impl Default for AdversarySpec {
    fn default() -> Self {
        AdversarySpec { mode: AdversaryMode::None, target_chain: 1, target_hop: 1, count: 1 }
    }
}

impl AdversarySpec {
    pub fn validate(&self, chains: u32, k: u32) -> Result<()> {
        if self.mode == AdversaryMode::None {
            return Ok(());
        }
        if self.target_chain == 0 || self.target_chain > chains {
            return Err(Error::Config(format!("target_chain {} outside 1..={chains}", self.target_chain)));
        }
        if self.target_hop == 0 || self.target_hop > k {
            return Err(Error::Config(format!("target_hop {} outside 1..={k}", self.target_hop)));
        }
        if self.mode.is_tamper() && self.target_hop >= k {
            return Err(Error::Config(format!(
                "{} needs an honest server downstream: target_hop must be below k={k}",
                self.mode.name()
            )));
        }
        if self.count == 0 {
            return Err(Error::Config("adversary count must be at least 1".into()));
        }
        Ok(())
    }
}

/// An honest member whose hop output is altered after mixing.
pub struct TamperingMember {
    inner: HonestMember,
    mode: AdversaryMode,
    count: usize,
}

impl TamperingMember {
    pub fn new(inner: HonestMember, mode: AdversaryMode, count: u32) -> Self {
        debug_assert!(mode.is_tamper());
        TamperingMember { inner, mode, count: count.max(1) as usize }
    }

    fn tamper(&mut self, input: &MixBatch, mut output: MixBatch, proof: HopProof) -> (MixBatch, HopProof) {
        let n = output.len();
        let in_keys = input.keys();
        let count = self.count.min(n);
        let rng = self.inner.rng();
        match self.mode {
            AdversaryMode::TamperReplace => {
                for j in sample(rng, n, count) {
                    let len = output.entries[j].ciphertext.len();
                    let mut garbage = vec![0u8; len];
                    rng.fill_bytes(&mut garbage);
                    output.entries[j].ciphertext = garbage;
                }
                (output, proof)
            }
            AdversaryMode::TamperDrop => {
                let j = rng.gen_range(0..n);
                output.entries.remove(j);
                let proof = self.inner.prove_keys(&in_keys, output.keys());
                (output, proof)
            }
            AdversaryMode::TamperProductPreserving => {
                let pick = sample(rng, n, 2);
                let (a, b) = (pick.index(0), pick.index(1));
                let t = GroupElement::random(rng);
                output.entries[a].key = output.entries[a].key.combine(&t);
                output.entries[b].key = output.entries[b].key.divide(&t);
                let proof = self.inner.prove_keys(&in_keys, output.keys());
                (output, proof)
            }
            AdversaryMode::ReplayDuplicate => {
                let pick = sample(rng, n, 2);
                let (src, dst) = (pick.index(0), pick.index(1));
                output.entries[dst] = output.entries[src].clone();
                let proof = self.inner.prove_keys(&in_keys, output.keys());
                (output, proof)
            }
            AdversaryMode::TamperReorderKeys => {
                let mut idx: Vec<usize> = sample(rng, n, count.max(2)).into_vec();
                idx.sort_unstable();
                let keys: Vec<GroupElement> = idx.iter().map(|&j| output.entries[j].key).collect();
                for (slot, &j) in idx.iter().enumerate() {
                    output.entries[j].key = keys[(slot + 1) % keys.len()];
                }
                let proof = self.inner.prove_keys(&in_keys, output.keys());
                (output, proof)
            }
            _ => (output, proof),
        }
    }
}

impl ChainMember for TamperingMember {
    fn position(&self) -> u32 {
        self.inner.position()
    }

    fn mix(&mut self, batch: &MixBatch) -> Result<MixOutcome> {
        match self.inner.mix(batch)? {
            MixOutcome::Mixed { output, proof, record } => {
                let (output, proof) = self.tamper(batch, output, proof);
                Ok(MixOutcome::Mixed { output, proof, record })
            }
            blame => Ok(blame),
        }
    }

    fn open_upstream(&mut self, out_index: usize) -> Option<BlameOpening> {
        self.inner.open_upstream(out_index)
    }

    fn reveal_accusation(&mut self, in_index: usize) -> Option<AccusationReveal> {
        self.inner.reveal_accusation(in_index)
    }

    fn reissue(&mut self, removed_out: &BTreeSet<usize>) -> Result<(HopProof, BTreeSet<usize>)> {
        self.inner.reissue(removed_out)
    }

    fn reveal_inner(&mut self) -> Scalar {
        self.inner.reveal_inner()
    }
}

/// Mixes honestly but reports decryption failures on well-formed entries.
pub struct FalseAccuser {
    inner: HonestMember,
    count: usize,
}

impl FalseAccuser {
    pub fn new(inner: HonestMember, count: u32) -> Self {
        FalseAccuser { inner, count: count.max(1) as usize }
    }
}

impl ChainMember for FalseAccuser {
    fn position(&self) -> u32 {
        self.inner.position()
    }

    fn mix(&mut self, batch: &MixBatch) -> Result<MixOutcome> {
        let hop = self.inner.position();
        self.inner.mix(batch)?;
        let n = batch.len();
        let mut entries = sample(self.inner.rng(), n, self.count.min(n)).into_vec();
        entries.sort_unstable();
        Ok(MixOutcome::Blame(BlameTrigger { hop, entries }))
    }

    fn open_upstream(&mut self, out_index: usize) -> Option<BlameOpening> {
        self.inner.open_upstream(out_index)
    }

    fn reveal_accusation(&mut self, in_index: usize) -> Option<AccusationReveal> {
        self.inner.reveal_accusation(in_index)
    }

    fn reissue(&mut self, removed_out: &BTreeSet<usize>) -> Result<(HopProof, BTreeSet<usize>)> {
        self.inner.reissue(removed_out)
    }

    fn reveal_inner(&mut self) -> Scalar {
        self.inner.reveal_inner()
    }
}

/// Onion whose layer `bad_layer` (1-based) is random bytes of the right length,
/// so that server `bad_layer` fails to decrypt while upstream servers succeed.
pub fn corrupt_onion<R: RngCore + CryptoRng>(
    rng: &mut R,
    inner: &[u8],
    round: u64,
    mixing_pks: &[GroupElement],
    bad_layer: u32,
) -> Result<OuterCiphertext> {
    if bad_layer == 0 || bad_layer as usize > mixing_pks.len() {
        return Err(Error::InvalidParameter(format!("layer {bad_layer} outside the chain")));
    }
    let x = Scalar::random_nonzero(rng);
    let g = GroupElement::generator();
    let eph_pub = g.exp(&x);
    let proof = prove_dlog(rng, &g, &eph_pub, &x, tags::CLIENT_SUBMISSION);
    let mut layer = inner.to_vec();
    for (i, mpk) in mixing_pks.iter().enumerate().rev() {
        if i + 1 == bad_layer as usize {
            let mut garbage = vec![0u8; layer.len() + TAG_LEN];
            rng.fill_bytes(&mut garbage);
            layer = garbage;
        } else {
            layer = aenc(&layer_key(&dh(mpk, &x)?), round, &layer).into_bytes();
        }
    }
    Ok(OuterCiphertext { eph_pub, proof, onion: AuthCiphertext::from_bytes(layer) })
}
