//! Per-chain server logic for the aggregate hybrid shuffle.
//!
//! Long-term keys chain multiplicatively: `bpk_0 = g`, `bpk_i = bpk_{i-1}^{bsk_i}`
//! and `mpk_i = bpk_{i-1}^{msk_i}`. A user's key arriving at hop `i` is
//! `X_i = g^{x·∏_{a<i} bsk_a}`, so `X_i^{msk_i}` equals the user's `mpk_i^x`.

mod blame;
mod chain;

pub use blame::{
    run_blame, AccusationReveal, BlameContext, BlameEvidence, BlameOpening, BlameTrigger, Verdict,
};
pub use chain::{
    run_chain_round, AbortReason, ChainMember, ChainRoundInput, ChainRoundResult, ChainStatus,
    Detection, DetectionKind, HonestMember, Phase,
};

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};

use crate::client::{decrypt_inner, layer_key, InnerCiphertext, OuterCiphertext, Payload};
use crate::crypto::{
    adec, prove_dleq, prove_dlog, tags, verify_dleq, verify_dlog, DleqProof, DlogProof,
    GroupElement, Scalar,
};
use crate::{Error, Result};

/// Identifies whoever submitted a ciphertext, for blame attribution.
pub type SenderId = u32;

/// Public half of a server's long-term keys plus proofs of knowledge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ServerPublicKeys {
    pub position: u32,
    pub bpk_prev: GroupElement,
    pub bpk: GroupElement,
    pub mpk: GroupElement,
    pub blind_proof: DlogProof,
    pub mix_proof: DlogProof,
}

impl ServerPublicKeys {
    pub fn verify(&self) -> bool {
        !self.bpk.is_identity()
            && !self.mpk.is_identity()
            && verify_dlog(&self.bpk_prev, &self.bpk, &self.blind_proof, tags::KEYGEN_BLIND)
            && verify_dlog(&self.bpk_prev, &self.mpk, &self.mix_proof, tags::KEYGEN_MIX)
    }
}

#[derive(Clone, Debug)]
pub struct ServerKeys {
    pub position: u32,
    pub bsk: Scalar,
    pub msk: Scalar,
    pub public: ServerPublicKeys,
}

impl ServerKeys {
    pub fn bpk_prev(&self) -> &GroupElement {
        &self.public.bpk_prev
    }

    pub fn bpk(&self) -> &GroupElement {
        &self.public.bpk
    }

    pub fn mpk(&self) -> &GroupElement {
        &self.public.mpk
    }
}

/// Long-term keys for `position`, based on the previous server's blinding key.
pub fn gen_keys<R: RngCore + CryptoRng>(
    rng: &mut R,
    position: u32,
    bpk_prev: &GroupElement,
) -> Result<ServerKeys> {
    if position == 0 {
        return Err(Error::InvalidParameter("positions start at 1".into()));
    }
    if position == 1 && *bpk_prev != GroupElement::generator() {
        return Err(Error::InvalidParameter("first server must build on g".into()));
    }
    let (bsk, bpk) = crate::crypto::keygen(rng, bpk_prev)?;
    let (msk, mpk) = crate::crypto::keygen(rng, bpk_prev)?;
    let blind_proof = prove_dlog(rng, bpk_prev, &bpk, &bsk, tags::KEYGEN_BLIND);
    let mix_proof = prove_dlog(rng, bpk_prev, &mpk, &msk, tags::KEYGEN_MIX);
    Ok(ServerKeys {
        position,
        bsk,
        msk,
        public: ServerPublicKeys { position, bpk_prev: *bpk_prev, bpk, mpk, blind_proof, mix_proof },
    })
}

/// Runs keygen for positions `1..=k` in order, each server checking its predecessor.
pub fn key_ceremony<R: RngCore + CryptoRng>(rng: &mut R, k: u32) -> Result<Vec<ServerKeys>> {
    let mut out: Vec<ServerKeys> = Vec::with_capacity(k as usize);
    let mut prev = GroupElement::generator();
    for position in 1..=k {
        if let Some(last) = out.last() {
            if !last.public.verify() {
                return Err(Error::Internal(format!("keygen proof of position {} failed", position - 1)));
            }
        }
        let keys = gen_keys(rng, position, &prev)?;
        prev = keys.public.bpk;
        out.push(keys);
    }
    Ok(out)
}

/// Per-round inner keypair `(ipk = g^isk, isk)`.
#[derive(Clone, Debug)]
pub struct InnerKeys {
    pub round: u64,
    pub position: u32,
    pub isk: Scalar,
    pub ipk: GroupElement,
    pub proof: DlogProof,
}

impl InnerKeys {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R, position: u32, round: u64) -> Self {
        let g = GroupElement::generator();
        let isk = Scalar::random_nonzero(rng);
        let ipk = g.exp(&isk);
        let proof = prove_dlog(rng, &g, &ipk, &isk, tags::KEYGEN_INNER);
        InnerKeys { round, position, isk, ipk, proof }
    }

    pub fn verify_public(ipk: &GroupElement, proof: &DlogProof) -> bool {
        verify_dlog(&GroupElement::generator(), ipk, proof, tags::KEYGEN_INNER)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Submission {
    pub sender: SenderId,
    pub ciphertext: OuterCiphertext,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RejectReason {
    BadProof,
    DuplicateKey,
    WrongLength,
}

#[derive(Clone, Debug)]
pub struct InputAgreement {
    pub digest: [u8; 32],
    /// Sorted by canonical ciphertext bytes.
    pub accepted: Vec<Submission>,
    pub rejected: Vec<(SenderId, RejectReason)>,
}

/// Filters, canonically orders and hashes a chain's submissions.
///
/// Drops submissions whose proof fails or whose onion has the wrong size, and
/// for repeated `g^x` keeps only the lexicographically-first ciphertext.
pub fn agree_inputs(submissions: &[Submission], onion_len: Option<usize>) -> InputAgreement {
    let mut rejected = Vec::new();
    let mut keyed: Vec<(Vec<u8>, &Submission)> = Vec::with_capacity(submissions.len());
    for s in submissions {
        if onion_len.is_some_and(|l| s.ciphertext.onion.len() != l) {
            rejected.push((s.sender, RejectReason::WrongLength));
        } else if !s.ciphertext.verify_proof() {
            rejected.push((s.sender, RejectReason::BadProof));
        } else {
            keyed.push((s.ciphertext.to_bytes(), s));
        }
    }
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.sender.cmp(&b.1.sender)));
    let mut seen = BTreeSet::new();
    let mut accepted = Vec::with_capacity(keyed.len());
    let mut h = Sha256::new();
    h.update(b"xrd/input-digest");
    for (bytes, s) in keyed {
        if !seen.insert(s.ciphertext.eph_pub) {
            rejected.push((s.sender, RejectReason::DuplicateKey));
            continue;
        }
        h.update((bytes.len() as u32).to_le_bytes());
        h.update(&bytes);
        accepted.push(s.clone());
    }
    InputAgreement { digest: h.finalize().into(), accepted, rejected }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixEntry {
    pub key: GroupElement,
    pub ciphertext: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixBatch {
    pub round: u64,
    /// Position of the server that consumes this batch.
    pub hop: u32,
    pub entries: Vec<MixEntry>,
}

impl MixBatch {
    /// Hop-1 batch from agreed submissions.
    pub fn from_submissions(round: u64, subs: &[Submission]) -> Self {
        MixBatch {
            round,
            hop: 1,
            entries: subs
                .iter()
                .map(|s| MixEntry {
                    key: s.ciphertext.eph_pub,
                    ciphertext: s.ciphertext.onion.as_bytes().to_vec(),
                })
                .collect(),
        }
    }

    pub fn keys(&self) -> Vec<GroupElement> {
        self.entries.iter().map(|e| e.key).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry_len(&self) -> usize {
        self.entries.first().map_or(0, |e| e.ciphertext.len())
    }

    pub fn check_uniform(&self) -> Result<()> {
        let l = self.entry_len();
        if self.entries.iter().any(|e| e.ciphertext.len() != l) {
            return Err(Error::RaggedBatch);
        }
        Ok(())
    }
}

/// The aggregate blinding proof for one hop.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HopProof {
    pub dleq: DleqProof,
    pub out_keys: Vec<GroupElement>,
}

/// What a server keeps about its own hop so it can answer blame requests and
/// re-prove after removals. Never leaves the server.
#[derive(Clone, Debug)]
pub struct HopRecord {
    pub input: MixBatch,
    /// `output[j]` came from `input[perm[j]]`.
    pub perm: Vec<usize>,
    pub out_keys: Vec<GroupElement>,
    pub proof: HopProof,
}

impl HopRecord {
    pub fn input_index(&self, out_index: usize) -> Option<usize> {
        self.perm.get(out_index).copied()
    }
}

#[derive(Clone, Debug)]
pub enum MixOutcome {
    Mixed { output: MixBatch, proof: HopProof, record: HopRecord },
    Blame(BlameTrigger),
}

pub fn prove_hop<R: RngCore + CryptoRng>(
    rng: &mut R,
    keys: &ServerKeys,
    in_keys: &[GroupElement],
    out_keys: Vec<GroupElement>,
) -> HopProof {
    let dleq = prove_dleq(
        rng,
        &GroupElement::product(in_keys),
        &GroupElement::product(&out_keys),
        keys.bpk_prev(),
        keys.bpk(),
        &keys.bsk,
        tags::MIX_BLIND,
    );
    HopProof { dleq, out_keys }
}

/// Decrypts every entry; only if all authenticate, blinds keys and shuffles.
pub fn mix_step<R: RngCore + CryptoRng>(
    rng: &mut R,
    keys: &ServerKeys,
    batch: &MixBatch,
) -> Result<MixOutcome> {
    if batch.hop != keys.position {
        return Err(Error::HopMismatch { batch: batch.hop, server: keys.position });
    }
    if batch.len() < 2 {
        return Err(Error::BatchTooSmall(batch.len()));
    }
    batch.check_uniform()?;
    let mut peeled = Vec::with_capacity(batch.len());
    let mut failed = Vec::new();
    for (j, e) in batch.entries.iter().enumerate() {
        let shared = match crate::crypto::dh(&e.key, &keys.msk) {
            Ok(s) => s,
            Err(_) => {
                failed.push(j);
                continue;
            }
        };
        match adec(&layer_key(&shared), batch.round, &e.ciphertext) {
            Some(pt) => peeled.push(pt),
            None => failed.push(j),
        }
    }
    if !failed.is_empty() {
        return Ok(MixOutcome::Blame(BlameTrigger { hop: keys.position, entries: failed }));
    }
    let mut perm: Vec<usize> = (0..batch.len()).collect();
    perm.shuffle(rng);
    let blinded: Vec<GroupElement> = batch.entries.iter().map(|e| e.key.exp(&keys.bsk)).collect();
    let mut peeled: Vec<Option<Vec<u8>>> = peeled.into_iter().map(Some).collect();
    let entries: Vec<MixEntry> = perm
        .iter()
        .map(|&i| MixEntry { key: blinded[i], ciphertext: peeled[i].take().expect("each index once") })
        .collect();
    let out_keys: Vec<GroupElement> = entries.iter().map(|e| e.key).collect();
    let proof = prove_hop(rng, keys, &batch.keys(), out_keys.clone());
    let output = MixBatch { round: batch.round, hop: batch.hop + 1, entries };
    let record = HopRecord { input: batch.clone(), perm, out_keys, proof: proof.clone() };
    Ok(MixOutcome::Mixed { output, proof, record })
}

/// Checks `|in| = |out|` and `log_{∏in} ∏out = log_{bpk_prev} bpk`.
pub fn verify_mix(
    in_keys: &[GroupElement],
    out_keys: &[GroupElement],
    bpk_prev: &GroupElement,
    bpk: &GroupElement,
    proof: &HopProof,
) -> bool {
    in_keys.len() == out_keys.len()
        && !in_keys.is_empty()
        && proof.out_keys.as_slice() == out_keys
        && verify_dleq(
            &GroupElement::product(in_keys),
            &GroupElement::product(out_keys),
            bpk_prev,
            bpk,
            &proof.dleq,
            tags::MIX_BLIND,
        )
}

/// Removes the entries at `removed_out` from this server's output, maps them back
/// to its input, and re-proves the product relation over what remains.
/// Returns the new proof and the removed input indices.
pub fn reprove_after_removal<R: RngCore + CryptoRng>(
    rng: &mut R,
    keys: &ServerKeys,
    record: &mut HopRecord,
    removed_out: &BTreeSet<usize>,
) -> Result<(HopProof, BTreeSet<usize>)> {
    if removed_out.is_empty() {
        return Ok((record.proof.clone(), BTreeSet::new()));
    }
    let mut removed_in = BTreeSet::new();
    for &o in removed_out {
        removed_in.insert(
            record
                .input_index(o)
                .ok_or_else(|| Error::Internal(format!("output index {o} out of range")))?,
        );
    }
    // Reindex the permutation over the survivors.
    let mut new_index = vec![usize::MAX; record.input.len()];
    let mut kept_in = Vec::new();
    for (i, e) in record.input.entries.iter().enumerate() {
        if !removed_in.contains(&i) {
            new_index[i] = kept_in.len();
            kept_in.push(e.clone());
        }
    }
    let mut perm = Vec::new();
    let mut out_keys = Vec::new();
    for (o, &i) in record.perm.iter().enumerate() {
        if !removed_out.contains(&o) {
            perm.push(new_index[i]);
            out_keys.push(record.out_keys[o]);
        }
    }
    record.input.entries = kept_in;
    record.perm = perm;
    record.out_keys = out_keys.clone();
    let in_keys = record.input.keys();
    let proof = if in_keys.is_empty() {
        return Err(Error::BatchTooSmall(0));
    } else {
        prove_hop(rng, keys, &in_keys, out_keys)
    };
    record.proof = proof.clone();
    Ok((proof, removed_in))
}

#[derive(Clone, Debug, Default)]
pub struct FinalDecryption {
    pub payloads: Vec<Payload>,
    /// Entries whose inner layer failed; they only hurt their sender.
    pub dropped: Vec<usize>,
}

/// Opens every inner ciphertext with `Σ isk_i`.
pub fn reveal_and_final_decrypt(all_isk: &[Scalar], final_batch: &MixBatch) -> FinalDecryption {
    let sum: Scalar = all_isk.iter().copied().sum();
    let mut out = FinalDecryption::default();
    for (j, e) in final_batch.entries.iter().enumerate() {
        let opened = InnerCiphertext::from_bytes(&e.ciphertext)
            .ok()
            .and_then(|inner| decrypt_inner(&inner, final_batch.round, &sum));
        match opened {
            Some(p) => out.payloads.push(p),
            None => out.dropped.push(j),
        }
    }
    out
}
