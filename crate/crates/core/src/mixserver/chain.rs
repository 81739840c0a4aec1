//! One chain's round: input agreement, sequential hops with public
//! verification, blame and resumption, inner-key reveal and final decryption.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use super::{
    agree_inputs, mix_step, prove_hop, reprove_after_removal, reveal_and_final_decrypt, run_blame,
    verify_mix, AccusationReveal, BlameContext, BlameOpening, HopProof, HopRecord, InnerKeys,
    MixBatch, MixOutcome, SenderId, ServerKeys, ServerPublicKeys, Submission, Verdict,
};
use crate::client::Payload;
use crate::crypto::{prove_dleq, tags, DlogProof, GroupElement, Scalar};
use crate::topology::ChainId;
use crate::wire::{Body, Delivery, Endpoint, Transport, WireMessage};
use crate::{Error, Result};

/// A server's behaviour at one chain position for one round.
pub trait ChainMember: Send {
    fn position(&self) -> u32;

    /// Processes this member's hop.
    fn mix(&mut self, batch: &MixBatch) -> Result<MixOutcome>;

    /// Opens output entry `out_index` of this member's last hop.
    fn open_upstream(&mut self, out_index: usize) -> Option<BlameOpening>;

    /// Reveals the decryption key for input entry `in_index` this member accused.
    fn reveal_accusation(&mut self, in_index: usize) -> Option<AccusationReveal>;

    /// Drops the given output entries and re-proves the reduced hop.
    fn reissue(&mut self, removed_out: &BTreeSet<usize>) -> Result<(HopProof, BTreeSet<usize>)>;

    fn reveal_inner(&mut self) -> Scalar;
}

/// Follows the protocol exactly.
pub struct HonestMember {
    keys: ServerKeys,
    inner: InnerKeys,
    last_input: Option<MixBatch>,
    record: Option<HopRecord>,
    rng: ChaCha20Rng,
}

impl HonestMember {
    pub fn new(keys: ServerKeys, inner: InnerKeys, seed: [u8; 32]) -> Self {
        HonestMember { keys, inner, last_input: None, record: None, rng: ChaCha20Rng::from_seed(seed) }
    }

    pub fn keys(&self) -> &ServerKeys {
        &self.keys
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }

    /// Re-proves an output key list as if it were honest; used by scripted adversaries.
    pub fn prove_keys(&mut self, in_keys: &[GroupElement], out_keys: Vec<GroupElement>) -> HopProof {
        prove_hop(&mut self.rng, &self.keys, in_keys, out_keys)
    }
}

impl ChainMember for HonestMember {
    fn position(&self) -> u32 {
        self.keys.position
    }

    fn mix(&mut self, batch: &MixBatch) -> Result<MixOutcome> {
        self.last_input = Some(batch.clone());
        let outcome = mix_step(&mut self.rng, &self.keys, batch)?;
        if let MixOutcome::Mixed { record, .. } = &outcome {
            self.record = Some(record.clone());
        }
        Ok(outcome)
    }

    fn open_upstream(&mut self, out_index: usize) -> Option<BlameOpening> {
        let record = self.record.as_ref()?;
        let in_index = record.input_index(out_index)?;
        let entry = record.input.entries.get(in_index)?;
        let next_key = record.out_keys[out_index];
        let k = &self.keys;
        let decrypt_key = entry.key.exp(&k.msk);
        let unblind_proof = prove_dleq(
            &mut self.rng,
            &entry.key,
            &next_key,
            k.bpk_prev(),
            k.bpk(),
            &k.bsk,
            tags::BLAME_KEY,
        );
        let key_proof = prove_dleq(
            &mut self.rng,
            &entry.key,
            &decrypt_key,
            k.bpk_prev(),
            k.mpk(),
            &k.msk,
            tags::BLAME_DECRYPT,
        );
        Some(BlameOpening {
            position: k.position,
            in_index,
            key: entry.key,
            decrypt_key,
            ciphertext: entry.ciphertext.clone(),
            unblind_proof,
            key_proof,
        })
    }

    fn reveal_accusation(&mut self, in_index: usize) -> Option<AccusationReveal> {
        let entry = self.last_input.as_ref()?.entries.get(in_index)?.clone();
        let k = &self.keys;
        let decrypt_key = entry.key.exp(&k.msk);
        let key_proof = prove_dleq(
            &mut self.rng,
            &entry.key,
            &decrypt_key,
            k.bpk_prev(),
            k.mpk(),
            &k.msk,
            tags::BLAME_DECRYPT,
        );
        Some(AccusationReveal {
            position: k.position,
            in_index,
            key: entry.key,
            decrypt_key,
            ciphertext: entry.ciphertext,
            key_proof,
        })
    }

    fn reissue(&mut self, removed_out: &BTreeSet<usize>) -> Result<(HopProof, BTreeSet<usize>)> {
        let record = self.record.as_mut().ok_or(Error::Internal("no hop to re-prove".into()))?;
        reprove_after_removal(&mut self.rng, &self.keys, record, removed_out)
    }

    fn reveal_inner(&mut self) -> Scalar {
        self.inner.isk
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Agree,
    Mix,
    Blame,
    Reveal,
    Decrypt,
}

impl Phase {
    pub const ALL: [Phase; 5] = [Phase::Agree, Phase::Mix, Phase::Blame, Phase::Reveal, Phase::Decrypt];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Agree => "agree",
            Phase::Mix => "mix",
            Phase::Blame => "blame",
            Phase::Reveal => "reveal",
            Phase::Decrypt => "decrypt",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AbortReason {
    /// A member was down at round start.
    ServerFailure,
    DigestMismatch,
    InsufficientInputs,
    ProofRejected { hop: u32 },
    BlameFailedProver { position: u32 },
    InnerKeyMismatch { position: u32 },
    MemberError { position: u32 },
}

impl AbortReason {
    pub fn name(&self) -> &'static str {
        match self {
            AbortReason::ServerFailure => "server_failure",
            AbortReason::DigestMismatch => "digest_mismatch",
            AbortReason::InsufficientInputs => "insufficient_inputs",
            AbortReason::ProofRejected { .. } => "proof_rejected",
            AbortReason::BlameFailedProver { .. } => "failed_prover",
            AbortReason::InnerKeyMismatch { .. } => "inner_key_mismatch",
            AbortReason::MemberError { .. } => "member_error",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChainStatus {
    Delivered,
    Aborted(AbortReason),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DetectionKind {
    ProofRejected,
    DecryptionFailure,
    DigestMismatch,
}

impl DetectionKind {
    pub fn name(self) -> &'static str {
        match self {
            DetectionKind::ProofRejected => "proof_rejected",
            DetectionKind::DecryptionFailure => "decryption_failure",
            DetectionKind::DigestMismatch => "digest_mismatch",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Detection {
    pub hop: u32,
    pub kind: DetectionKind,
    /// Present when a blame session ran.
    pub verdict: Option<Verdict>,
}

/// Observable size of one hop's output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HopTraffic {
    pub hop: u32,
    pub entries: usize,
    pub entry_len: usize,
}

pub struct ChainRoundInput<'a> {
    pub chain_id: ChainId,
    pub round: u64,
    /// Indexed by position − 1.
    pub publics: &'a [ServerPublicKeys],
    /// Published inner keys for this round, indexed by position − 1.
    pub inner_publics: &'a [(GroupElement, DlogProof)],
    pub members: Vec<Box<dyn ChainMember>>,
    pub submissions: Vec<Submission>,
    pub onion_len: usize,
}

#[derive(Clone, Debug)]
pub struct ChainRoundResult {
    pub chain_id: ChainId,
    pub status: ChainStatus,
    pub accepted: usize,
    pub rejected: Vec<(SenderId, super::RejectReason)>,
    pub detections: Vec<Detection>,
    /// Users removed by blame verdicts.
    pub removed_users: BTreeSet<SenderId>,
    pub inner_keys_revealed: bool,
    pub payloads: Vec<Payload>,
    pub dropped_payloads: usize,
    pub traffic: Vec<HopTraffic>,
    /// Simulated time spent per phase, in microseconds.
    pub sim_phase_us: Vec<(Phase, u64)>,
    pub bytes: u64,
    /// Local compute time per phase; not deterministic.
    pub wall: Vec<(Phase, Duration)>,
}

impl ChainRoundResult {
    pub fn aborted(chain_id: ChainId, reason: AbortReason) -> Self {
        ChainRoundResult {
            chain_id,
            status: ChainStatus::Aborted(reason),
            accepted: 0,
            rejected: Vec::new(),
            detections: Vec::new(),
            removed_users: BTreeSet::new(),
            inner_keys_revealed: false,
            payloads: Vec::new(),
            dropped_payloads: 0,
            traffic: Vec::new(),
            sim_phase_us: Vec::new(),
            bytes: 0,
            wall: Vec::new(),
        }
    }

    pub fn is_delivered(&self) -> bool {
        self.status == ChainStatus::Delivered
    }
}

struct Clock<'t> {
    transport: &'t mut dyn Transport,
    sim_start: u64,
    wall_start: Instant,
    phase: Phase,
    sim: Vec<(Phase, u64)>,
    wall: Vec<(Phase, Duration)>,
}

impl<'t> Clock<'t> {
    fn new(transport: &'t mut dyn Transport) -> Self {
        let sim_start = transport.now_us();
        Clock { transport, sim_start, wall_start: Instant::now(), phase: Phase::Agree, sim: Vec::new(), wall: Vec::new() }
    }

    fn enter(&mut self, phase: Phase) {
        if phase != self.phase {
            self.close();
            self.phase = phase;
        }
    }

    fn close(&mut self) {
        let now = self.transport.now_us();
        add(&mut self.sim, self.phase, now - self.sim_start);
        add(&mut self.wall, self.phase, self.wall_start.elapsed());
        self.sim_start = now;
        self.wall_start = Instant::now();
    }
}

fn add<T: std::ops::AddAssign + Copy>(v: &mut Vec<(Phase, T)>, phase: Phase, t: T) {
    match v.iter_mut().find(|(p, _)| *p == phase) {
        Some((_, acc)) => *acc += t,
        None => v.push((phase, t)),
    }
}

fn broadcast(
    transport: &mut dyn Transport,
    from: Endpoint,
    k: u32,
    message: &WireMessage,
) -> Result<()> {
    for to in (1..=k).filter(|&p| p != from) {
        transport.send(from, to, message)?;
    }
    Ok(())
}

fn hop_message(round: u64, hop: u32, out_keys: &[GroupElement], cts: Vec<Vec<u8>>, proof: &HopProof) -> WireMessage {
    WireMessage::new(
        round,
        Body::Hop { hop, out_keys: out_keys.to_vec(), ciphertexts: cts, dleq: proof.dleq },
    )
}

/// Keeps only the entries whose index is not in `removed`.
fn without<T: Clone>(items: &[T], removed: &BTreeSet<usize>) -> Vec<T> {
    items
        .iter()
        .enumerate()
        .filter(|(i, _)| !removed.contains(i))
        .map(|(_, x)| x.clone())
        .collect()
}

/// Runs one chain for one round over `transport`.
///
/// Every member sees the same broadcasts in the simulator, so each public
/// check is evaluated once on behalf of all honest verifiers.
pub fn run_chain_round(input: ChainRoundInput<'_>, transport: &mut dyn Transport) -> Result<ChainRoundResult> {
    let ChainRoundInput { chain_id, round, publics, inner_publics, mut members, submissions, onion_len } =
        input;
    let k = members.len() as u32;
    if k == 0 || publics.len() != members.len() || inner_publics.len() != members.len() {
        return Err(Error::InvalidParameter("chain members, keys and inner keys must align".into()));
    }
    let bytes_start = transport.bytes_sent();
    let mut clock = Clock::new(transport);
    let mut result = ChainRoundResult::aborted(chain_id, AbortReason::InsufficientInputs);

    let finish = |mut result: ChainRoundResult, mut clock: Clock<'_>, status: ChainStatus| {
        clock.close();
        result.status = status;
        result.sim_phase_us = clock.sim;
        result.wall = clock.wall;
        result.bytes = clock.transport.bytes_sent() - bytes_start;
        Ok(result)
    };

    // Input agreement.
    let agreement = agree_inputs(&submissions, Some(onion_len));
    result.accepted = agreement.accepted.len();
    result.rejected = agreement.rejected.clone();
    let digest_msg = WireMessage::new(round, Body::InputDigest(agreement.digest));
    for p in 1..=k {
        broadcast(clock.transport, p, k, &digest_msg)?;
    }
    let digests = clock.transport.flush()?;
    if digests.iter().any(|d| d.message.body != Body::InputDigest(agreement.digest)) {
        result.detections.push(Detection { hop: 0, kind: DetectionKind::DigestMismatch, verdict: None });
        return finish(result, clock, ChainStatus::Aborted(AbortReason::DigestMismatch));
    }
    if agreement.accepted.len() < 2 {
        return finish(result, clock, ChainStatus::Aborted(AbortReason::InsufficientInputs));
    }

    let mut subs = agreement.accepted;
    let mut hop_inputs = vec![MixBatch::from_submissions(round, &subs)];
    let mut position = 1u32;
    while position <= k {
        clock.enter(Phase::Mix);
        let idx = position as usize - 1;
        let batch = &hop_inputs[idx];
        if batch.len() < 2 {
            return finish(result, clock, ChainStatus::Aborted(AbortReason::InsufficientInputs));
        }
        let outcome = match members[idx].mix(batch) {
            Ok(o) => o,
            Err(_) => {
                return finish(result, clock, ChainStatus::Aborted(AbortReason::MemberError { position }));
            }
        };
        match outcome {
            MixOutcome::Mixed { output, proof, .. } => {
                let out_keys = output.keys();
                let cts: Vec<Vec<u8>> = output.entries.iter().map(|e| e.ciphertext.clone()).collect();
                let pubs = &publics[idx];
                for to in (1..=k).filter(|&p| p != position) {
                    let full = to == position + 1;
                    let msg = hop_message(round, position, &out_keys, if full { cts.clone() } else { Vec::new() }, &proof);
                    clock.transport.send(position, to, &msg)?;
                }
                let received = clock.transport.flush()?;
                let received_batch = received_output(&received, round, position, &output);
                if !verify_mix(&batch.keys(), &out_keys, &pubs.bpk_prev, &pubs.bpk, &proof)
                    || received_batch.check_uniform().is_err()
                {
                    result.detections.push(Detection { hop: position, kind: DetectionKind::ProofRejected, verdict: None });
                    return finish(result, clock, ChainStatus::Aborted(AbortReason::ProofRejected { hop: position }));
                }
                result.traffic.push(HopTraffic {
                    hop: position,
                    entries: received_batch.len(),
                    entry_len: received_batch.entry_len(),
                });
                hop_inputs.truncate(idx + 1);
                hop_inputs.push(received_batch);
                position += 1;
            }
            MixOutcome::Blame(trigger) => {
                clock.enter(Phase::Blame);
                let entries: Vec<u32> = trigger.entries.iter().map(|&e| e as u32).collect();
                broadcast(clock.transport, position, k, &WireMessage::new(round, Body::BlameOpen { entries }))?;
                let outbox: RefCell<Vec<(Endpoint, WireMessage)>> = RefCell::new(Vec::new());
                let (upstream, rest) = members.split_at_mut(idx);
                let accuser = &mut rest[0];
                let ctx = BlameContext { round, publics, hop_inputs: &hop_inputs[..=idx], submissions: &subs };
                let verdict = run_blame(
                    &ctx,
                    &trigger,
                    |i, out_index| {
                        let o = upstream[i as usize - 1].open_upstream(out_index)?;
                        outbox.borrow_mut().push((i, step_message(round, &o)));
                        Some(o)
                    },
                    |in_index| {
                        let r = accuser.reveal_accusation(in_index)?;
                        outbox.borrow_mut().push((position, accusation_message(round, &r)));
                        Some(r)
                    },
                );
                for (from, msg) in outbox.into_inner() {
                    broadcast(clock.transport, from, k, &msg)?;
                }
                let verdict_msg = WireMessage::new(
                    round,
                    Body::Verdict {
                        users: verdict.malicious_users.iter().copied().collect(),
                        server: verdict.failed_prover,
                    },
                );
                broadcast(clock.transport, position, k, &verdict_msg)?;
                clock.transport.flush()?;
                result.detections.push(Detection {
                    hop: position,
                    kind: DetectionKind::DecryptionFailure,
                    verdict: Some(verdict.clone()),
                });
                if let Some(p) = verdict.failed_prover {
                    return finish(result, clock, ChainStatus::Aborted(AbortReason::BlameFailedProver { position: p }));
                }
                result.removed_users.extend(verdict.malicious_users.iter().copied());

                // Upstream members re-prove over the reduced sets, back to the submissions.
                let mut removed = verdict.removed.clone();
                hop_inputs[idx].entries = without(&hop_inputs[idx].entries, &removed);
                for i in (1..position).rev() {
                    let iidx = i as usize - 1;
                    let (proof, removed_in) = match members[iidx].reissue(&removed) {
                        Ok(r) => r,
                        Err(_) => {
                            return finish(result, clock, ChainStatus::Aborted(AbortReason::BlameFailedProver { position: i }));
                        }
                    };
                    let reduced_in = MixBatch {
                        round,
                        hop: i,
                        entries: without(&hop_inputs[iidx].entries, &removed_in),
                    };
                    let out_keys = hop_inputs[iidx + 1].keys();
                    broadcast(clock.transport, i, k, &hop_message(round, i, &out_keys, Vec::new(), &proof))?;
                    let pubs = &publics[iidx];
                    if !verify_mix(&reduced_in.keys(), &out_keys, &pubs.bpk_prev, &pubs.bpk, &proof) {
                        clock.transport.flush()?;
                        return finish(result, clock, ChainStatus::Aborted(AbortReason::BlameFailedProver { position: i }));
                    }
                    hop_inputs[iidx] = reduced_in;
                    removed = removed_in;
                }
                clock.transport.flush()?;
                subs = without(&subs, &removed);
                // Mixing resumes at the accuser with the reduced batch.
            }
        }
    }

    // Reveal only after every hop verified.
    clock.enter(Phase::Reveal);
    let mut isks = Vec::with_capacity(k as usize);
    for (idx, m) in members.iter_mut().enumerate() {
        let isk = m.reveal_inner();
        broadcast(clock.transport, idx as u32 + 1, k, &WireMessage::new(round, Body::Reveal { position: idx as u32 + 1, isk }))?;
        isks.push(isk);
    }
    clock.transport.flush()?;
    result.inner_keys_revealed = true;
    for (idx, isk) in isks.iter().enumerate() {
        if GroupElement::generator().exp(isk) != inner_publics[idx].0 {
            return finish(result, clock, ChainStatus::Aborted(AbortReason::InnerKeyMismatch { position: idx as u32 + 1 }));
        }
    }

    clock.enter(Phase::Decrypt);
    let opened = reveal_and_final_decrypt(&isks, &hop_inputs[k as usize]);
    result.payloads = opened.payloads;
    result.dropped_payloads = opened.dropped.len();
    finish(result, clock, ChainStatus::Delivered)
}

/// The batch the next hop decoded; for the last hop, the sender's own output.
fn received_output(received: &[Delivery], round: u64, hop: u32, sent: &MixBatch) -> MixBatch {
    let full = received.iter().find_map(|d| match &d.message.body {
        Body::Hop { hop: h, out_keys, ciphertexts, .. } if *h == hop && !ciphertexts.is_empty() => {
            Some((out_keys, ciphertexts))
        }
        _ => None,
    });
    match full {
        Some((keys, cts)) => MixBatch {
            round,
            hop: hop + 1,
            entries: keys
                .iter()
                .zip(cts)
                .map(|(key, c)| super::MixEntry { key: *key, ciphertext: c.clone() })
                .collect(),
        },
        None => sent.clone(),
    }
}

fn step_message(round: u64, o: &BlameOpening) -> WireMessage {
    WireMessage::new(
        round,
        Body::BlameStep {
            position: o.position,
            entry: o.in_index as u32,
            key: o.key,
            decrypt_key: o.decrypt_key,
            unblind_proof: Some(o.unblind_proof),
            key_proof: o.key_proof,
            ciphertext: o.ciphertext.clone(),
        },
    )
}

fn accusation_message(round: u64, r: &AccusationReveal) -> WireMessage {
    WireMessage::new(
        round,
        Body::BlameStep {
            position: r.position,
            entry: r.in_index as u32,
            key: r.key,
            decrypt_key: r.decrypt_key,
            unblind_proof: None,
            key_proof: r.key_proof,
            ciphertext: r.ciphertext.clone(),
        },
    )
}
