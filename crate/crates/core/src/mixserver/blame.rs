//! Attribution of a misauthenticated ciphertext.
//!
//! Starting from the accusing server `h`, each upstream server `i = h-1..1`
//! reveals the input entry matching the accused output, proves the unblinding
//! `log_{X_i} X_{i+1} = log_{bpk_{i-1}} bpk_i` and the decryption key
//! `log_{X_i} K_i = log_{bpk_{i-1}} mpk_i`, and everyone re-runs its
//! decryption. The walk must end at a submitted ciphertext. Finally the accuser
//! reveals its own key, and everyone checks that decryption really fails.

use std::collections::BTreeSet;

use super::{MixBatch, ServerPublicKeys, SenderId, Submission};
use crate::client::layer_key;
use crate::crypto::{adec, tags, verify_dleq, DleqProof, GroupElement};

/// Raised by a server whose decryption of some entries failed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlameTrigger {
    pub hop: u32,
    /// Indices into that server's input batch.
    pub entries: Vec<usize>,
}

/// One upstream server's answer during the walk back.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlameOpening {
    pub position: u32,
    pub in_index: usize,
    /// `X_i`.
    pub key: GroupElement,
    /// `X_i^{msk_i}`.
    pub decrypt_key: GroupElement,
    pub ciphertext: Vec<u8>,
    pub unblind_proof: DleqProof,
    pub key_proof: DleqProof,
}

/// The accuser's own key reveal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccusationReveal {
    pub position: u32,
    pub in_index: usize,
    pub key: GroupElement,
    pub decrypt_key: GroupElement,
    pub ciphertext: Vec<u8>,
    pub key_proof: DleqProof,
}

/// Public material every chain member holds when blame starts.
pub struct BlameContext<'a> {
    pub round: u64,
    /// Indexed by position − 1.
    pub publics: &'a [ServerPublicKeys],
    /// `hop_inputs[i-1]` is what server `i` received, for `i ≤ h`. Hop messages
    /// are attributable to their sender, so these serve as evidence.
    pub hop_inputs: &'a [MixBatch],
    /// Aligned with `hop_inputs[0]`.
    pub submissions: &'a [Submission],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlameEvidence {
    pub accused_index: usize,
    pub steps: Vec<BlameOpening>,
    pub accusation: Option<AccusationReveal>,
    /// Index into the submissions, when the walk reached one.
    pub submission_index: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Verdict {
    pub malicious_users: BTreeSet<SenderId>,
    /// Position of a server that failed to prove its behaviour.
    pub failed_prover: Option<u32>,
    /// Accuser input indices attributed to malicious users.
    pub removed: BTreeSet<usize>,
    pub evidence: Vec<BlameEvidence>,
}

impl Verdict {
    pub fn is_clean(&self) -> bool {
        self.failed_prover.is_none()
    }
}

/// Runs one blame session for every entry in `trigger`.
///
/// `open(position, out_index)` asks upstream server `position` to open the entry
/// at that index of its output; `accuse(in_index)` asks the accuser for its key.
pub fn run_blame<O, A>(
    ctx: &BlameContext<'_>,
    trigger: &BlameTrigger,
    mut open: O,
    mut accuse: A,
) -> Verdict
where
    O: FnMut(u32, usize) -> Option<BlameOpening>,
    A: FnMut(usize) -> Option<AccusationReveal>,
{
    let h = trigger.hop;
    let mut verdict = Verdict::default();
    let fail = |v: &mut Verdict, who: u32| {
        v.failed_prover.get_or_insert(who);
    };
    if h == 0
        || h as usize > ctx.hop_inputs.len()
        || h as usize > ctx.publics.len()
        || trigger.entries.is_empty()
    {
        fail(&mut verdict, h);
        return verdict;
    }
    let accused_batch = &ctx.hop_inputs[h as usize - 1];
    for &accused in &trigger.entries {
        if accused >= accused_batch.len() {
            fail(&mut verdict, h);
            return verdict;
        }
        let mut evidence = BlameEvidence {
            accused_index: accused,
            steps: Vec::new(),
            accusation: None,
            submission_index: None,
        };
        let mut cur = accused;
        for i in (1..h).rev() {
            let ok = open(i, cur).and_then(|o| {
                let checked = check_opening(ctx, i, cur, &o);
                let next = o.in_index;
                evidence.steps.push(o);
                checked.then_some(next)
            });
            match ok {
                Some(next) => cur = next,
                None => {
                    fail(&mut verdict, i);
                    verdict.evidence.push(evidence);
                    return verdict;
                }
            }
        }
        let first = &ctx.hop_inputs[0].entries[cur];
        let submitted = ctx.submissions.get(cur).filter(|s| {
            s.ciphertext.eph_pub == first.key && s.ciphertext.onion.as_bytes() == first.ciphertext
        });
        let Some(submission) = submitted else {
            fail(&mut verdict, 1);
            verdict.evidence.push(evidence);
            return verdict;
        };
        evidence.submission_index = Some(cur);

        let reveal = accuse(accused);
        let accuser_ok = reveal.as_ref().is_some_and(|r| check_accusation(ctx, h, accused, r));
        evidence.accusation = reveal;
        verdict.evidence.push(evidence);
        if !accuser_ok {
            fail(&mut verdict, h);
            return verdict;
        }
        verdict.malicious_users.insert(submission.sender);
        verdict.removed.insert(accused);
    }
    verdict
}

fn check_opening(ctx: &BlameContext<'_>, i: u32, out_index: usize, o: &BlameOpening) -> bool {
    let pubs = &ctx.publics[i as usize - 1];
    let input = &ctx.hop_inputs[i as usize - 1];
    let output = &ctx.hop_inputs[i as usize];
    let (Some(inp), Some(out)) = (input.entries.get(o.in_index), output.entries.get(out_index))
    else {
        return false;
    };
    o.position == i
        && inp.key == o.key
        && inp.ciphertext == o.ciphertext
        && verify_dleq(&o.key, &out.key, &pubs.bpk_prev, &pubs.bpk, &o.unblind_proof, tags::BLAME_KEY)
        && verify_dleq(
            &o.key,
            &o.decrypt_key,
            &pubs.bpk_prev,
            &pubs.mpk,
            &o.key_proof,
            tags::BLAME_DECRYPT,
        )
        && adec(&layer_key(&o.decrypt_key), ctx.round, &o.ciphertext).as_deref()
            == Some(out.ciphertext.as_slice())
}

fn check_accusation(ctx: &BlameContext<'_>, h: u32, accused: usize, r: &AccusationReveal) -> bool {
    let pubs = &ctx.publics[h as usize - 1];
    let entry = &ctx.hop_inputs[h as usize - 1].entries[accused];
    r.position == h
        && r.in_index == accused
        && r.key == entry.key
        && r.ciphertext == entry.ciphertext
        && verify_dleq(
            &r.key,
            &r.decrypt_key,
            &pubs.bpk_prev,
            &pubs.mpk,
            &r.key_proof,
            tags::BLAME_DECRYPT,
        )
        && adec(&layer_key(&r.decrypt_key), ctx.round, &r.ciphertext).is_none()
}
