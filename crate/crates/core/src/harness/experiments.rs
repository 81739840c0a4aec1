use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::adversary::AdversaryMode;
use super::transport::SimTransport;
use super::{World, WorldConfig};
use crate::client::{encrypt_inner, encrypt_outer, MessageFormat, Payload};
use crate::crypto::{aenc, hash_parts, GroupElement, SymmetricKey};
use crate::mixserver::{
    key_ceremony, run_chain_round, ChainMember, ChainRoundInput, HonestMember, InnerKeys, Phase,
    Submission,
};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AvailabilityResult {
    pub servers: u32,
    pub k: u32,
    pub q: f64,
    pub trials: u64,
    pub failure_fraction: f64,
    /// `1 − (1 − q)^k`.
    pub closed_form: f64,
    pub std_error: f64,
}

/// Monte-Carlo estimate of the fraction of conversations whose chain contains a
/// failed server: each trial draws `k` servers uniformly from `servers`, and each
/// distinct server fails independently with probability `q`.
pub fn availability_sim(servers: u32, k: u32, q: f64, trials: u64, seed: u64) -> Result<AvailabilityResult> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidParameter(format!("q={q} outside [0, 1]")));
    }
    if servers == 0 || k == 0 || trials == 0 {
        return Err(Error::InvalidParameter("servers, k and trials must be positive".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut chain = Vec::with_capacity(k as usize);
    let mut failures = 0u64;
    for _ in 0..trials {
        chain.clear();
        chain.extend((0..k).map(|_| rng.gen_range(0..servers)));
        chain.sort_unstable();
        chain.dedup();
        if chain.iter().any(|_| rng.gen_bool(q)) {
            failures += 1;
        }
    }
    let p = failures as f64 / trials as f64;
    Ok(AvailabilityResult {
        servers,
        k,
        q,
        trials,
        failure_fraction: p,
        closed_form: 1.0 - (1.0 - q).powi(k as i32),
        std_error: (p * (1.0 - p) / trials as f64).sqrt(),
    })
}

/// Outcome of one adversarial trial on its target chain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AttackTrial {
    pub mode: AdversaryMode,
    pub seed: u64,
    pub target_chain: u32,
    pub target_hop: u32,
    pub detected: bool,
    pub inner_keys_revealed: bool,
    /// Inner ciphertexts opened on the target chain.
    pub payloads_opened: usize,
    /// Blame named exactly the scripted users, or the scripted server.
    pub verdict_exact: bool,
    pub honest_users_accused: usize,
    pub scripted_users: Vec<u32>,
    pub accused_users: Vec<u32>,
    pub failed_prover: Option<u32>,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackRow {
    pub mode: AdversaryMode,
    pub trials: usize,
    pub detected: usize,
    pub detection_rate: f64,
    /// No detected run revealed inner keys on the target chain.
    pub privacy_preserved: bool,
    pub verdicts_exact: usize,
    pub honest_users_accused: usize,
}

/// Runs `trials` seeded single-round worlds per mode, varying the target chain,
/// hop and count with the trial index.
pub fn attack_suite(
    template: &WorldConfig,
    modes: &[AdversaryMode],
    trials: usize,
) -> Result<(Vec<AttackRow>, Vec<AttackTrial>)> {
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for &mode in modes {
        let results: Vec<AttackTrial> = (0..trials)
            .into_par_iter()
            .map(|t| attack_trial(template, mode, t))
            .collect::<Result<_>>()?;
        let detected = results.iter().filter(|r| r.detected).count();
        rows.push(AttackRow {
            mode,
            trials,
            detected,
            detection_rate: if trials == 0 { 0.0 } else { detected as f64 / trials as f64 },
            privacy_preserved: results.iter().filter(|r| r.detected).all(|r| match mode {
                AdversaryMode::MaliciousClientBadInner => r.failed_prover.is_none(),
                _ => !r.inner_keys_revealed,
            }),
            verdicts_exact: results.iter().filter(|r| r.verdict_exact).count(),
            honest_users_accused: results.iter().map(|r| r.honest_users_accused).sum(),
        });
        all.extend(results);
    }
    Ok((rows, all))
}

/// The configuration trial `t` of `mode` runs.
pub fn attack_config(template: &WorldConfig, mode: AdversaryMode, t: usize) -> Result<WorldConfig> {
    let params = template.system_params()?;
    let (n, k) = (params.n as usize, params.k as usize);
    let mut cfg = template.clone();
    cfg.rng_seed = template.rng_seed.wrapping_add(t as u64);
    cfg.adversary.mode = mode;
    cfg.adversary.target_chain = 1 + (t % n) as u32;
    let (hop, count) = match mode {
        m if m.is_tamper() => {
            if k < 2 {
                return Err(Error::Config("tampering needs k ≥ 2".into()));
            }
            (1 + t % (k - 1), 1)
        }
        AdversaryMode::MaliciousClientBadInner => (1 + t % k, 1 + t % 5),
        AdversaryMode::FalseAccuse => (1 + t % k, 1 + t % 3),
        _ => (1, 1),
    };
    cfg.adversary.target_hop = hop as u32;
    cfg.adversary.count = count as u32;
    cfg.validate()?;
    Ok(cfg)
}

fn attack_trial(template: &WorldConfig, mode: AdversaryMode, t: usize) -> Result<AttackTrial> {
    let cfg = attack_config(template, mode, t)?;
    let adv = cfg.adversary.clone();
    let mut world = World::new(cfg.clone())?;
    let report = world.run_round()?;
    let chain = report
        .chains
        .iter()
        .find(|c| c.chain_id == adv.target_chain)
        .ok_or_else(|| Error::Internal("target chain missing from report".into()))?;
    let dets: Vec<_> = report.detections.iter().filter(|d| d.chain_id == adv.target_chain).collect();
    let accused: BTreeSet<u32> = dets.iter().flat_map(|d| d.malicious_users.iter().copied()).collect();
    let failed_prover = dets.iter().find_map(|d| d.failed_prover);
    let scripted: BTreeSet<u32> = report.scripted_users.iter().copied().collect();
    let rejected_at = dets.iter().find(|d| d.kind == "proof_rejected").map(|d| d.hop);
    let (detected, verdict_exact) = match mode {
        AdversaryMode::None => (!dets.is_empty(), dets.is_empty()),
        m if m.is_tamper() => {
            let detected = !chain.delivered() && !dets.is_empty();
            let blamed = failed_prover.or(rejected_at);
            (detected, detected && blamed == Some(adv.target_hop))
        }
        AdversaryMode::MaliciousClientBadInner => {
            (!dets.is_empty(), failed_prover.is_none() && accused == scripted)
        }
        AdversaryMode::FalseAccuse => {
            let detected = failed_prover == Some(adv.target_hop);
            (detected, detected && accused.is_empty())
        }
        _ => unreachable!("all modes covered"),
    };
    Ok(AttackTrial {
        mode,
        seed: cfg.rng_seed,
        target_chain: adv.target_chain,
        target_hop: adv.target_hop,
        detected,
        inner_keys_revealed: chain.inner_keys_revealed,
        payloads_opened: chain.payloads + chain.dropped_payloads,
        verdict_exact,
        honest_users_accused: accused.difference(&scripted).count(),
        scripted_users: scripted.into_iter().collect(),
        accused_users: accused.into_iter().collect(),
        failed_prover,
        status: chain.status.clone(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub messages: usize,
    pub chains: usize,
    pub k: u32,
    pub message_size: usize,
    pub all_verified: bool,
    pub delivered_payloads: usize,
    pub client_encrypt: Duration,
    pub phases: Vec<(Phase, Duration)>,
    pub total: Duration,
}

impl BenchReport {
    pub fn lines(&self) -> Vec<String> {
        let mut out = vec![format!(
            "bench: {} messages over {} chain(s), k={}, {}-byte messages; all proofs verified: {}; {} payloads delivered",
            self.messages, self.chains, self.k, self.message_size, self.all_verified, self.delivered_payloads
        )];
        out.push(format!("  client_encrypt  {:>10.3} ms", ms(self.client_encrypt)));
        for (p, d) in &self.phases {
            out.push(format!("  {:<15} {:>10.3} ms", p.name(), ms(*d)));
        }
        out.push(format!("  total           {:>10.3} ms", ms(self.total)));
        out
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Wall-clock timing of `messages` submissions spread round-robin over `chains`
/// honest chains of length `k`.
pub fn bench(messages: usize, chains: usize, k: u32, seed: u64) -> Result<BenchReport> {
    if chains == 0 || k == 0 || messages < 2 * chains {
        return Err(Error::InvalidParameter("need k ≥ 1, chains ≥ 1 and two messages per chain".into()));
    }
    let start = Instant::now();
    let format = MessageFormat::default();
    let round = 1;
    let derive = |purpose: &[u8], ids: &[u64]| {
        let ids: Vec<[u8; 8]> = std::iter::once(seed).chain(ids.iter().copied()).map(u64::to_le_bytes).collect();
        let parts: Vec<&[u8]> = ids.iter().map(|b| b.as_slice()).collect();
        hash_parts(purpose, &parts)
    };
    let mut setups = Vec::with_capacity(chains);
    for c in 0..chains {
        let mut rng = ChaCha20Rng::from_seed(derive(b"bench/ceremony", &[c as u64]));
        let keys = key_ceremony(&mut rng, k)?;
        let inner: Vec<InnerKeys> = (1..=k).map(|p| InnerKeys::generate(&mut rng, p, round)).collect();
        setups.push((keys, inner));
    }

    let t = Instant::now();
    let subs: Vec<(usize, Submission)> = (0..messages)
        .into_par_iter()
        .map(|m| {
            let c = m % chains;
            let (keys, inner) = &setups[c];
            let mut rng = ChaCha20Rng::from_seed(derive(b"bench/message", &[m as u64]));
            let dest = GroupElement::random(&mut rng);
            let key = SymmetricKey::derive(b"bench", &[&(m as u64).to_le_bytes()]);
            let payload = Payload { dest_pk: dest, body: aenc(&key, round, &vec![0u8; format.body_len() - 16]) };
            let ipks: Vec<_> = inner.iter().map(|i| i.ipk).collect();
            let mpks: Vec<_> = keys.iter().map(|s| s.public.mpk).collect();
            let inner_ct = encrypt_inner(&mut rng, &payload, round, &ipks)?;
            let outer = encrypt_outer(&mut rng, &inner_ct.to_bytes(), round, &mpks)?;
            Ok((c, Submission { sender: m as u32, ciphertext: outer }))
        })
        .collect::<Result<_>>()?;
    let client_encrypt = t.elapsed();

    let mut per_chain: Vec<Vec<Submission>> = vec![Vec::new(); chains];
    for (c, s) in subs {
        per_chain[c].push(s);
    }
    let mut phases: Vec<(Phase, Duration)> = Vec::new();
    let mut all_verified = true;
    let mut delivered = 0;
    for (c, submissions) in per_chain.into_iter().enumerate() {
        let (keys, inner) = &setups[c];
        let publics: Vec<_> = keys.iter().map(|s| s.public.clone()).collect();
        let inner_publics: Vec<_> = inner.iter().map(|i| (i.ipk, i.proof)).collect();
        let members: Vec<Box<dyn ChainMember>> = keys
            .iter()
            .zip(inner)
            .map(|(s, i)| {
                let seed = derive(b"bench/member", &[c as u64, s.position as u64]);
                Box::new(HonestMember::new(s.clone(), i.clone(), seed)) as Box<dyn ChainMember>
            })
            .collect();
        let input = ChainRoundInput {
            chain_id: c as u32 + 1,
            round,
            publics: &publics,
            inner_publics: &inner_publics,
            members,
            submissions,
            onion_len: format.onion_len(k as usize),
        };
        let result = run_chain_round(input, &mut SimTransport::instant())?;
        all_verified &= result.is_delivered() && result.detections.is_empty() && result.dropped_payloads == 0;
        delivered += result.payloads.len();
        for (p, d) in result.wall {
            match phases.iter_mut().find(|(q, _)| *q == p) {
                Some((_, acc)) => *acc += d,
                None => phases.push((p, d)),
            }
        }
    }
    Ok(BenchReport {
        messages,
        chains,
        k,
        message_size: format.message_size,
        all_verified,
        delivered_payloads: delivered,
        client_encrypt,
        phases,
        total: start.elapsed(),
    })
}
