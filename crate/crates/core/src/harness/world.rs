use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use super::adversary::{corrupt_onion, AdversaryMode, FalseAccuser, TamperingMember};
use super::report::{ChainOutcome, DetectionRecord, RoundReport, TrafficTranscript, UserRecord};
use super::transport::SimTransport;
use super::WorldConfig;
use crate::client::{
    build_cover_messages, build_inner, build_round_messages, fetch_and_decrypt, BuiltMessage,
    ChainKeys, Content, Conversation, MessageFormat, MessageKind, Source, UserIdentity, UserPublic,
};
use crate::crypto::hash_parts;
use crate::mailbox::MailboxStore;
use crate::mixserver::{
    key_ceremony, run_chain_round, ChainMember, ChainRoundInput, ChainRoundResult, ChainStatus,
    HonestMember, InnerKeys, Phase, ServerKeys, ServerPublicKeys, Submission,
};
use crate::topology::{form_chains, ChainConfig, ChainId, GroupChainSets, ServerId, SystemParams};
use crate::Result;

struct UserState {
    identity: UserIdentity,
    partner: Option<usize>,
    /// Set once the partner's offline notice arrives.
    partner_offline: bool,
    offline: bool,
    /// Messages prepared for the given round in case this user disappears.
    covers: Option<(u64, Vec<BuiltMessage>)>,
}

/// A full deployment: servers, chains, users and mailboxes, driven round by round.
pub struct World {
    config: WorldConfig,
    params: SystemParams,
    format: MessageFormat,
    sets: GroupChainSets,
    chains: Vec<ChainConfig>,
    keys: Vec<Vec<ServerKeys>>,
    publics: Vec<Vec<ServerPublicKeys>>,
    users: Vec<UserState>,
    user_publics: Vec<UserPublic>,
    scripted_clients: BTreeSet<usize>,
    mailboxes: MailboxStore,
    round: u64,
}

impl World {
    pub fn new(config: WorldConfig) -> Result<Self> {
        config.validate()?;
        let params = config.system_params()?;
        let format = config.format()?;
        let sets = GroupChainSets::build(params.ell, params.n)?;
        let server_ids: Vec<ServerId> = (0..params.servers).collect();
        let chains = form_chains(&params.seed, &server_ids, &params)?;
        let mut world = World {
            config,
            params,
            format,
            sets,
            chains,
            keys: Vec::new(),
            publics: Vec::new(),
            users: Vec::new(),
            user_publics: Vec::new(),
            scripted_clients: BTreeSet::new(),
            mailboxes: MailboxStore::new(),
            round: 1,
        };
        for c in &world.chains {
            let mut rng = world.rng("ceremony", &[c.chain_id as u64]);
            let keys = key_ceremony(&mut rng, world.params.k)?;
            world.publics.push(keys.iter().map(|k| k.public.clone()).collect());
            world.keys.push(keys);
        }
        for i in 0..world.config.user_count {
            let identity = UserIdentity::generate(&mut world.rng("user", &[i as u64]), &world.sets)?;
            world.user_publics.push(identity.public());
            world.users.push(UserState {
                identity,
                partner: None,
                partner_offline: false,
                offline: false,
                covers: None,
            });
        }
        for (a, b) in world.pairing() {
            world.users[a].partner = Some(b);
            world.users[b].partner = Some(a);
        }
        let adv = &world.config.adversary;
        if adv.mode == AdversaryMode::MaliciousClientBadInner {
            let mut eligible: Vec<usize> = (0..world.users.len())
                .filter(|&u| world.users[u].identity.chains.contains(&adv.target_chain))
                .collect();
            eligible.shuffle(&mut world.rng("adversary-clients", &[]));
            world.scripted_clients = eligible.into_iter().take(adv.count as usize).collect();
        }
        Ok(world)
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn chains(&self) -> &[ChainConfig] {
        &self.chains
    }

    pub fn sets(&self) -> &GroupChainSets {
        &self.sets
    }

    pub fn format(&self) -> &MessageFormat {
        &self.format
    }

    /// The round `run_round` will execute next.
    pub fn next_round(&self) -> u64 {
        self.round
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn user(&self, u: usize) -> &UserIdentity {
        &self.users[u].identity
    }

    pub fn partner(&self, u: usize) -> Option<usize> {
        self.users[u].partner
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        (0..self.users.len())
            .filter_map(|a| self.users[a].partner.filter(|&b| a < b).map(|b| (a, b)))
            .collect()
    }

    pub fn scripted_clients(&self) -> &BTreeSet<usize> {
        &self.scripted_clients
    }

    pub fn is_offline(&self, u: usize) -> bool {
        self.users[u].offline
    }

    /// Per-round inner keys of one chain position.
    pub fn inner_keys(&self, chain: ChainId, position: u32, round: u64) -> InnerKeys {
        let mut rng = self.rng("inner", &[chain as u64, position as u64, round]);
        InnerKeys::generate(&mut rng, position, round)
    }

    fn chain_keys(&self, round: u64) -> BTreeMap<ChainId, ChainKeys> {
        self.chains
            .iter()
            .zip(&self.publics)
            .map(|(c, pubs)| {
                let inner = (1..=self.params.k).map(|p| self.inner_keys(c.chain_id, p, round).ipk).collect();
                (c.chain_id, ChainKeys { mixing: pubs.iter().map(|p| p.mpk).collect(), inner })
            })
            .collect()
    }

    fn seed(&self, purpose: &str, ids: &[u64]) -> [u8; 32] {
        let seed = self.config.rng_seed.to_le_bytes();
        let ids: Vec<[u8; 8]> = ids.iter().map(|i| i.to_le_bytes()).collect();
        let mut parts: Vec<&[u8]> = vec![&seed, purpose.as_bytes()];
        parts.extend(ids.iter().map(|i| i.as_slice()));
        hash_parts(b"xrd/harness", &parts)
    }

    fn rng(&self, purpose: &str, ids: &[u64]) -> ChaCha20Rng {
        ChaCha20Rng::from_seed(self.seed(purpose, ids))
    }

    fn pairing(&self) -> Vec<(usize, usize)> {
        if let Some(pairs) = &self.config.pairs {
            return pairs.iter().map(|[a, b]| (*a as usize, *b as usize)).collect();
        }
        let n = self.users.len();
        let conversing = ((n as f64 * self.config.conversation_fraction).floor() as usize) & !1;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng("pairing", &[]));
        order[..conversing].chunks(2).map(|p| (p[0], p[1])).collect()
    }

    fn latency_us(&self) -> (u64, u64) {
        let [lo, hi] = self.config.latency_ms;
        ((lo * 1000.0).round() as u64, (hi * 1000.0).round() as u64)
    }

    fn apply_churn(&mut self, round: u64) -> BTreeSet<ServerId> {
        let churn = self.config.churn.clone();
        let mut srng = self.rng("server-churn", &[round]);
        let failed = (0..self.params.servers)
            .filter(|_| srng.gen_bool(churn.server_fail_prob))
            .collect();
        let mut urng = self.rng("user-churn", &[round]);
        for (u, state) in self.users.iter_mut().enumerate() {
            let drop = urng.gen_bool(churn.user_offline_prob);
            let scheduled = churn.offline.iter().any(|e| e.user as usize == u && e.round == round);
            if drop || scheduled {
                state.offline = true;
            }
        }
        failed
    }

    /// Runs one round end to end and advances the round counter.
    pub fn run_round(&mut self) -> Result<RoundReport> {
        let round = self.round;
        let failed_servers = self.apply_churn(round);
        let keys_now = self.chain_keys(round);
        let keys_next = self.chain_keys(round + 1);

        // Clients build this round's messages and next round's covers.
        struct Built {
            messages: Vec<BuiltMessage>,
            covers: Option<Vec<BuiltMessage>>,
            conversing: bool,
            used_covers: bool,
        }
        let built: Vec<Built> = (0..self.users.len())
            .into_par_iter()
            .map(|u| self.build_for_user(u, round, &keys_now, &keys_next))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .map(|(messages, covers, conversing, used_covers)| Built { messages, covers, conversing, used_covers })
            .collect();

        let mut per_chain: BTreeMap<ChainId, Vec<Submission>> =
            self.chains.iter().map(|c| (c.chain_id, Vec::new())).collect();
        let mut transcript = TrafficTranscript::default();
        let mut submission_bytes = 0u64;
        let mut records = Vec::with_capacity(self.users.len());
        let mut scripted_users = Vec::new();
        for (u, b) in built.iter().enumerate() {
            for m in &b.messages {
                let len = m.ciphertext.wire_len();
                transcript.submissions.push((u as u32, m.chain, len));
                submission_bytes += len as u64;
                per_chain
                    .get_mut(&m.chain)
                    .expect("user chains exist")
                    .push(Submission { sender: u as u32, ciphertext: m.ciphertext.clone() });
            }
            if self.scripted_clients.contains(&u) && !self.users[u].offline {
                scripted_users.push(u as u32);
            }
            records.push(UserRecord {
                user: u as u32,
                online: !self.users[u].offline,
                conversing: b.conversing,
                used_covers: b.used_covers,
                messages_sent: b.messages.len(),
                loopbacks_sent: if self.users[u].offline {
                    0
                } else {
                    b.messages.iter().filter(|m| m.kind == MessageKind::Loopback).count()
                },
                loopbacks_returned: 0,
                received_data: false,
                received_offline_notice: false,
                mailbox_count: 0,
            });
        }
        for (u, b) in built.into_iter().enumerate() {
            if let Some(covers) = b.covers {
                self.users[u].covers = Some((round + 1, covers));
            } else if b.used_covers {
                self.users[u].covers = None;
            }
        }

        // Chains mix independently.
        let onion_len = self.format.onion_len(self.params.k as usize);
        let latency = self.latency_us();
        let adv = self.config.adversary.clone();
        let mut jobs = Vec::with_capacity(self.chains.len());
        for (ci, c) in self.chains.iter().enumerate() {
            let subs = per_chain.remove(&c.chain_id).unwrap_or_default();
            if c.servers.iter().any(|s| failed_servers.contains(s)) {
                jobs.push((ci, None, subs));
                continue;
            }
            let mut members: Vec<Box<dyn ChainMember>> = Vec::with_capacity(self.params.k as usize);
            let mut inner_publics = Vec::with_capacity(self.params.k as usize);
            for keys in &self.keys[ci] {
                let pos = keys.position;
                let inner = self.inner_keys(c.chain_id, pos, round);
                inner_publics.push((inner.ipk, inner.proof));
                let seed = self.seed("member", &[c.chain_id as u64, pos as u64, round]);
                let honest = HonestMember::new(keys.clone(), inner, seed);
                let targeted = adv.mode.is_server() && adv.target_chain == c.chain_id && adv.target_hop == pos;
                members.push(match adv.mode {
                    m if targeted && m.is_tamper() => Box::new(TamperingMember::new(honest, m, adv.count)),
                    AdversaryMode::FalseAccuse if targeted => Box::new(FalseAccuser::new(honest, adv.count)),
                    _ => Box::new(honest),
                });
            }
            let transport = SimTransport::new(self.seed("transport", &[c.chain_id as u64, round]), latency);
            jobs.push((ci, Some((members, inner_publics, transport)), subs));
        }
        let results: Vec<(ChainRoundResult, Vec<_>)> = jobs
            .into_par_iter()
            .map(|(ci, job, submissions)| {
                let chain_id = self.chains[ci].chain_id;
                let Some((members, inner_publics, mut transport)) = job else {
                    return Ok((
                        ChainRoundResult::aborted(chain_id, crate::mixserver::AbortReason::ServerFailure),
                        Vec::new(),
                    ));
                };
                let input = ChainRoundInput {
                    chain_id,
                    round,
                    publics: &self.publics[ci],
                    inner_publics: &inner_publics,
                    members,
                    submissions,
                    onion_len,
                };
                let result = run_chain_round(input, &mut transport)?;
                Ok((result, transport.into_log()))
            })
            .collect::<Result<Vec<_>>>()?;

        // Final hops deliver to mailboxes in chain order.
        self.mailboxes.open_round(round);
        let mut chains = Vec::with_capacity(results.len());
        let mut detections = Vec::new();
        let mut sim_phase: BTreeMap<Phase, u64> = BTreeMap::new();
        let mut server_bytes = 0;
        for (result, log) in &results {
            for p in &result.payloads {
                self.mailboxes.put(p.dest_pk, p.body.clone())?;
            }
            for (phase, t) in &result.sim_phase_us {
                let e = sim_phase.entry(*phase).or_default();
                *e = (*e).max(*t);
            }
            server_bytes += result.bytes;
            transcript.chain_traffic.push(TrafficTranscript::chain(result.chain_id, log));
            for d in &result.detections {
                detections.push(DetectionRecord {
                    round,
                    chain_id: result.chain_id,
                    hop: d.hop,
                    kind: d.kind.name().to_string(),
                    malicious_users: d
                        .verdict
                        .as_ref()
                        .map(|v| v.malicious_users.iter().copied().collect())
                        .unwrap_or_default(),
                    failed_prover: d.verdict.as_ref().and_then(|v| v.failed_prover),
                });
            }
            chains.push(ChainOutcome {
                chain_id: result.chain_id,
                status: match result.status {
                    ChainStatus::Delivered => "delivered".to_string(),
                    ChainStatus::Aborted(r) => r.name().to_string(),
                },
                accepted: result.accepted,
                payloads: result.payloads.len(),
                dropped_payloads: result.dropped_payloads,
                removed_users: result.removed_users.iter().copied().collect(),
                inner_keys_revealed: result.inner_keys_revealed,
                bytes: result.bytes,
            });
        }

        // Online users fetch and read their mailboxes.
        let mut active = 0;
        let mut delivered = 0;
        let mut notices = 0;
        for u in 0..self.users.len() {
            let state = &self.users[u];
            if let Some(p) = state.partner {
                if records[p].conversing && !state.offline {
                    active += 1;
                }
            }
            if state.offline {
                continue;
            }
            let partner_pub = state.partner.map(|p| &self.user_publics[p]);
            let inbox = self.mailboxes.get(&state.identity.pk);
            let fetched = fetch_and_decrypt(&state.identity, partner_pub, round, &inbox, &self.format);
            let rec = &mut records[u];
            for f in fetched {
                match (f.source, f.content) {
                    (Source::Loopback(_), Some(_)) => rec.loopbacks_returned += 1,
                    (Source::Partner, Some(Content::Data(_))) => rec.received_data = true,
                    (Source::Partner, Some(Content::OfflineNotice)) => rec.received_offline_notice = true,
                    _ => {}
                }
            }
            if rec.received_data {
                delivered += 1;
            }
            if rec.received_offline_notice {
                notices += 1;
                self.users[u].partner_offline = true;
            }
        }
        let stats = self.mailboxes.end_round();
        for (u, rec) in records.iter_mut().enumerate() {
            rec.mailbox_count = stats.counts.get(&self.users[u].identity.pk).copied().unwrap_or(0);
        }
        transcript.mailbox_counts = records.iter().map(|r| r.mailbox_count).collect();

        self.round += 1;
        let loopbacks_sent = records.iter().map(|r| r.loopbacks_sent).sum();
        let loopbacks_returned = records.iter().map(|r| r.loopbacks_returned).sum();
        Ok(RoundReport {
            round,
            active_conversations: active,
            delivered_conversations: delivered,
            failed_conversations: active - delivered,
            loopbacks_sent,
            loopbacks_returned,
            offline_notices: notices,
            online_users: records.iter().filter(|r| r.online).count(),
            failed_servers: failed_servers.into_iter().collect(),
            chains,
            detections,
            scripted_users,
            users: records,
            sim_phase_us: Phase::ALL
                .iter()
                .filter_map(|p| sim_phase.get(p).map(|t| (p.name().to_string(), *t)))
                .collect(),
            submission_bytes,
            server_bytes,
            transcript,
        })
    }

    /// `(messages, covers for next round, sent data, replayed covers)`.
    #[allow(clippy::type_complexity)]
    fn build_for_user(
        &self,
        u: usize,
        round: u64,
        keys_now: &BTreeMap<ChainId, ChainKeys>,
        keys_next: &BTreeMap<ChainId, ChainKeys>,
    ) -> Result<(Vec<BuiltMessage>, Option<Vec<BuiltMessage>>, bool, bool)> {
        let state = &self.users[u];
        if state.offline {
            return Ok(match &state.covers {
                Some((r, covers)) if *r == round => (covers.clone(), None, false, true),
                _ => (Vec::new(), None, false, false),
            });
        }
        let partner = state
            .partner
            .filter(|_| !state.partner_offline)
            .map(|p| &self.user_publics[p]);
        let conversation = partner.map(|p| Conversation {
            partner: p,
            content: Content::Data(format!("round {round} from user {u}").into_bytes()),
        });
        let me = &state.identity;
        let mut rng = self.rng("user-messages", &[u as u64, round]);
        let mut messages =
            build_round_messages(&mut rng, me, conversation.as_ref(), round, keys_now, &self.sets, &self.format)?;
        if self.scripted_clients.contains(&u) {
            let adv = &self.config.adversary;
            let mut arng = self.rng("adversary-client", &[u as u64, round]);
            let keys = &keys_now[&adv.target_chain];
            for m in messages.iter_mut().filter(|m| m.chain == adv.target_chain) {
                let conv = (m.kind == MessageKind::Conversation).then_some(()).and(conversation.as_ref());
                let inner = build_inner(&mut arng, me, conv, m.chain, round, keys, &self.format)?;
                m.ciphertext = corrupt_onion(&mut arng, &inner, round, &keys.mixing, adv.target_hop)?;
            }
        }
        let mut crng = self.rng("user-covers", &[u as u64, round]);
        let covers = build_cover_messages(&mut crng, me, partner, round + 1, keys_next, &self.sets, &self.format)?;
        Ok((messages, Some(covers), conversation.is_some(), false))
    }

    pub fn run_epoch(&mut self, rounds: u64) -> Result<Vec<RoundReport>> {
        (0..rounds).map(|_| self.run_round()).collect()
    }
}
