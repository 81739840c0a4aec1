use std::io::Write;

use serde::Serialize;

use super::transport::TrafficRecord;
use crate::topology::{ChainId, ServerId};
use crate::Result;

/// One inter-server message as `(from, to, type, length)`.
pub type TrafficShape = (u32, u32, u8, usize);

/// What a network observer sees in one round: sizes and counts, never contents.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TrafficTranscript {
    /// `(user, chain, ciphertext length)` in submission order.
    pub submissions: Vec<(u32, ChainId, usize)>,
    /// Inter-server messages per chain.
    pub chain_traffic: Vec<(ChainId, Vec<TrafficShape>)>,
    /// Indexed by user.
    pub mailbox_counts: Vec<usize>,
}

impl TrafficTranscript {
    pub(crate) fn chain(chain: ChainId, log: &[TrafficRecord]) -> (ChainId, Vec<TrafficShape>) {
        (chain, log.iter().map(|r| (r.from, r.to, r.tag, r.len)).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ChainOutcome {
    pub chain_id: ChainId,
    pub status: String,
    pub accepted: usize,
    pub payloads: usize,
    pub dropped_payloads: usize,
    pub removed_users: Vec<u32>,
    pub inner_keys_revealed: bool,
    pub bytes: u64,
}

impl ChainOutcome {
    pub fn delivered(&self) -> bool {
        self.status == "delivered"
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DetectionRecord {
    pub round: u64,
    pub chain_id: ChainId,
    pub hop: u32,
    pub kind: String,
    pub malicious_users: Vec<u32>,
    pub failed_prover: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct UserRecord {
    pub user: u32,
    pub online: bool,
    /// Sent a data message to a partner this round.
    pub conversing: bool,
    /// Submitted pre-built cover messages instead of fresh ones.
    pub used_covers: bool,
    pub messages_sent: usize,
    pub loopbacks_sent: usize,
    pub loopbacks_returned: usize,
    pub received_data: bool,
    pub received_offline_notice: bool,
    pub mailbox_count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RoundReport {
    pub round: u64,
    /// Directed conversation messages whose sender and recipient were both online.
    pub active_conversations: usize,
    pub delivered_conversations: usize,
    pub failed_conversations: usize,
    pub loopbacks_sent: usize,
    pub loopbacks_returned: usize,
    pub offline_notices: usize,
    pub online_users: usize,
    pub failed_servers: Vec<ServerId>,
    pub chains: Vec<ChainOutcome>,
    pub detections: Vec<DetectionRecord>,
    /// Users scripted to misbehave this round.
    pub scripted_users: Vec<u32>,
    pub users: Vec<UserRecord>,
    /// Simulated time per phase in microseconds; chains run in parallel, so
    /// each phase counts its slowest chain.
    pub sim_phase_us: Vec<(String, u64)>,
    pub submission_bytes: u64,
    pub server_bytes: u64,
    pub transcript: TrafficTranscript,
}

impl RoundReport {
    pub fn aborted_chains(&self) -> usize {
        self.chains.iter().filter(|c| !c.delivered()).count()
    }

    pub fn loopbacks_failed(&self) -> usize {
        self.loopbacks_sent - self.loopbacks_returned
    }

    pub fn summary(&self) -> String {
        format!(
            "round {}: {}/{} conversations delivered, {}/{} loopbacks returned, {} detections, {} of {} chains aborted",
            self.round,
            self.delivered_conversations,
            self.active_conversations,
            self.loopbacks_returned,
            self.loopbacks_sent,
            self.detections.len(),
            self.aborted_chains(),
            self.chains.len()
        )
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serialises")
    }
}

/// One summary row per round.
pub fn write_report_csv<W: Write>(reports: &[RoundReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "round",
        "active_conversations",
        "delivered_conversations",
        "failed_conversations",
        "loopbacks_sent",
        "loopbacks_returned",
        "offline_notices",
        "online_users",
        "failed_servers",
        "aborted_chains",
        "detections",
        "sim_total_us",
        "submission_bytes",
        "server_bytes",
    ])?;
    for r in reports {
        let sim_total: u64 = r.sim_phase_us.iter().map(|(_, t)| t).sum();
        w.write_record([
            r.round.to_string(),
            r.active_conversations.to_string(),
            r.delivered_conversations.to_string(),
            r.failed_conversations.to_string(),
            r.loopbacks_sent.to_string(),
            r.loopbacks_returned.to_string(),
            r.offline_notices.to_string(),
            r.online_users.to_string(),
            r.failed_servers.len().to_string(),
            r.aborted_chains().to_string(),
            r.detections.len().to_string(),
            sim_total.to_string(),
            r.submission_bytes.to_string(),
            r.server_bytes.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_detections_csv<W: Write>(reports: &[RoundReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["round", "chain_id", "hop", "kind", "malicious_users", "failed_prover"])?;
    for d in reports.iter().flat_map(|r| &r.detections) {
        let users: Vec<String> = d.malicious_users.iter().map(u32::to_string).collect();
        w.write_record([
            d.round.to_string(),
            d.chain_id.to_string(),
            d.hop.to_string(),
            d.kind.clone(),
            users.join(" "),
            d.failed_prover.map(|p| p.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
