use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::wire::{Delivery, Endpoint, Transport, WireMessage};
use crate::Result;

/// Size and routing of one message, without its contents.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrafficRecord {
    pub from: Endpoint,
    pub to: Endpoint,
    pub tag: u8,
    pub len: usize,
}

/// In-memory transport with per-message latency drawn from a seeded RNG.
///
/// Messages are delivered in `(arrival time, sender, send order)` order, so the
/// result depends only on the seed and on the sequence of sends.
pub struct SimTransport {
    rng: ChaCha20Rng,
    latency_us: (u64, u64),
    now: u64,
    seq: u64,
    queue: BinaryHeap<Reverse<(u64, Endpoint, u64)>>,
    pending: Vec<Option<(Endpoint, Vec<u8>)>>,
    bytes: u64,
    log: Vec<TrafficRecord>,
}

impl SimTransport {
    pub fn new(seed: [u8; 32], latency_us: (u64, u64)) -> Self {
        let (lo, hi) = latency_us;
        SimTransport {
            rng: ChaCha20Rng::from_seed(seed),
            latency_us: (lo.min(hi), lo.max(hi)),
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            pending: Vec::new(),
            bytes: 0,
            log: Vec::new(),
        }
    }

    /// Zero-latency transport for tests and benchmarks.
    pub fn instant() -> Self {
        Self::new([0; 32], (0, 0))
    }

    pub fn log(&self) -> &[TrafficRecord] {
        &self.log
    }

    pub fn into_log(self) -> Vec<TrafficRecord> {
        self.log
    }
}

impl Transport for SimTransport {
    fn send(&mut self, from: Endpoint, to: Endpoint, message: &WireMessage) -> Result<()> {
        let bytes = message.encode()?;
        let (lo, hi) = self.latency_us;
        let delay = if hi > lo { self.rng.gen_range(lo..=hi) } else { lo };
        self.bytes += bytes.len() as u64;
        self.log.push(TrafficRecord { from, to, tag: bytes[0], len: bytes.len() });
        self.queue.push(Reverse((self.now + delay, from, self.seq)));
        self.pending.push(Some((to, bytes)));
        self.seq += 1;
        Ok(())
    }

    fn flush(&mut self) -> Result<Vec<Delivery>> {
        let mut out = Vec::with_capacity(self.queue.len());
        while let Some(Reverse((at, from, seq))) = self.queue.pop() {
            let (to, bytes) = self.pending[seq as usize].take().expect("delivered once");
            self.now = self.now.max(at);
            out.push(Delivery { from, to, at_us: at, message: WireMessage::decode(&bytes)? });
        }
        self.pending.clear();
        self.seq = 0;
        Ok(out)
    }

    fn now_us(&self) -> u64 {
        self.now
    }

    fn bytes_sent(&self) -> u64 {
        self.bytes
    }
}
