//! Per-round mailboxes keyed by recipient public key.
//!
//! Mailbox servers are trusted for availability only, so `get` is
//! unauthenticated here; a deployment would authenticate fetches.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use crate::crypto::{AuthCiphertext, GroupElement};
use crate::{Error, Result};

#[derive(Debug, Default)]
struct State {
    round: u64,
    open: bool,
    boxes: BTreeMap<GroupElement, Vec<AuthCiphertext>>,
}

/// Message bodies for the current round, grouped by recipient.
#[derive(Debug, Default)]
pub struct MailboxStore {
    state: Mutex<State>,
}

/// Per-mailbox message counts for a closed round.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RoundStats {
    pub round: u64,
    pub counts: BTreeMap<GroupElement, usize>,
}

impl RoundStats {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

impl MailboxStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open_round(&self, round: u64) {
        let mut s = self.lock();
        s.round = round;
        s.open = true;
        s.boxes.clear();
    }

    pub fn round(&self) -> Option<u64> {
        let s = self.lock();
        s.open.then_some(s.round)
    }

    /// Appends to `dest`'s mailbox, creating it on first use.
    pub fn put(&self, dest: GroupElement, body: AuthCiphertext) -> Result<()> {
        let mut s = self.lock();
        if !s.open {
            return Err(Error::RoundClosed);
        }
        s.boxes.entry(dest).or_default().push(body);
        Ok(())
    }

    pub fn get(&self, dest: &GroupElement) -> Vec<AuthCiphertext> {
        self.lock().boxes.get(dest).cloned().unwrap_or_default()
    }

    /// Closes the round, clears every mailbox and reports their sizes.
    pub fn end_round(&mut self) -> RoundStats {
        let s = self.state.get_mut().unwrap_or_else(|e| e.into_inner());
        s.open = false;
        let boxes = std::mem::take(&mut s.boxes);
        RoundStats { round: s.round, counts: boxes.into_iter().map(|(k, v)| (k, v.len())).collect() }
    }

    /// Writes the current round to `dir/round-<n>.mbox`.
    pub fn persist(&self, dir: &Path) -> Result<PathBuf> {
        let s = self.lock();
        let path = dir.join(format!("round-{}.mbox", s.round));
        let mut w = BufWriter::new(File::create(&path)?);
        for (dest, bodies) in &s.boxes {
            for b in bodies {
                w.write_all(dest.as_bytes())?;
                w.write_all(&(b.len() as u32).to_le_bytes())?;
                w.write_all(b.as_bytes())?;
            }
        }
        w.flush()?;
        Ok(path)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// Reads a persisted round file back as `(dest, body)` records in file order.
pub fn read_round_file(path: &Path) -> Result<Vec<(GroupElement, AuthCiphertext)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut out = Vec::new();
    let mut rest = bytes.as_slice();
    while !rest.is_empty() {
        if rest.len() < 36 {
            return Err(Error::Malformed("truncated mailbox record"));
        }
        let dest = GroupElement::from_slice(&rest[..32])?;
        let len = u32::from_le_bytes(rest[32..36].try_into().expect("4 bytes")) as usize;
        rest = &rest[36..];
        if rest.len() < len {
            return Err(Error::Malformed("truncated mailbox body"));
        }
        out.push((dest, AuthCiphertext::from_bytes(rest[..len].to_vec())));
        rest = &rest[len..];
    }
    Ok(out)
}

/// Mailboxes spread over several servers by a hash of the recipient key.
#[derive(Debug)]
pub struct ShardedMailboxes {
    shards: Vec<MailboxStore>,
}

impl ShardedMailboxes {
    pub fn new(count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidParameter("need at least one mailbox server".into()));
        }
        Ok(ShardedMailboxes { shards: (0..count).map(|_| MailboxStore::new()).collect() })
    }

    pub fn shard_of(&self, dest: &GroupElement) -> usize {
        let h = Sha256::digest(dest.as_bytes());
        (u64::from_le_bytes(h[..8].try_into().expect("8 bytes")) % self.shards.len() as u64) as usize
    }

    pub fn open_round(&self, round: u64) {
        self.shards.iter().for_each(|s| s.open_round(round));
    }

    pub fn put(&self, dest: GroupElement, body: AuthCiphertext) -> Result<()> {
        self.shards[self.shard_of(&dest)].put(dest, body)
    }

    pub fn get(&self, dest: &GroupElement) -> Vec<AuthCiphertext> {
        self.shards[self.shard_of(dest)].get(dest)
    }

    pub fn end_round(&mut self) -> RoundStats {
        let mut merged = RoundStats::default();
        for s in &mut self.shards {
            let st = s.end_round();
            merged.round = st.round;
            merged.counts.extend(st.counts);
        }
        merged
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn pk(seed: u64) -> GroupElement {
        GroupElement::random(&mut ChaCha20Rng::seed_from_u64(seed))
    }

    fn body(b: u8) -> AuthCiphertext {
        AuthCiphertext::from_bytes(vec![b; 20])
    }

    #[test]
    fn put_get_lifecycle() {
        let mut store = MailboxStore::new();
        let a = pk(1);
        assert!(store.put(a, body(0)).is_err());
        store.open_round(7);
        assert!(store.get(&a).is_empty());
        store.put(a, body(1)).unwrap();
        store.put(a, body(2)).unwrap();
        store.put(a, body(1)).unwrap();
        assert_eq!(store.get(&a), vec![body(1), body(2), body(1)]);
        let stats = store.end_round();
        assert_eq!(stats.round, 7);
        assert_eq!(stats.counts[&a], 3);
        assert!(matches!(store.put(a, body(3)), Err(Error::RoundClosed)));
        assert!(store.get(&a).is_empty());
    }

    #[test]
    fn concurrent_puts_keep_per_mailbox_order() {
        let store = MailboxStore::new();
        store.open_round(1);
        let dests: Vec<_> = (0..4).map(pk).collect();
        std::thread::scope(|s| {
            for d in &dests {
                let store = &store;
                s.spawn(move || {
                    for i in 0..50u8 {
                        store.put(*d, body(i)).unwrap();
                    }
                });
            }
        });
        for d in &dests {
            assert_eq!(store.get(d), (0..50).map(body).collect::<Vec<_>>());
        }
    }

    #[test]
    fn persistence_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let store = MailboxStore::new();
        store.open_round(3);
        let (a, b) = (pk(1), pk(2));
        store.put(a, body(1)).unwrap();
        store.put(b, AuthCiphertext::from_bytes(vec![])).unwrap();
        store.put(a, body(9)).unwrap();
        let path = store.persist(dir.path()).unwrap();
        let records = read_round_file(&path).unwrap();
        assert_eq!(records.len(), 3);
        for (dest, b) in &records {
            assert!(store.get(dest).contains(b));
        }
        let raw = std::fs::read(&path).unwrap();
        assert_eq!(raw.len(), 3 * 36 + 40);
    }

    proptest! {
        #[test]
        fn sharding_is_transparent(puts in proptest::collection::vec((0u64..6, any::<u8>()), 0..40), shards in 1usize..6) {
            let single = MailboxStore::new();
            let sharded = ShardedMailboxes::new(shards).unwrap();
            single.open_round(1);
            sharded.open_round(1);
            for (d, b) in &puts {
                single.put(pk(*d), body(*b)).unwrap();
                sharded.put(pk(*d), body(*b)).unwrap();
            }
            for d in 0..6 {
                prop_assert_eq!(single.get(&pk(d)), sharded.get(&pk(d)));
            }
        }
    }
}
