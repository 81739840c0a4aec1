//! Chain formation and the chain-selection scheme.
//!
//! Users fall into `ℓ+1` groups; group `i` sends to the ordered chain set `C_i`.
//! The sets are built so that every pair of groups shares at least one chain.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use num_bigint::BigUint;
use num_traits::One;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::GroupElement;
use crate::{Error, Result};

/// 1-based chain index.
pub type ChainId = u32;
/// Global server identifier.
pub type ServerId = u32;

/// Largest chain length the exact boundary search will evaluate.
pub const MAX_CHAIN_LENGTH: u32 = 4096;

/// Chain length the original deployment quotes for `f = 0.2`, `λ = 64`.
pub const REFERENCE_CHAIN_LENGTH: u32 = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Number of chains.
    pub n: u32,
    /// Number of servers.
    #[serde(rename = "N")]
    pub servers: u32,
    /// Assumed malicious fraction.
    pub f: f64,
    /// Chain length.
    pub k: u32,
    /// Chains per user group.
    pub ell: u32,
    /// Target failure probability exponent λ.
    pub sec_exponent: u32,
    /// Public randomness for chain formation.
    #[serde(rename = "seed-hex", default, with = "hex_bytes")]
    pub seed: Vec<u8>,
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

impl SystemParams {
    /// `n = N` chains, `k` from the union bound, `ℓ` from the chain count.
    pub fn derive(servers: u32, f: f64, sec_exponent: u32, seed: Vec<u8>) -> Result<Self> {
        if servers == 0 {
            return Err(Error::NoServers);
        }
        let k = compute_chain_length(f, servers as u64, sec_exponent)?;
        Ok(SystemParams {
            n: servers,
            servers,
            f,
            k,
            ell: compute_ell(servers),
            sec_exponent,
            seed,
        })
    }

    /// Overrides `k`, e.g. for desk-scale experiments that accept a weaker bound.
    pub fn with_chain_length(mut self, k: u32) -> Self {
        self.k = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("n must be at least 1".into()));
        }
        if self.n != self.servers {
            return Err(Error::InvalidParameter(format!(
                "chain count n={} must equal server count N={}",
                self.n, self.servers
            )));
        }
        if !(0.0..1.0).contains(&self.f) {
            return Err(Error::InvalidParameter(format!("f={} outside [0, 1)", self.f)));
        }
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if self.ell != compute_ell(self.n) {
            return Err(Error::InvalidParameter(format!(
                "ell={} does not match n={} (expected {})",
                self.ell,
                self.n,
                compute_ell(self.n)
            )));
        }
        Ok(())
    }

    /// Whether `n·f^k < 2^-λ` holds exactly.
    pub fn meets_anytrust_bound(&self) -> bool {
        union_bound_holds(self.f, self.n as u64, self.sec_exponent, self.k).unwrap_or(false)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("params serialise")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Splits a finite positive `f64` into `m · 2^e` with `m` odd.
fn dyadic(f: f64) -> (u64, i64) {
    let bits = f.to_bits();
    let exp_bits = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (mut m, mut e) = if exp_bits == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), exp_bits - 1075)
    };
    let tz = m.trailing_zeros();
    m >>= tz;
    e += tz as i64;
    (m, e)
}

/// Exact test of `n · f^k < 2^-λ` with `f` read as the dyadic rational it encodes.
fn union_bound_holds(f: f64, n: u64, lambda: u32, k: u32) -> Result<bool> {
    if !(f.is_finite() && (0.0..1.0).contains(&f)) {
        return Err(Error::InvalidParameter(format!("f={f} outside [0, 1)")));
    }
    if f == 0.0 {
        return Ok(true);
    }
    let (m, e) = dyadic(f);
    // n · m^k · 2^(e·k + λ) < 1
    let lhs = BigUint::from(n) * BigUint::from(m).pow(k);
    let shift = e * k as i64 + lambda as i64;
    Ok(if shift >= 0 {
        (lhs << shift as usize) < BigUint::one()
    } else {
        lhs < (BigUint::one() << (-shift) as usize)
    })
}

/// Smallest `k` with `n·f^k < 2^-λ`, decided by exact rational comparison.
pub fn compute_chain_length(f: f64, n: u64, sec_exponent: u32) -> Result<u32> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    if !(f.is_finite() && (0.0..1.0).contains(&f)) {
        return Err(Error::InvalidParameter(format!("f={f} outside [0, 1)")));
    }
    if f == 0.0 {
        return Ok(1);
    }
    let estimate = (sec_exponent as f64 + (n as f64).log2()) / -f.log2();
    if !estimate.is_finite() || estimate > MAX_CHAIN_LENGTH as f64 {
        return Err(Error::InvalidParameter(format!(
            "chain length for f={f} exceeds {MAX_CHAIN_LENGTH}"
        )));
    }
    // Start just below the floating-point estimate, then walk to the exact boundary.
    let mut k = (estimate.floor() as u32).saturating_sub(2).max(1);
    while k > 1 && union_bound_holds(f, n, sec_exponent, k - 1)? {
        k -= 1;
    }
    while !union_bound_holds(f, n, sec_exponent, k)? {
        k += 1;
        if k > MAX_CHAIN_LENGTH {
            return Err(Error::InvalidParameter(format!(
                "chain length for f={f} exceeds {MAX_CHAIN_LENGTH}"
            )));
        }
    }
    Ok(k)
}

/// `ℓ = ⌈√(2n+0.25) − 0.5⌉`, i.e. the smallest `ℓ` with `(ℓ²+ℓ)/2 ≥ n`.
pub fn compute_ell(n: u32) -> u32 {
    let n = n as u64;
    let mut ell = ((2.0 * n as f64).sqrt() as u64).saturating_sub(1);
    while ell * (ell + 1) / 2 < n {
        ell += 1;
    }
    while ell > 0 && (ell - 1) * ell / 2 >= n {
        ell -= 1;
    }
    ell as u32
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub chain_id: ChainId,
    pub servers: Vec<ServerId>,
}

/// Samples `n` chains of `k` servers from public randomness, then staggers each
/// server's positions round-robin across the chains it belongs to.
pub fn form_chains(
    randomness: &[u8],
    servers: &[ServerId],
    params: &SystemParams,
) -> Result<Vec<ChainConfig>> {
    if servers.is_empty() {
        return Err(Error::NoServers);
    }
    if params.k == 0 || params.n == 0 {
        return Err(Error::InvalidParameter("n and k must be positive".into()));
    }
    let seed = crate::crypto::hash_parts(b"xrd/chain-formation", &[randomness]);
    let mut rng = ChaCha20Rng::from_seed(seed);
    let k = params.k as usize;
    let mut memberships: HashMap<ServerId, usize> = HashMap::new();
    let mut chains = Vec::with_capacity(params.n as usize);
    for chain_id in 1..=params.n {
        let drawn: Vec<ServerId> = (0..k)
            .map(|_| servers[rng.gen_range(0..servers.len())])
            .collect();
        let mut slots: Vec<Option<ServerId>> = vec![None; k];
        for s in drawn {
            let count = memberships.entry(s).or_insert(0);
            let want = *count % k;
            *count += 1;
            let pos = (0..k)
                .map(|off| (want + off) % k)
                .find(|&p| slots[p].is_none())
                .expect("k servers always fit k slots");
            slots[pos] = Some(s);
        }
        chains.push(ChainConfig {
            chain_id,
            servers: slots.into_iter().map(|s| s.expect("filled")).collect(),
        });
    }
    Ok(chains)
}

/// Writes `chain_id,position,server_id` rows (positions are 1-based).
pub fn write_chain_table<W: Write>(chains: &[ChainConfig], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["chain_id", "position", "server_id"])?;
    for c in chains {
        for (i, s) in c.servers.iter().enumerate() {
            w.write_record([c.chain_id.to_string(), (i + 1).to_string(), s.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// The ordered chain sets `C_1..C_{ℓ+1}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupChainSets {
    ell: u32,
    n: u32,
    /// Wrapped into `[1, n]`, before deduplication.
    sets: Vec<Vec<ChainId>>,
    /// Same order, duplicates removed; this is what users send on.
    dedup: Vec<Vec<ChainId>>,
}

impl GroupChainSets {
    pub fn build(ell: u32, n: u32) -> Result<Self> {
        if ell == 0 || n == 0 {
            return Err(Error::InvalidParameter("ell and n must be positive".into()));
        }
        let l = ell as usize;
        let mut raw: Vec<Vec<u64>> = Vec::with_capacity(l + 1);
        raw.push((1..=ell as u64).collect());
        for i in 1..=l {
            let mut next = Vec::with_capacity(l);
            for prev in raw.iter().take(i) {
                next.push(prev[i - 1]);
            }
            let last = raw[i - 1][l - 1];
            next.extend((1..=(l - i) as u64).map(|d| last + d));
            raw.push(next);
        }
        let n64 = n as u64;
        let sets: Vec<Vec<ChainId>> = raw
            .iter()
            .map(|s| s.iter().map(|&idx| ((idx - 1) % n64 + 1) as ChainId).collect())
            .collect();
        let dedup = sets
            .iter()
            .map(|s| {
                let mut seen = BTreeSet::new();
                s.iter().copied().filter(|c| seen.insert(*c)).collect()
            })
            .collect();
        Ok(GroupChainSets { ell, n, sets, dedup })
    }

    pub fn ell(&self) -> u32 {
        self.ell
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn group_count(&self) -> u32 {
        self.ell + 1
    }

    fn check(&self, group: u32) -> Result<usize> {
        if group == 0 || group > self.ell + 1 {
            return Err(Error::GroupOutOfRange { group, max: self.ell + 1 });
        }
        Ok(group as usize - 1)
    }

    /// `C_group` after wrapping, duplicates retained.
    pub fn raw(&self, group: u32) -> Result<&[ChainId]> {
        Ok(&self.sets[self.check(group)?])
    }

    /// `C_group` after wrapping and deduplication.
    pub fn chains(&self, group: u32) -> Result<&[ChainId]> {
        Ok(&self.dedup[self.check(group)?])
    }

    /// Smallest chain shared by both groups.
    pub fn intersect(&self, a: u32, b: u32) -> Result<ChainId> {
        let ca = self.chains(a)?;
        let cb: BTreeSet<_> = self.chains(b)?.iter().copied().collect();
        ca.iter()
            .copied()
            .filter(|c| cb.contains(c))
            .min()
            .ok_or_else(|| Error::Internal(format!("groups {a} and {b} share no chain")))
    }
}

/// `C_group` for the given `ℓ` and `n` (wrapped, duplicates retained).
pub fn chains_for_group(group: u32, ell: u32, n: u32) -> Result<Vec<ChainId>> {
    Ok(GroupChainSets::build(ell, n)?.raw(group)?.to_vec())
}

pub fn intersect_chain(group_a: u32, group_b: u32, ell: u32, n: u32) -> Result<ChainId> {
    GroupChainSets::build(ell, n)?.intersect(group_a, group_b)
}

/// Publicly computable group in `[1, ℓ+1]` from the user's key.
pub fn assign_group(user_pk: &GroupElement, ell: u32) -> u32 {
    let h = crate::crypto::hash_parts(b"xrd/group-assignment", &[user_pk.as_bytes()]);
    let v = u64::from_le_bytes(h[..8].try_into().expect("8 bytes"));
    (v % (ell as u64 + 1)) as u32 + 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Scalar;

    #[test]
    fn chain_length_reference_points() {
        // 0.5^65 = 2^-65 < 2^-64 while 0.5^64 sits exactly on the boundary.
        assert_eq!(compute_chain_length(0.5, 1, 64).unwrap(), 65);
        // f = 2^-64, n = 1: k = 1 gives exactly 2^-64, which is not strictly less.
        assert_eq!(compute_chain_length(2f64.powi(-64), 1, 64).unwrap(), 2);
        assert_eq!(compute_chain_length(0.0, 10, 64).unwrap(), 1);
        assert!(compute_chain_length(1.0, 10, 64).is_err());
        assert!(compute_chain_length(-0.1, 10, 64).is_err());
        assert!(compute_chain_length(0.2, 0, 64).is_err());
    }

    #[test]
    fn chain_length_f02_boundary() {
        // 5^32 / 2^64 ≈ 1262.2, so k = 32 suffices exactly for n ≤ 1262.
        assert_eq!(compute_chain_length(0.2, 1262, 64).unwrap(), 32);
        assert_eq!(compute_chain_length(0.2, 1263, 64).unwrap(), 33);
        assert_eq!(compute_chain_length(0.2, 6000, 64).unwrap(), 33);
    }

    #[test]
    fn ell_small_cases() {
        assert_eq!(compute_ell(1), 1);
        assert_eq!(compute_ell(2), 2);
        assert_eq!(compute_ell(3), 2);
        assert_eq!(compute_ell(6), 3);
        assert_eq!(compute_ell(7), 4);
        assert_eq!(compute_ell(100), 14);
    }

    #[test]
    fn hand_executed_recurrence() {
        let sets = GroupChainSets::build(3, 6).unwrap();
        assert_eq!(sets.raw(1).unwrap(), &[1, 2, 3]);
        assert_eq!(sets.raw(2).unwrap(), &[1, 4, 5]);
        assert_eq!(sets.raw(3).unwrap(), &[2, 4, 6]);
        assert_eq!(sets.raw(4).unwrap(), &[3, 5, 6]);
        assert_eq!(sets.intersect(2, 3).unwrap(), 4);
        assert_eq!(sets.intersect(1, 1).unwrap(), 1);
        assert_eq!(intersect_chain(2, 3, 3, 6).unwrap(), 4);
    }

    #[test]
    fn single_chain() {
        assert_eq!(chains_for_group(1, 1, 1).unwrap(), vec![1]);
        assert_eq!(chains_for_group(2, 1, 1).unwrap(), vec![1]);
        assert!(matches!(
            chains_for_group(3, 1, 1),
            Err(Error::GroupOutOfRange { group: 3, max: 2 })
        ));
        assert!(chains_for_group(0, 1, 1).is_err());
    }

    #[test]
    fn wrapping_dedups() {
        // n = 4 → ℓ = 3, triangular number 6 > 4 so indices 5, 6 wrap to 1, 2.
        let sets = GroupChainSets::build(compute_ell(4), 4).unwrap();
        assert_eq!(sets.raw(4).unwrap(), &[3, 1, 2]);
        assert_eq!(sets.raw(3).unwrap(), &[2, 4, 2]);
        assert_eq!(sets.chains(3).unwrap(), &[2, 4]);
    }

    #[test]
    fn form_chains_deterministic_and_sized() {
        let servers: Vec<ServerId> = (0..20).collect();
        let params = SystemParams::derive(20, 0.2, 16, vec![1, 2, 3]).unwrap();
        let a = form_chains(b"seed", &servers, &params).unwrap();
        let b = form_chains(b"seed", &servers, &params).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        assert!(a.iter().all(|c| c.servers.len() == params.k as usize));
        let c = form_chains(b"other", &servers, &params).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn form_chains_degenerate() {
        let params = SystemParams::derive(1, 0.0, 8, vec![]).unwrap().with_chain_length(3);
        let chains = form_chains(b"x", &[7], &params).unwrap();
        assert_eq!(chains, vec![ChainConfig { chain_id: 1, servers: vec![7, 7, 7] }]);
        assert!(matches!(form_chains(b"x", &[], &params), Err(Error::NoServers)));
    }

    #[test]
    fn staggering_rotates_positions() {
        let servers: Vec<ServerId> = (0..12).collect();
        let params = SystemParams::derive(12, 0.0, 8, vec![]).unwrap().with_chain_length(4);
        let chains = form_chains(b"stagger", &servers, &params).unwrap();
        // A server's first membership prefers position 1, its second position 2, ...
        // so across all chains no server is always stuck at the head.
        let mut positions: HashMap<ServerId, Vec<usize>> = HashMap::new();
        for c in &chains {
            for (p, s) in c.servers.iter().enumerate() {
                positions.entry(*s).or_default().push(p);
            }
        }
        let multi: Vec<_> = positions.values().filter(|v| v.len() >= 2).collect();
        assert!(!multi.is_empty());
        assert!(multi.iter().any(|v| v.iter().collect::<BTreeSet<_>>().len() > 1));
    }

    #[test]
    fn all_malicious_fraction_matches_f_pow_k() {
        // 10 servers, 5 malicious, k = 3: expect 0.125 all-malicious chains.
        let servers: Vec<ServerId> = (0..10).collect();
        let params = SystemParams {
            n: 10_000,
            servers: 10_000,
            f: 0.5,
            k: 3,
            ell: compute_ell(10_000),
            sec_exponent: 1,
            seed: vec![],
        };
        let chains = form_chains(b"monte-carlo", &servers, &params).unwrap();
        let bad = chains.iter().filter(|c| c.servers.iter().all(|&s| s < 5)).count();
        let p = 0.125;
        let sigma = (p * (1.0 - p) / chains.len() as f64).sqrt();
        let frac = bad as f64 / chains.len() as f64;
        assert!((frac - p).abs() < 3.0 * sigma, "fraction {frac}");
    }

    #[test]
    fn group_assignment_uniform() {
        let ell = 3;
        let mut counts = [0usize; 4];
        for i in 1..=10_000u64 {
            let pk = GroupElement::base_exp(&Scalar::from_u64(i));
            let g = assign_group(&pk, ell);
            assert!((1..=4).contains(&g));
            assert_eq!(assign_group(&pk, ell), g);
            counts[g as usize - 1] += 1;
        }
        let p: f64 = 0.25;
        let sigma = (10_000.0 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - 2500.0).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn group_assignment_ell_one_range() {
        for i in 1..50u64 {
            let pk = GroupElement::base_exp(&Scalar::from_u64(i));
            assert!((1..=2).contains(&assign_group(&pk, 1)));
        }
    }

    #[test]
    fn params_toml_roundtrip_and_validation() {
        let p = SystemParams::derive(6, 0.2, 64, vec![0xab, 0xcd]).unwrap();
        let text = p.to_toml();
        assert!(text.contains("seed-hex = \"abcd\""));
        assert!(text.contains("N = 6"));
        assert_eq!(SystemParams::from_toml(&text).unwrap(), p);
        p.validate().unwrap();
        let mut bad = p.clone();
        bad.servers = 7;
        assert!(bad.validate().is_err());
        let mut bad = p;
        bad.ell = 9;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn anytrust_bound_check() {
        let p = SystemParams::derive(100, 0.2, 64, vec![]).unwrap();
        assert!(p.meets_anytrust_bound());
        let weak = p.with_chain_length(3);
        assert!(!weak.meets_anytrust_bound());
    }

    #[test]
    fn chain_table_csv() {
        let chains = vec![ChainConfig { chain_id: 1, servers: vec![4, 5] }];
        let mut buf = Vec::new();
        write_chain_table(&chains, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "chain_id,position,server_id\n1,1,4\n1,2,5\n"
        );
    }
}
