use serde::{Deserialize, Serialize};

use super::AdversarySpec;
use crate::client::{MessageFormat, DEFAULT_MESSAGE_SIZE};
use crate::topology::SystemParams;
use crate::{Error, Result};

/// Topology inputs; `k` and `ℓ` are derived unless overridden.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    /// Number of servers, which is also the number of chains.
    pub servers: u32,
    #[serde(default = "default_f")]
    pub f: f64,
    #[serde(default = "default_sec")]
    pub sec_exponent: u32,
    /// Replaces the derived chain length.
    #[serde(default)]
    pub chain_length: Option<u32>,
    /// Public randomness for chain formation; derived from `rng_seed` if absent.
    #[serde(default, rename = "seed-hex")]
    pub seed_hex: Option<String>,
}

fn default_f() -> f64 {
    0.2
}

fn default_sec() -> u32 {
    64
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChurnConfig {
    /// Per-server probability of failing at the start of each round.
    #[serde(default)]
    pub server_fail_prob: f64,
    /// Per-user probability of going offline at the start of each round.
    #[serde(default)]
    pub user_offline_prob: f64,
    /// Users that go offline (for good) at the given round.
    #[serde(default)]
    pub offline: Vec<OfflineEvent>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfflineEvent {
    pub user: u32,
    pub round: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub params: ParamsConfig,
    pub user_count: u32,
    #[serde(default = "default_conversation_fraction")]
    pub conversation_fraction: f64,
    #[serde(default = "default_message_size")]
    pub message_size: usize,
    pub rng_seed: u64,
    #[serde(default)]
    pub adversary: AdversarySpec,
    #[serde(default)]
    pub churn: ChurnConfig,
    /// Per-link latency range in milliseconds.
    #[serde(default = "default_latency")]
    pub latency_ms: [f64; 2],
    /// Explicit conversation pairs by user index; replaces random pairing.
    #[serde(default)]
    pub pairs: Option<Vec<[u32; 2]>>,
}

fn default_conversation_fraction() -> f64 {
    0.5
}

fn default_message_size() -> usize {
    DEFAULT_MESSAGE_SIZE
}

fn default_latency() -> [f64; 2] {
    [1.0, 10.0]
}

impl WorldConfig {
    /// A small honest world: `servers` chains of length `k`.
    pub fn small(servers: u32, k: u32, user_count: u32, rng_seed: u64) -> Self {
        WorldConfig {
            params: ParamsConfig {
                servers,
                f: default_f(),
                sec_exponent: default_sec(),
                chain_length: Some(k),
                seed_hex: None,
            },
            user_count,
            conversation_fraction: default_conversation_fraction(),
            message_size: DEFAULT_MESSAGE_SIZE,
            rng_seed,
            adversary: AdversarySpec::default(),
            churn: ChurnConfig::default(),
            latency_ms: default_latency(),
            pairs: None,
        }
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let c: WorldConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn system_params(&self) -> Result<SystemParams> {
        let seed = match &self.params.seed_hex {
            Some(h) => hex::decode(h).map_err(|e| Error::Config(format!("seed-hex: {e}")))?,
            None => self.rng_seed.to_le_bytes().to_vec(),
        };
        let p = self.params.clone();
        let params = match p.chain_length {
            // Skip the bound search when k is given; f may then be anything valid.
            Some(k) => {
                if p.servers == 0 {
                    return Err(Error::NoServers);
                }
                SystemParams {
                    n: p.servers,
                    servers: p.servers,
                    f: p.f,
                    k,
                    ell: crate::topology::compute_ell(p.servers),
                    sec_exponent: p.sec_exponent,
                    seed,
                }
            }
            None => SystemParams::derive(p.servers, p.f, p.sec_exponent, seed)?,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn format(&self) -> Result<MessageFormat> {
        MessageFormat::new(self.message_size)
    }

    pub fn validate(&self) -> Result<()> {
        let params = self.system_params()?;
        self.format()?;
        if self.user_count < 2 {
            return Err(Error::Config("user_count must be at least 2".into()));
        }
        let probs = [
            ("conversation_fraction", self.conversation_fraction),
            ("server_fail_prob", self.churn.server_fail_prob),
            ("user_offline_prob", self.churn.user_offline_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name}={p} outside [0, 1]")));
            }
        }
        let [lo, hi] = self.latency_ms;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config(format!("latency_ms [{lo}, {hi}] is not a range")));
        }
        for e in &self.churn.offline {
            if e.user >= self.user_count {
                return Err(Error::Config(format!("offline user {} does not exist", e.user)));
            }
        }
        if let Some(pairs) = &self.pairs {
            let mut seen = std::collections::BTreeSet::new();
            for [a, b] in pairs {
                if a == b || *a >= self.user_count || *b >= self.user_count {
                    return Err(Error::Config(format!("bad pair [{a}, {b}]")));
                }
                if !seen.insert(*a) || !seen.insert(*b) {
                    return Err(Error::Config(format!("user in more than one pair: [{a}, {b}]")));
                }
            }
        }
        self.adversary.validate(params.n, params.k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_toml_gets_defaults() {
        let c = WorldConfig::from_toml(
            "user_count = 4\nrng_seed = 9\n[params]\nservers = 6\nchain_length = 3\n",
        )
        .unwrap();
        assert_eq!(c.message_size, 256);
        assert_eq!(c.conversation_fraction, 0.5);
        let p = c.system_params().unwrap();
        assert_eq!((p.n, p.k, p.ell), (6, 3, 3));
    }

    #[test]
    fn toml_roundtrip() {
        let mut c = WorldConfig::small(10, 3, 20, 5);
        c.pairs = Some(vec![[0, 1]]);
        c.churn.offline.push(OfflineEvent { user: 1, round: 2 });
        assert_eq!(WorldConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn derived_chain_length() {
        let mut c = WorldConfig::small(100, 3, 4, 1);
        c.params.chain_length = None;
        assert_eq!(c.system_params().unwrap().k, crate::topology::compute_chain_length(0.2, 100, 64).unwrap());
    }

    #[test]
    fn rejects_bad_values() {
        let base = WorldConfig::small(6, 3, 4, 1);
        let mut c = base.clone();
        c.user_count = 1;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.churn.server_fail_prob = 1.5;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.pairs = Some(vec![[0, 0]]);
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.adversary.mode = super::super::AdversaryMode::TamperReplace;
        c.adversary.target_hop = 3;
        assert!(c.validate().is_err());
        let mut c = base;
        c.latency_ms = [5.0, 1.0];
        assert!(c.validate().is_err());
        assert!(WorldConfig::from_toml("user_count = 4\nrng_seed = 1\nbogus = 2\n[params]\nservers = 3\n").is_err());
    }
}
