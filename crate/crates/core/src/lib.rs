//! Metadata-private messaging over parallel mix chains.
//!
//! Users are placed into publicly computable groups whose chain sets pairwise
//! intersect, so any two users can meet on some chain while every user sends the
//! same number of fixed-size messages each round. Each chain is an anytrust mix
//! cascade protected by an aggregate hybrid shuffle: servers blind users' DH keys,
//! prove a single product relation per hop, and rely on authenticated decryption
//! at the honest server to catch tampering. A blame protocol attributes failures
//! to malicious users or servers without exposing honest plaintexts.
//!
//! The [`harness`] module drives whole rounds deterministically from a seed, with
//! injectable adversaries and churn.

pub mod client;
pub mod crypto;
mod error;
pub mod harness;
pub mod mailbox;
pub mod mixserver;
pub mod topology;
pub mod wire;

pub use error::{Error, Result};
