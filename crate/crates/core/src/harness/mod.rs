//! Deterministic round simulator with injectable adversaries and churn.
//!
//! Every random choice is drawn from a stream derived from the configured seed
//! and a purpose label, so runs are reproducible and independent of thread count.

pub mod adversary;
mod config;
mod experiments;
mod report;
mod transport;
mod world;

pub use adversary::{AdversaryMode, AdversarySpec};
pub use config::{ChurnConfig, OfflineEvent, ParamsConfig, WorldConfig};
pub use experiments::{
    attack_config, attack_suite, availability_sim, bench, AttackRow, AttackTrial,
    AvailabilityResult, BenchReport,
};
pub use report::{
    write_detections_csv, write_report_csv, ChainOutcome, DetectionRecord, RoundReport,
    TrafficShape, TrafficTranscript, UserRecord,
};
pub use transport::{SimTransport, TrafficRecord};
pub use world::World;
