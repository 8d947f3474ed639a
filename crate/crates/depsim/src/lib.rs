//! Deterministic discrete-event simulator for evaluating the dependability
//! (reliability, availability, fault tolerance, security) of large-scale
//! distributed systems: regional centers with processing units, database
//! servers and fair-share networks, MTTF-driven fault injection with
//! monitoring and recovery, fault-tolerant DAG scheduling with checkpointing
//! and quorum replication, and a virtual-organization security model.
//!
//! Simulations are driven by plain-text scenario files (see the `scenario`
//! module and the `scenarios/` directory) and produce reproducible CSV
//! trace, metrics and report files.

pub mod dependsched;
pub mod engine;
pub mod faults;
pub mod metrics;
pub mod resources;
pub mod scenario;
pub mod security;
pub mod workload;
pub mod world;

pub use engine::{CompId, Engine, EngineError, SimTime};
pub use scenario::{load_scenario, run_scenario, write_scenario, ScenarioConfig};
