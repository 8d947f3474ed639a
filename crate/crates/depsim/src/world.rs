//! The simulated system: all domain state driven by one engine instance.

use std::collections::{BTreeMap, BTreeSet};

use crate::dependsched::{self, SchedState};
use crate::engine::{CompId, Engine, Event, SimTime, System, Target, TraceInfo};
use crate::faults::{self, FaultEventRec, FaultState};
use crate::metrics::MetricsStore;
use crate::resources::{self, JobId, NetState, Topology, TransferCtx, TransferId};
use crate::security::{self, AuthMode, SecState};
use crate::workload::{self, JobTable};

/// Event payloads understood by the world's dispatch.
#[derive(Clone, Debug)]
pub enum Ev {
    TransferDone { transfer: TransferId },
    JobCompletion { job: JobId },
    ServiceDone { job: JobId },
    AuthDone { job: JobId },
    FaultDue { component: CompId },
    RecoveryDue { component: CompId },
    Notify { sub: u64, fault: FaultEventRec },
    TimeoutFire { watch: u64 },
    Arrival { activity: String },
    AttackConn { pattern: String, source: CompId },
    StormTick,
    CheckpointTick { job: JobId, interval: f64 },
    VoteDue { group: String },
    DagSubmit { dag: String },
}

impl TraceInfo for Ev {
    fn trace_info(&self) -> String {
        match self {
            Ev::TransferDone { transfer } => format!("t{}", transfer.0),
            Ev::JobCompletion { job } => job.clone(),
            Ev::ServiceDone { job } => job.clone(),
            Ev::AuthDone { job } => job.clone(),
            Ev::FaultDue { component } => component.0.clone(),
            Ev::RecoveryDue { component } => component.0.clone(),
            Ev::Notify { fault, .. } => fault.summary(),
            Ev::TimeoutFire { watch } => format!("w{watch}"),
            Ev::Arrival { activity } => activity.clone(),
            Ev::AttackConn { pattern, source } => format!("{pattern}<-{source}"),
            Ev::StormTick => String::new(),
            Ev::CheckpointTick { job, .. } => job.clone(),
            Ev::VoteDue { group } => group.clone(),
            Ev::DagSubmit { dag } => dag.clone(),
        }
    }
}

/// Engine-level run options resolved from the scenario.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub horizon: f64,
    pub reschedule: bool,
    /// None = unlimited.
    pub job_max_retries: Option<u32>,
    /// None = unlimited.
    pub transfer_max_retries: Option<u32>,
    pub handshake_cost_s: f64,
    pub cipher_overhead: f64,
    pub cipher_cost_s_per_byte: f64,
    pub auth_mode: AuthMode,
    pub trusted_issuers: BTreeSet<String>,
}

impl Default for RunOptions {
    fn default() -> RunOptions {
        RunOptions {
            horizon: 0.0,
            reschedule: true,
            job_max_retries: Some(3),
            transfer_max_retries: Some(10),
            handshake_cost_s: 0.0,
            cipher_overhead: 1.0,
            cipher_cost_s_per_byte: 0.0,
            auth_mode: AuthMode::Mutual,
            trusted_issuers: BTreeSet::from(["ca".to_string()]),
        }
    }
}

pub struct World {
    pub topology: Topology,
    pub net: NetState,
    pub jobs: JobTable,
    pub sched: SchedState,
    pub faults: FaultState,
    pub sec: SecState,
    pub metrics: MetricsStore,
    pub cfg: RunOptions,
    /// Jobs currently being serviced by each database server.
    pub db_in_service: BTreeMap<CompId, BTreeSet<JobId>>,
}

impl World {
    pub fn new(cfg: RunOptions, root_seed: u64) -> World {
        World {
            topology: Topology::default(),
            net: NetState::default(),
            jobs: JobTable::default(),
            sched: SchedState::new(root_seed),
            faults: FaultState::new(root_seed),
            sec: SecState::default(),
            metrics: MetricsStore::new(1.0),
            cfg,
            db_in_service: BTreeMap::new(),
        }
    }

    pub const SCHEDULER: &'static str = "sched";

    pub fn scheduler_id() -> CompId {
        CompId::new(Self::SCHEDULER)
    }
}

impl System for World {
    type Payload = Ev;

    fn is_operational(&self, comp: &CompId) -> bool {
        self.topology
            .component_state(comp)
            .map(|s| s.is_up())
            .unwrap_or(true)
    }

    fn handle(&mut self, eng: &mut Engine<World>, ev: &Event<Ev>) {
        match &ev.payload {
            Ev::TransferDone { transfer } => {
                // Component-targeted transfer completions (DAG edges);
                // process-targeted ones wake their process instead.
                if let Some(t) = resources::transfer_completed(self, eng, *transfer) {
                    if let TransferCtx::DagEdge { dag, child } = t.ctx {
                        workload::on_dag_edge_done(self, eng, &dag, &child);
                    }
                }
            }
            Ev::FaultDue { component } => faults::on_fault_due(self, eng, component),
            Ev::RecoveryDue { component } => {
                let _ = faults::recover(self, eng, component);
            }
            Ev::Notify { sub, fault } => dependsched::on_notify(self, eng, *sub, fault),
            Ev::TimeoutFire { watch } => dependsched::on_timeout_fire(self, eng, *watch),
            Ev::Arrival { activity } => workload::on_arrival(self, eng, activity),
            Ev::AttackConn { pattern, source } => {
                security::on_attack_conn(self, eng, pattern, source)
            }
            Ev::StormTick => faults::on_storm_tick(self, eng),
            Ev::CheckpointTick { job, interval } => {
                dependsched::on_checkpoint_tick(self, eng, job, *interval)
            }
            Ev::VoteDue { group } => dependsched::on_vote_due(self, eng, group),
            Ev::DagSubmit { dag } => workload::on_dag_submit(self, eng, dag),
            // Stale process-targeted events whose process is gone.
            Ev::JobCompletion { .. } | Ev::ServiceDone { .. } | Ev::AuthDone { .. } => {}
        }
    }
}

pub fn now_s<S: System>(eng: &Engine<S>) -> f64 {
    eng.now().seconds()
}

pub fn at<S: System>(eng: &Engine<S>, dt: f64) -> SimTime {
    eng.now() + dt
}

/// Convenience for events addressed to the singleton scheduler component.
pub fn sched_target() -> Target {
    Target::Component(World::scheduler_id())
}
