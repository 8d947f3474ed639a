//! Jobs, DAG-structured activities, arrival generators and the baseline
//! (least-loaded) placement policy. Running jobs are engine processes; a
//! job's staging, compute, database and output phases each suspend on one
//! event, so a crash of the hosting component interrupts the job at any
//! phase.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::dependsched::{self};
use crate::engine::{CompId, Dist, Engine, EventId, EventKind, ProcessId, SeededRng, SimTime, Suspend, Target, Wake};
use crate::resources::{self, JobId, TransferCtx, TransferId};
use crate::security;
use crate::world::{sched_target, Ev, World};

#[derive(Error, Debug, PartialEq)]
pub enum WorkloadError {
    #[error("illegal job state transition: {0}")]
    IllegalState(String),
    #[error("dag `{0}` has a cycle")]
    CyclicDag(String),
    #[error("invalid activity pattern: {0}")]
    BadPattern(String),
    #[error("duplicate job id `{0}`")]
    DuplicateJob(String),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum JobState {
    Created,
    Queued,
    Running,
    Finished,
    Failed,
    Rescheduled,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum JobPhase {
    Pending,
    InputXfer,
    Compute,
    Auth,
    DbRequest,
    DbService,
    OutputXfer,
    Done,
}

/// A database operation a job performs after its compute phase.
#[derive(Clone, Debug, PartialEq)]
pub struct DbOp {
    pub server: CompId,
    pub kind: String,
    pub size_bytes: f64,
    pub request_bytes: f64,
}

#[derive(Clone, Debug)]
pub struct Job {
    pub id: JobId,
    pub work: f64,
    pub input_bytes: f64,
    pub output_bytes: f64,
    pub state: JobState,
    pub timeout: Option<f64>,
    pub vo: Option<String>,
    pub credential: Option<String>,
    pub submit_center: Option<CompId>,
    pub db_op: Option<DbOp>,
    pub dag: Option<String>,
    pub replica_group: Option<String>,
    pub is_voter_for: Option<String>,
    /// The result value an uncorrupted run produces.
    pub nominal_result: String,

    // Runtime state.
    pub pu: Option<CompId>,
    pub pid: Option<ProcessId>,
    pub phase: JobPhase,
    pub remaining_work: f64,
    pub compute_started: Option<SimTime>,
    pub completion_event: Option<EventId>,
    pub completion_time: Option<SimTime>,
    pub current_transfer: Option<TransferId>,
    pub retries: u32,
    pub result: Option<String>,
    pub corrupted: bool,
    pub watch: Option<u64>,
    pub finished_at: Option<SimTime>,
}

impl Job {
    pub fn new(id: impl Into<String>, work: f64) -> Job {
        let id = id.into();
        Job {
            nominal_result: format!("ok:{id}"),
            id,
            work,
            input_bytes: 0.0,
            output_bytes: 0.0,
            state: JobState::Created,
            timeout: None,
            vo: None,
            credential: None,
            submit_center: None,
            db_op: None,
            dag: None,
            replica_group: None,
            is_voter_for: None,
            pu: None,
            pid: None,
            phase: JobPhase::Pending,
            remaining_work: work,
            compute_started: None,
            completion_event: None,
            completion_time: None,
            current_transfer: None,
            retries: 0,
            result: None,
            corrupted: false,
            watch: None,
            finished_at: None,
        }
    }

    fn transition(&mut self, to: JobState) -> Result<(), WorkloadError> {
        use JobState::*;
        let ok = matches!(
            (self.state, to),
            (Created, Queued)
                | (Queued, Running)
                | (Running, Finished)
                | (Running, Failed)
                | (Running, Rescheduled)
                | (Rescheduled, Queued)
                | (Queued, Failed)
                | (Rescheduled, Failed)
        );
        if !ok {
            return Err(WorkloadError::IllegalState(format!(
                "{}: {:?} -> {to:?}",
                self.id, self.state
            )));
        }
        self.state = to;
        Ok(())
    }
}

#[derive(Default)]
pub struct JobTable {
    pub map: BTreeMap<JobId, Job>,
}

impl JobTable {
    pub fn get(&self, id: &str) -> &Job {
        self.map.get(id).unwrap_or_else(|| panic!("unknown job `{id}`"))
    }
    pub fn get_mut(&mut self, id: &str) -> &mut Job {
        self.map.get_mut(id).unwrap_or_else(|| panic!("unknown job `{id}`"))
    }
}

/// A DAG of jobs with data-transfer edges (parent, child, bytes).
#[derive(Clone, Debug)]
pub struct Dag {
    pub id: String,
    pub tasks: Vec<Job>,
    pub edges: Vec<(JobId, JobId, f64)>,
}

impl Dag {
    /// Topological order, or the cycle error.
    pub fn topo_order(&self) -> Result<Vec<JobId>, WorkloadError> {
        let mut indeg: BTreeMap<&str, usize> =
            self.tasks.iter().map(|t| (t.id.as_str(), 0)).collect();
        for (_, c, _) in &self.edges {
            *indeg
                .get_mut(c.as_str())
                .unwrap_or_else(|| panic!("dag {}: edge to unknown task {c}", self.id)) += 1;
        }
        let mut ready: Vec<&str> = indeg
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(t, _)| *t)
            .collect();
        let mut order = Vec::new();
        while let Some(t) = ready.pop() {
            order.push(t.to_string());
            for (p, c, _) in &self.edges {
                if p == t {
                    let d = indeg.get_mut(c.as_str()).unwrap();
                    *d -= 1;
                    if *d == 0 {
                        ready.push(c);
                    }
                }
            }
            ready.sort();
            ready.reverse(); // pop smallest id first
        }
        if order.len() != self.tasks.len() {
            return Err(WorkloadError::CyclicDag(self.id.clone()));
        }
        Ok(order)
    }
}

/// Runtime bookkeeping of a submitted DAG.
pub struct DagRun {
    pub dag: Dag,
    pub unfinished_parents: BTreeMap<JobId, usize>,
    pub pending_inputs: BTreeMap<JobId, usize>,
    pub assignment: BTreeMap<JobId, CompId>,
    pub released: BTreeSet<JobId>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Pattern {
    Batch,
    Poisson,
    Dos,
}

#[derive(Clone, Debug)]
pub struct ActivityCfg {
    pub name: String,
    pub pattern: Pattern,
    pub count: Option<u64>,
    pub rate_per_s: f64,
    pub start_s: f64,
    pub end_s: f64,
    pub template: JobTemplate,
    // DoS-only fields.
    pub sources: Vec<CompId>,
    pub target: Option<CompId>,
}

#[derive(Clone, Debug)]
pub struct JobTemplate {
    pub work: f64,
    pub input_bytes: f64,
    pub output_bytes: f64,
    pub timeout: Option<f64>,
    pub vo: Option<String>,
    pub credential: Option<String>,
    pub submit_center: Option<CompId>,
    pub db_op: Option<DbOp>,
    /// Each arrival submits this many active replicas (1 = no replication).
    pub replicas: usize,
    /// Periodic checkpoint interval for jobs of this activity.
    pub checkpoint_s: Option<f64>,
}

impl Default for JobTemplate {
    fn default() -> JobTemplate {
        JobTemplate {
            work: 0.0,
            input_bytes: 0.0,
            output_bytes: 0.0,
            timeout: None,
            vo: None,
            credential: None,
            submit_center: None,
            db_op: None,
            replicas: 1,
            checkpoint_s: None,
        }
    }
}

impl JobTemplate {
    pub fn instantiate(&self, id: &str) -> Job {
        let mut j = Job::new(id, self.work);
        j.input_bytes = self.input_bytes;
        j.output_bytes = self.output_bytes;
        j.timeout = self.timeout;
        j.vo = self.vo.clone();
        j.credential = self.credential.clone();
        j.submit_center = self.submit_center.clone();
        j.db_op = self.db_op.clone();
        j
    }
}

pub struct ActivityState {
    pub cfg: ActivityCfg,
    pub rng: SeededRng,
    pub emitted: u64,
}

// ---------------------------------------------------------------------------
// Submission and placement

/// Submits a created job to the scheduler: the job is queued, a timeout
/// watch is armed when configured, and the job is placed per the baseline
/// least-loaded policy.
pub fn submit_job(w: &mut World, eng: &mut Engine<World>, job: Job) -> Result<(), WorkloadError> {
    if job.state != JobState::Created {
        return Err(WorkloadError::IllegalState(format!(
            "{}: submit requires Created, was {:?}",
            job.id, job.state
        )));
    }
    if w.jobs.map.contains_key(&job.id) {
        return Err(WorkloadError::DuplicateJob(job.id));
    }
    let jid = job.id.clone();
    let timeout = job.timeout;
    w.jobs.map.insert(jid.clone(), job);
    w.jobs.get_mut(&jid).transition(JobState::Queued).unwrap();
    w.sched.submitted += 1;
    eng.record("submit", &World::scheduler_id(), &jid, "");
    if let Some(t) = timeout {
        dependsched::watch_timeout(w, eng, &jid, t);
    }
    place_job(w, eng, &jid);
    Ok(())
}

/// Operational PUs that may run this job: VO membership and, when the PU
/// carries an access policy, an execute authorization.
pub fn eligible_pus(w: &World, jid: &str) -> Vec<CompId> {
    let job = w.jobs.get(jid);
    let mut out = Vec::new();
    for (id, pu) in &w.topology.pus {
        if !pu.state.is_up() {
            continue;
        }
        if let Some(vo) = &job.vo {
            let in_vo = pu.vo.as_deref() == Some(vo.as_str())
                || w.sec
                    .vos
                    .get(vo)
                    .map(|v| v.components.contains(id))
                    .unwrap_or(false);
            if !in_vo {
                continue;
            }
        }
        if let Some(policy) = w.sec.policies.get(id) {
            let cert = job.credential.as_ref().and_then(|c| w.sec.certs.get(c));
            if !security::authorize(cert, Some(policy), "execute", Some(job.work)).is_allow() {
                continue;
            }
        }
        out.push(id.clone());
    }
    out
}

/// Least-loaded placement, ties by PU id. A Byzantine scheduler perturbation
/// randomizes exactly one decision.
pub fn place_job(w: &mut World, eng: &mut Engine<World>, jid: &str) {
    let candidates = eligible_pus(w, jid);
    if candidates.is_empty() {
        w.sched.unplaced.push(jid.to_string());
        return;
    }
    let chosen = if w.sched.byz_next_placement {
        w.sched.byz_next_placement = false;
        let i = w.sched.byz_rng.gen_range_usize(candidates.len());
        eng.record("byz-placement", &World::scheduler_id(), jid, candidates[i].as_str());
        candidates[i].clone()
    } else {
        candidates
            .iter()
            .min_by_key(|id| {
                let pu = &w.topology.pus[*id];
                (pu.running.len() + pu.backlog.len(), (*id).clone())
            })
            .unwrap()
            .clone()
    };
    enqueue_on_pu(w, eng, jid, &chosen);
}

/// Appends the job to a PU's FIFO backlog and starts it if a slot is free.
pub fn enqueue_on_pu(w: &mut World, eng: &mut Engine<World>, jid: &str, pu: &CompId) {
    eng.record("place", &World::scheduler_id(), jid, pu.as_str());
    w.topology.pus.get_mut(pu).unwrap().backlog.push(jid.to_string());
    drain_pu(w, eng, pu);
}

pub fn drain_pu(w: &mut World, eng: &mut Engine<World>, pu_id: &CompId) {
    loop {
        let next = {
            let Some(pu) = w.topology.pus.get_mut(pu_id) else { return };
            if !pu.state.is_up() || (pu.running.len() as u32) >= pu.slots || pu.backlog.is_empty() {
                return;
            }
            pu.backlog.remove(0)
        };
        execute_job(w, eng, &next, pu_id);
    }
}

/// Occupies a slot and spawns the job's process.
fn execute_job(w: &mut World, eng: &mut Engine<World>, jid: &str, pu_id: &CompId) {
    {
        let job = w.jobs.get_mut(jid);
        job.pu = Some(pu_id.clone());
        job.transition(JobState::Running)
            .expect("execute from queued");
    }
    w.topology
        .pus
        .get_mut(pu_id)
        .unwrap()
        .running
        .insert(jid.to_string());
    let id = jid.to_string();
    eng.spawn(
        w,
        pu_id.clone(),
        Box::new(move |w2, eng2, pid, wake| job_step(w2, eng2, &id, pid, wake)),
    )
    .expect("spawn on operational pu");
}

// ---------------------------------------------------------------------------
// The job process

pub fn job_step(
    w: &mut World,
    eng: &mut Engine<World>,
    jid: &str,
    pid: ProcessId,
    wake: Wake<Ev>,
) -> Suspend {
    match wake {
        Wake::Start => {
            w.jobs.get_mut(jid).pid = Some(pid);
            begin_staging(w, eng, jid, pid)
        }
        Wake::Event(ev) => {
            let phase = w.jobs.get(jid).phase;
            match (phase, &ev.payload) {
                (JobPhase::InputXfer, Ev::TransferDone { transfer }) => {
                    resources::transfer_completed(w, eng, *transfer);
                    w.jobs.get_mut(jid).current_transfer = None;
                    begin_compute(w, eng, jid, pid)
                }
                (JobPhase::Compute, Ev::JobCompletion { .. }) => {
                    {
                        let job = w.jobs.get_mut(jid);
                        job.remaining_work = 0.0;
                        job.completion_event = None;
                    }
                    if w.jobs.get(jid).db_op.is_some() {
                        begin_auth(w, eng, jid, pid)
                    } else {
                        begin_output_or_finish(w, eng, jid, pid)
                    }
                }
                (JobPhase::Auth, Ev::AuthDone { .. }) => begin_db_request(w, eng, jid, pid),
                (JobPhase::DbRequest, Ev::TransferDone { transfer }) => {
                    resources::transfer_completed(w, eng, *transfer);
                    w.jobs.get_mut(jid).current_transfer = None;
                    on_db_request_arrived(w, eng, jid, pid)
                }
                (JobPhase::DbService, Ev::ServiceDone { .. }) => {
                    let server = w.jobs.get(jid).db_op.as_ref().unwrap().server.clone();
                    if let Some(s) = w.db_in_service.get_mut(&server) {
                        s.remove(jid);
                    }
                    begin_output_or_finish(w, eng, jid, pid)
                }
                (JobPhase::OutputXfer, Ev::TransferDone { transfer }) => {
                    resources::transfer_completed(w, eng, *transfer);
                    w.jobs.get_mut(jid).current_transfer = None;
                    finish(w, eng, jid)
                }
                _ => {
                    // An event this phase does not expect; ignore and keep
                    // waiting would need the old event id, so terminate
                    // defensively with a trace record.
                    eng.record("job-protocol-error", &World::scheduler_id(), jid, "");
                    finish(w, eng, jid)
                }
            }
        }
        Wake::Interrupted(reason) => {
            cleanup_after_interrupt(w, eng, jid);
            on_job_interrupted(w, eng, jid, &reason);
            Suspend::Terminate
        }
    }
}

fn pu_of(w: &World, jid: &str) -> CompId {
    w.jobs.get(jid).pu.clone().expect("running job has a pu")
}

fn begin_staging(w: &mut World, eng: &mut Engine<World>, jid: &str, pid: ProcessId) -> Suspend {
    let (input, center) = {
        let job = w.jobs.get(jid);
        (job.input_bytes, job.submit_center.clone())
    };
    if input > 0.0 {
        if let Some(center) = center {
            let pu = pu_of(w, jid);
            match resources::start_transfer(
                w,
                eng,
                &center,
                &pu,
                input,
                Target::Process(pid),
                TransferCtx::Plain,
            ) {
                Ok(tid) => {
                    let eid = w.net.transfers[&tid].completion.unwrap();
                    let job = w.jobs.get_mut(jid);
                    job.phase = JobPhase::InputXfer;
                    job.current_transfer = Some(tid);
                    return Suspend::Await(eid);
                }
                Err(e) => {
                    eng.record("transfer-error", &pu, jid, e.to_string());
                    // Run without staged input rather than deadlock.
                }
            }
        }
    }
    begin_compute(w, eng, jid, pid)
}

fn begin_compute(w: &mut World, eng: &mut Engine<World>, jid: &str, pid: ProcessId) -> Suspend {
    let pu_id = pu_of(w, jid);
    let power = w.topology.pus[&pu_id].power;
    let delay = w.jobs.get(jid).remaining_work / power;
    let when = eng.now() + delay;
    let eid = eng
        .schedule(
            when,
            pu_id,
            Target::Process(pid),
            EventKind::Completion,
            Ev::JobCompletion { job: jid.to_string() },
        )
        .unwrap();
    let job = w.jobs.get_mut(jid);
    job.phase = JobPhase::Compute;
    job.compute_started = Some(eng.now());
    job.completion_event = Some(eid);
    job.completion_time = Some(when);
    Suspend::Await(eid)
}

fn begin_auth(w: &mut World, eng: &mut Engine<World>, jid: &str, pid: ProcessId) -> Suspend {
    let (cred, server) = {
        let job = w.jobs.get(jid);
        (job.credential.clone(), job.db_op.as_ref().unwrap().server.clone())
    };
    if cred.is_none() || w.cfg.auth_mode == security::AuthMode::None {
        return begin_db_request(w, eng, jid, pid);
    }
    let pu = pu_of(w, jid);
    match security::authenticate(w, eng, &pu, &server, cred.as_deref().unwrap()) {
        Ok(cost) => {
            let eid = eng
                .schedule(
                    eng.now() + cost,
                    pu,
                    Target::Process(pid),
                    EventKind::Completion,
                    Ev::AuthDone { job: jid.to_string() },
                )
                .unwrap();
            w.jobs.get_mut(jid).phase = JobPhase::Auth;
            Suspend::Await(eid)
        }
        Err(reason) => {
            eng.record("auth-fail", &pu, server.as_str(), reason);
            finish(w, eng, jid)
        }
    }
}

fn begin_db_request(w: &mut World, eng: &mut Engine<World>, jid: &str, pid: ProcessId) -> Suspend {
    let (server, request_bytes) = {
        let job = w.jobs.get(jid);
        let op = job.db_op.as_ref().unwrap();
        (op.server.clone(), op.request_bytes)
    };
    let secured = w.jobs.get(jid).credential.is_some()
        && w.cfg.auth_mode != security::AuthMode::None;
    let eff_bytes = if secured {
        request_bytes * w.cfg.cipher_overhead
    } else {
        request_bytes
    };
    let pu = pu_of(w, jid);
    match resources::start_transfer(
        w,
        eng,
        &pu,
        &server,
        eff_bytes,
        Target::Process(pid),
        TransferCtx::DbRequest { op: 0 },
    ) {
        Ok(tid) => {
            let eid = w.net.transfers[&tid].completion.unwrap();
            let job = w.jobs.get_mut(jid);
            job.phase = JobPhase::DbRequest;
            job.current_transfer = Some(tid);
            Suspend::Await(eid)
        }
        Err(e) => {
            eng.record("transfer-error", &pu, jid, e.to_string());
            finish(w, eng, jid)
        }
    }
}

fn on_db_request_arrived(w: &mut World, eng: &mut Engine<World>, jid: &str, pid: ProcessId) -> Suspend {
    let (server, op_kind, size, request_bytes, cred) = {
        let job = w.jobs.get(jid);
        let op = job.db_op.as_ref().unwrap();
        (
            op.server.clone(),
            op.kind.clone(),
            op.size_bytes,
            op.request_bytes,
            job.credential.clone(),
        )
    };
    let pu = pu_of(w, jid);
    let secured = cred.is_some() && w.cfg.auth_mode != security::AuthMode::None;
    let eff_bytes = if secured {
        request_bytes * w.cfg.cipher_overhead
    } else {
        request_bytes
    };
    let outcome = security::db_connection_arrived(
        w,
        eng,
        &server,
        &pu,
        &op_kind,
        eff_bytes,
        cred.as_deref(),
    );
    match outcome {
        security::ConnOutcome::Dropped | security::ConnOutcome::Denied { .. } => {
            finish(w, eng, jid)
        }
        security::ConnOutcome::Allowed => {
            let delay = {
                let db = &w.topology.dbs[&server];
                db.service_time(size) + w.cfg.cipher_cost_s_per_byte * eff_bytes
            };
            let eid = eng
                .schedule(
                    eng.now() + delay,
                    server.clone(),
                    Target::Process(pid),
                    EventKind::Completion,
                    Ev::ServiceDone { job: jid.to_string() },
                )
                .unwrap();
            w.db_in_service
                .entry(server)
                .or_default()
                .insert(jid.to_string());
            w.jobs.get_mut(jid).phase = JobPhase::DbService;
            Suspend::Await(eid)
        }
    }
}

fn begin_output_or_finish(
    w: &mut World,
    eng: &mut Engine<World>,
    jid: &str,
    pid: ProcessId,
) -> Suspend {
    let (out, center) = {
        let job = w.jobs.get(jid);
        (job.output_bytes, job.submit_center.clone())
    };
    if out > 0.0 {
        if let Some(center) = center {
            let pu = pu_of(w, jid);
            if let Ok(tid) = resources::start_transfer(
                w,
                eng,
                &pu,
                &center,
                out,
                Target::Process(pid),
                TransferCtx::JobOutput { job: jid.to_string() },
            ) {
                let eid = w.net.transfers[&tid].completion.unwrap();
                let job = w.jobs.get_mut(jid);
                job.phase = JobPhase::OutputXfer;
                job.current_transfer = Some(tid);
                return Suspend::Await(eid);
            }
        }
    }
    finish(w, eng, jid)
}

fn finish(w: &mut World, eng: &mut Engine<World>, jid: &str) -> Suspend {
    on_job_finished(w, eng, jid);
    Suspend::Terminate
}

pub fn on_job_finished(w: &mut World, eng: &mut Engine<World>, jid: &str) {
    let (pu_id, dag, group, voter_for) = {
        let job = w.jobs.get_mut(jid);
        job.transition(JobState::Finished).expect("finish from running");
        job.phase = JobPhase::Done;
        job.finished_at = Some(eng.now());
        job.result = Some(if job.corrupted {
            format!("corrupt:{jid}")
        } else {
            job.nominal_result.clone()
        });
        (
            job.pu.clone().unwrap(),
            job.dag.clone(),
            job.replica_group.clone(),
            job.is_voter_for.clone(),
        )
    };
    w.sched.finished += 1;
    eng.record("finish", &pu_id, jid, "");
    if let Some(pu) = w.topology.pus.get_mut(&pu_id) {
        pu.running.remove(jid);
    }
    dependsched::disarm_watch(w, eng, jid);
    if let Some(d) = dag {
        on_dag_parent_finished(w, eng, &d, jid);
    }
    if let Some(g) = group {
        let result = w.jobs.get(jid).result.clone();
        dependsched::on_replica_resolved(w, eng, &g, jid, result);
    }
    if let Some(g) = voter_for {
        dependsched::on_voter_finished(w, eng, &g);
    }
    drain_pu(w, eng, &pu_id);
    // A freed slot may admit jobs that found no eligible PU earlier.
    retry_unplaced(w, eng);
}

fn cleanup_after_interrupt(w: &mut World, eng: &mut Engine<World>, jid: &str) {
    let (transfer, server, completion) = {
        let job = w.jobs.get_mut(jid);
        (
            job.current_transfer.take(),
            job.db_op.as_ref().map(|o| o.server.clone()),
            job.completion_event.take(),
        )
    };
    if let Some(tid) = transfer {
        resources::abort_transfer(w, eng, tid);
    }
    if let Some(eid) = completion {
        eng.cancel(eid);
    }
    if let Some(s) = server {
        if let Some(set) = w.db_in_service.get_mut(&s) {
            set.remove(jid);
        }
    }
}

/// Marks the job as a reschedule candidate; the scheduler's fault
/// notification decides between re-queueing and permanent failure.
pub fn on_job_interrupted(w: &mut World, eng: &mut Engine<World>, jid: &str, _reason: &str) {
    let pu_id = {
        let job = w.jobs.get_mut(jid);
        job.transition(JobState::Rescheduled)
            .expect("interrupt of running job");
        job.phase = JobPhase::Pending;
        job.pid = None;
        job.remaining_work = job.work; // restart from scratch unless restored
        job.pu.clone()
    };
    if let Some(pu_id) = pu_id {
        if let Some(pu) = w.topology.pus.get_mut(&pu_id) {
            pu.running.remove(jid);
        }
    }
    let _ = eng;
    w.sched.lost_running.push(jid.to_string());
}

pub fn retry_unplaced(w: &mut World, eng: &mut Engine<World>, ) {
    let pending = std::mem::take(&mut w.sched.unplaced);
    for jid in pending {
        place_job(w, eng, &jid);
    }
}

// ---------------------------------------------------------------------------
// DAGs

/// Validates and registers a DAG, plans placements under the configured
/// policy, and releases its root tasks.
pub fn submit_dag(w: &mut World, eng: &mut Engine<World>, dag: Dag) -> Result<(), WorkloadError> {
    dag.topo_order()?;
    let dag_id = dag.id.clone();
    let mut unfinished: BTreeMap<JobId, usize> =
        dag.tasks.iter().map(|t| (t.id.clone(), 0)).collect();
    for (_, c, _) in &dag.edges {
        *unfinished.get_mut(c).unwrap() += 1;
    }
    for t in &dag.tasks {
        if t.state != JobState::Created {
            return Err(WorkloadError::IllegalState(format!(
                "dag task {} not in Created state",
                t.id
            )));
        }
    }
    let assignment = dependsched::plan_for_world(w, &dag)
        .map(|s| s.assignments.into_iter().map(|(t, (pu, _, _))| (t, pu)).collect())
        .unwrap_or_default();
    for mut t in dag.tasks.clone() {
        t.dag = Some(dag_id.clone());
        let jid = t.id.clone();
        if w.jobs.map.contains_key(&jid) {
            return Err(WorkloadError::DuplicateJob(jid));
        }
        w.jobs.map.insert(jid.clone(), t);
        w.jobs.get_mut(&jid).transition(JobState::Queued).unwrap();
        w.sched.submitted += 1;
        eng.record("submit", &World::scheduler_id(), &jid, dag_id.as_str());
    }
    let roots: Vec<JobId> = unfinished
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(t, _)| t.clone())
        .collect();
    w.sched.dags.insert(
        dag_id.clone(),
        DagRun {
            dag,
            unfinished_parents: unfinished,
            pending_inputs: BTreeMap::new(),
            assignment,
            released: BTreeSet::new(),
        },
    );
    for t in roots {
        release_task(w, eng, &dag_id, &t);
    }
    Ok(())
}

/// A task whose parents have all finished: resolve its PU, start inbound
/// edge transfers, and enqueue it once (or if) those are done.
pub fn release_task(w: &mut World, eng: &mut Engine<World>, dag_id: &str, task: &str) {
    let planned = w.sched.dags[dag_id].assignment.get(task).cloned();
    let pu = match planned {
        Some(p) if w.topology.pus.get(&p).map(|x| x.state.is_up()).unwrap_or(false) => p,
        _ => {
            let cands = eligible_pus(w, task);
            match cands.iter().min_by_key(|id| {
                let pu = &w.topology.pus[*id];
                (pu.running.len() + pu.backlog.len(), (*id).clone())
            }) {
                Some(p) => p.clone(),
                None => {
                    w.sched.unplaced.push(task.to_string());
                    return;
                }
            }
        }
    };
    let run = w.sched.dags.get_mut(dag_id).unwrap();
    run.released.insert(task.to_string());
    run.assignment.insert(task.to_string(), pu.clone());
    let inbound: Vec<(JobId, f64)> = run
        .dag
        .edges
        .iter()
        .filter(|(_, c, b)| c == task && *b > 0.0)
        .map(|(p, _, b)| (p.clone(), *b))
        .collect();
    let mut pending = 0usize;
    for (parent, bytes) in inbound {
        let parent_pu = w.jobs.get(&parent).pu.clone();
        let Some(parent_pu) = parent_pu else { continue };
        if parent_pu == pu {
            continue;
        }
        match resources::start_transfer(
            w,
            eng,
            &parent_pu,
            &pu,
            bytes,
            sched_target(),
            TransferCtx::DagEdge {
                dag: dag_id.to_string(),
                child: task.to_string(),
            },
        ) {
            Ok(_) => pending += 1,
            Err(e) => {
                eng.record("transfer-error", &parent_pu, task, e.to_string());
            }
        }
    }
    if pending > 0 {
        w.sched
            .dags
            .get_mut(dag_id)
            .unwrap()
            .pending_inputs
            .insert(task.to_string(), pending);
    } else {
        enqueue_on_pu(w, eng, task, &pu);
    }
}

pub fn on_dag_edge_done(w: &mut World, eng: &mut Engine<World>, dag_id: &str, child: &str) {
    let ready = {
        let Some(run) = w.sched.dags.get_mut(dag_id) else { return };
        let Some(p) = run.pending_inputs.get_mut(child) else { return };
        *p -= 1;
        *p == 0
    };
    if ready {
        let pu = w.sched.dags[dag_id].assignment[child].clone();
        w.sched.dags.get_mut(dag_id).unwrap().pending_inputs.remove(child);
        if w.topology.pus.get(&pu).map(|x| x.state.is_up()).unwrap_or(false) {
            enqueue_on_pu(w, eng, child, &pu);
        } else {
            place_job(w, eng, child);
        }
    }
}

pub fn on_dag_parent_finished(w: &mut World, eng: &mut Engine<World>, dag_id: &str, parent: &str) {
    let children: Vec<JobId> = {
        let Some(run) = w.sched.dags.get(dag_id) else { return };
        run.dag
            .edges
            .iter()
            .filter(|(p, _, _)| p == parent)
            .map(|(_, c, _)| c.clone())
            .collect()
    };
    for c in children {
        let ready = {
            let run = w.sched.dags.get_mut(dag_id).unwrap();
            let d = run.unfinished_parents.get_mut(&c).unwrap();
            *d -= 1;
            *d == 0 && !run.released.contains(&c)
        };
        if ready {
            release_task(w, eng, dag_id, &c);
        }
    }
}

/// Scheduled DAG submission from a scenario.
pub fn on_dag_submit(w: &mut World, eng: &mut Engine<World>, dag_id: &str) {
    if let Some(dag) = w.sched.pending_dags.remove(dag_id) {
        submit_dag(w, eng, dag).expect("scenario dag validated at load");
    }
}

// ---------------------------------------------------------------------------
// Activity generators

/// Registers an activity and schedules its arrival stream: batch and
/// poisson patterns inject jobs; a dos pattern delegates to the security
/// model's attack generator.
pub fn generate(w: &mut World, eng: &mut Engine<World>, cfg: ActivityCfg) -> Result<(), WorkloadError> {
    if cfg.rate_per_s < 0.0 || cfg.end_s < cfg.start_s {
        return Err(WorkloadError::BadPattern(cfg.name.clone()));
    }
    match cfg.pattern {
        Pattern::Dos => {
            let pattern = security::AttackPattern {
                name: cfg.name.clone(),
                sources: cfg.sources.clone(),
                target: cfg.target.clone().ok_or_else(|| {
                    WorkloadError::BadPattern(format!("{}: dos requires target", cfg.name))
                })?,
                rate_per_s: cfg.rate_per_s,
                start_s: cfg.start_s,
                end_s: cfg.end_s,
                request_bytes: cfg.template.db_op.as_ref().map(|o| o.request_bytes).unwrap_or(0.0),
                op_kind: cfg
                    .template
                    .db_op
                    .as_ref()
                    .map(|o| o.kind.clone())
                    .unwrap_or_else(|| "connect".to_string()),
                credential: cfg.template.credential.clone(),
            };
            security::launch_attack(w, eng, pattern);
            return Ok(());
        }
        Pattern::Batch => {
            let count = cfg.count.unwrap_or(0);
            let name = cfg.name.clone();
            let start = SimTime::new(cfg.start_s);
            register_activity(w, eng, cfg);
            for _ in 0..count {
                eng.schedule(
                    start,
                    World::scheduler_id(),
                    sched_target(),
                    EventKind::Arrival,
                    Ev::Arrival { activity: name.clone() },
                )
                .unwrap();
            }
        }
        Pattern::Poisson => {
            if cfg.rate_per_s <= 0.0 {
                return Err(WorkloadError::BadPattern(format!(
                    "{}: poisson requires rate > 0",
                    cfg.name
                )));
            }
            let name = cfg.name.clone();
            let start = cfg.start_s;
            let end = cfg.end_s;
            let count = cfg.count;
            register_activity(w, eng, cfg);
            let st = w.sched.activities.get_mut(&name).unwrap();
            let gap = Dist::Exponential { mean: 1.0 / st.cfg.rate_per_s }
                .sample(&mut st.rng)
                .unwrap();
            let first = start + gap;
            if first <= end && count != Some(0) {
                eng.schedule(
                    SimTime::new(first),
                    World::scheduler_id(),
                    sched_target(),
                    EventKind::Arrival,
                    Ev::Arrival { activity: name },
                )
                .unwrap();
            }
        }
    }
    Ok(())
}

fn register_activity(w: &mut World, eng: &Engine<World>, cfg: ActivityCfg) {
    let rng = SeededRng::substream(eng.root_seed(), &format!("activity:{}", cfg.name));
    w.sched.activities.insert(
        cfg.name.clone(),
        ActivityState { cfg, rng, emitted: 0 },
    );
}

pub fn on_arrival(w: &mut World, eng: &mut Engine<World>, name: &str) {
    let (jid, job, schedule_next) = {
        let Some(st) = w.sched.activities.get_mut(name) else { return };
        if let Some(c) = st.cfg.count {
            if st.emitted >= c {
                return;
            }
        }
        let jid = format!("{name}.{}", st.emitted);
        st.emitted += 1;
        let job = st.cfg.template.instantiate(&jid);
        let next = if st.cfg.pattern == Pattern::Poisson {
            let more = st.cfg.count.map(|c| st.emitted < c).unwrap_or(true);
            if more {
                let gap = Dist::Exponential { mean: 1.0 / st.cfg.rate_per_s }
                    .sample(&mut st.rng)
                    .unwrap();
                let t = eng.now().seconds() + gap;
                (t <= st.cfg.end_s).then_some(t)
            } else {
                None
            }
        } else {
            None
        };
        (jid, job, next)
    };
    if let Some(t) = schedule_next {
        eng.schedule(
            SimTime::new(t),
            World::scheduler_id(),
            sched_target(),
            EventKind::Arrival,
            Ev::Arrival { activity: name.to_string() },
        )
        .unwrap();
    }
    let (replicas, checkpoint_s) = w
        .sched
        .activities
        .get(name)
        .map(|st| (st.cfg.template.replicas, st.cfg.template.checkpoint_s))
        .unwrap_or((1, None));
    if replicas > 1 {
        if let Err(e) = dependsched::replicate(w, eng, &job, replicas) {
            eng.record("submit-error", &World::scheduler_id(), &jid, e.to_string());
        }
        return;
    }
    if let Err(e) = submit_job(w, eng, job) {
        eng.record("submit-error", &World::scheduler_id(), &jid, e.to_string());
        return;
    }
    if let Some(interval) = checkpoint_s {
        dependsched::checkpoint_periodic(w, eng, &jid, interval);
    }
}
