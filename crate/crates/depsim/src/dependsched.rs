//! The dependability-aware scheduler: fault notifications drive
//! rescheduling, timeout watches catch silent failures, DAG plans are
//! computed under ETF or MCP list policies, and optional checkpointing and
//! active replication with majority voting bound the work lost to faults.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use crate::engine::{CompId, Engine, EventId, EventKind, SeededRng, SimTime};
use crate::faults::FaultEventRec;
use crate::workload::{self, ActivityState, Dag, DagRun, Job, JobState};
use crate::world::{sched_target, Ev, World};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum Policy {
    #[default]
    Baseline,
    Etf,
    Mcp,
}

impl FromStr for Policy {
    type Err = String;
    fn from_str(s: &str) -> Result<Policy, String> {
        match s {
            "baseline" => Ok(Policy::Baseline),
            "etf" => Ok(Policy::Etf),
            "mcp" => Ok(Policy::Mcp),
            other => Err(format!("unknown policy `{other}`")),
        }
    }
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Baseline => "baseline",
            Policy::Etf => "etf",
            Policy::Mcp => "mcp",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum WatchState {
    Armed,
    Fired,
    Disarmed,
}

pub struct Watch {
    pub job: String,
    pub deadline: SimTime,
    pub event: EventId,
    pub state: WatchState,
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub job: String,
    pub remaining_work: f64,
    pub taken_at: SimTime,
}

pub struct ReplicaGroup {
    pub id: String,
    pub original: String,
    pub replicas: Vec<String>,
    /// One entry per resolved replica; `None` marks a failed replica.
    pub results: BTreeMap<String, Option<String>>,
    pub decided: bool,
    pub decision: Option<String>,
}

pub struct SchedState {
    pub policy: Policy,
    pub submitted: u64,
    pub finished: u64,
    pub failed: u64,
    pub rescheduled: u64,
    /// Running jobs lost to the fault currently being dispatched.
    pub lost_running: Vec<String>,
    /// Jobs for which no eligible PU existed at placement time.
    pub unplaced: Vec<String>,
    pub watches: BTreeMap<u64, Watch>,
    next_watch: u64,
    pub dags: BTreeMap<String, DagRun>,
    /// Scenario DAGs waiting for their submission time.
    pub pending_dags: BTreeMap<String, Dag>,
    pub activities: BTreeMap<String, ActivityState>,
    pub groups: BTreeMap<String, ReplicaGroup>,
    pub snapshots: BTreeMap<String, Snapshot>,
    pub byz_next_placement: bool,
    pub byz_rng: SeededRng,
}

impl SchedState {
    pub fn new(root_seed: u64) -> SchedState {
        SchedState {
            policy: Policy::Baseline,
            submitted: 0,
            finished: 0,
            failed: 0,
            rescheduled: 0,
            lost_running: Vec::new(),
            unplaced: Vec::new(),
            watches: BTreeMap::new(),
            next_watch: 0,
            dags: BTreeMap::new(),
            pending_dags: BTreeMap::new(),
            activities: BTreeMap::new(),
            groups: BTreeMap::new(),
            snapshots: BTreeMap::new(),
            byz_next_placement: false,
            byz_rng: SeededRng::substream(root_seed, "sched-byz"),
        }
    }
}

// ---------------------------------------------------------------------------
// Timeout watches

/// Arms a timeout watch for a job: if the job has not finished when the
/// deadline fires, the scheduler treats it as failed and requeues it.
pub fn watch_timeout(w: &mut World, eng: &mut Engine<World>, jid: &str, timeout_s: f64) {
    let deadline = eng.now() + timeout_s;
    let id = w.sched.next_watch;
    w.sched.next_watch += 1;
    let eid = eng
        .schedule(
            deadline,
            World::scheduler_id(),
            sched_target(),
            EventKind::User("watch"),
            Ev::TimeoutFire { watch: id },
        )
        .unwrap();
    w.sched.watches.insert(
        id,
        Watch {
            job: jid.to_string(),
            deadline,
            event: eid,
            state: WatchState::Armed,
        },
    );
    w.jobs.get_mut(jid).watch = Some(id);
}

/// Cancels a job's armed watch (the job finished in time).
pub fn disarm_watch(w: &mut World, eng: &mut Engine<World>, jid: &str) {
    let Some(wid) = w.jobs.get_mut(jid).watch.take() else { return };
    let Some(watch) = w.sched.watches.get_mut(&wid) else { return };
    if watch.state != WatchState::Armed {
        return;
    }
    watch.state = WatchState::Disarmed;
    let eid = watch.event;
    eng.cancel(eid);
    eng.record("disarm", &World::scheduler_id(), jid, format!("w{wid}"));
}

pub fn on_timeout_fire(w: &mut World, eng: &mut Engine<World>, wid: u64) {
    let jid = {
        let Some(watch) = w.sched.watches.get_mut(&wid) else { return };
        if watch.state != WatchState::Armed {
            return;
        }
        watch.state = WatchState::Fired;
        watch.job.clone()
    };
    let state = w.jobs.get(&jid).state;
    if matches!(state, JobState::Finished | JobState::Failed) {
        return;
    }
    eng.record("timeout", &World::scheduler_id(), &jid, format!("w{wid}"));
    w.jobs.get_mut(&jid).watch = None;
    match state {
        JobState::Running => {
            if let Some(pid) = w.jobs.get(&jid).pid {
                eng.interrupt(w, pid, "timeout");
            }
            w.sched.lost_running.retain(|j| j != &jid);
            requeue_or_fail(w, eng, &jid, "timeout");
        }
        JobState::Queued => {
            remove_from_queues(w, &jid);
            requeue_or_fail(w, eng, &jid, "timeout");
        }
        _ => {}
    }
}

fn remove_from_queues(w: &mut World, jid: &str) {
    for pu in w.topology.pus.values_mut() {
        pu.backlog.retain(|j| j != jid);
    }
    w.sched.unplaced.retain(|j| j != jid);
}

// ---------------------------------------------------------------------------
// Fault reaction

/// Monitor notification: requeue (or fail) every running job the fault
/// took down. Recovery notifications need no action here; placement retry
/// happens when the component comes back.
pub fn on_notify(w: &mut World, eng: &mut Engine<World>, sub: u64, fault: &FaultEventRec) {
    eng.record("notify", &fault.component, &format!("sub{sub}"), fault.summary());
    if fault.recovered {
        return;
    }
    let lost = std::mem::take(&mut w.sched.lost_running);
    for jid in lost {
        requeue_or_fail(w, eng, &jid, fault.kind.as_str());
    }
}

/// Re-queues an interrupted or timed-out job when rescheduling is enabled
/// and retries remain; fails it (cascading through DAG descendants)
/// otherwise. A checkpointed job resumes from its last snapshot.
pub fn requeue_or_fail(w: &mut World, eng: &mut Engine<World>, jid: &str, reason: &str) {
    let retries = {
        let job = w.jobs.get_mut(jid);
        job.retries += 1;
        job.retries
    };
    let exhausted = w
        .cfg
        .job_max_retries
        .map(|m| retries > m)
        .unwrap_or(false);
    if !w.cfg.reschedule || exhausted {
        fail_job(w, eng, jid, reason);
        return;
    }
    {
        let job = w.jobs.get_mut(jid);
        if job.state == JobState::Rescheduled {
            job.state = JobState::Queued;
        }
        job.pu = None;
    }
    if let Some(snap) = w.sched.snapshots.get(jid).cloned() {
        w.jobs.get_mut(jid).remaining_work = snap.remaining_work;
        eng.record(
            "restore",
            &World::scheduler_id(),
            jid,
            format!("remaining={}", snap.remaining_work),
        );
    }
    w.sched.rescheduled += 1;
    eng.record("reschedule", &World::scheduler_id(), jid, reason);
    if let Some(t) = w.jobs.get(jid).timeout {
        watch_timeout(w, eng, jid, t);
    }
    workload::place_job(w, eng, jid);
}

/// Marks a job failed and cascades through its DAG descendants, which can
/// never run. A descendant that never started gets a synthetic interrupt
/// record so the trace accounts for every non-finished submission.
pub fn fail_job(w: &mut World, eng: &mut Engine<World>, jid: &str, reason: &str) {
    let (prev_state, dag, group) = {
        let job = w.jobs.get_mut(jid);
        if matches!(job.state, JobState::Finished | JobState::Failed) {
            return;
        }
        let prev = job.state;
        job.state = JobState::Failed;
        (prev, job.dag.clone(), job.replica_group.clone())
    };
    w.sched.failed += 1;
    // Jobs coming out of Rescheduled were interrupted by the engine, which
    // already traced the interrupt; queued victims need one here.
    if prev_state != JobState::Rescheduled {
        eng.record("interrupt", &World::scheduler_id(), jid, reason);
    }
    eng.record("fail", &World::scheduler_id(), jid, reason);
    remove_from_queues(w, jid);
    disarm_watch(w, eng, jid);
    if let Some(g) = group {
        on_replica_resolved(w, eng, &g, jid, None);
    }
    if let Some(dag_id) = dag {
        let children: Vec<String> = w
            .sched
            .dags
            .get(&dag_id)
            .map(|run| {
                run.dag
                    .edges
                    .iter()
                    .filter(|(p, _, _)| p == jid)
                    .map(|(_, c, _)| c.clone())
                    .collect()
            })
            .unwrap_or_default();
        for c in children {
            fail_job(w, eng, &c, "crash-cascade");
        }
    }
}

// ---------------------------------------------------------------------------
// DAG planning

/// A static schedule: task -> (PU, estimated start, estimated finish).
#[derive(Clone, Debug, Default)]
pub struct Schedule {
    pub assignments: BTreeMap<String, (CompId, f64, f64)>,
    pub makespan: f64,
}

/// Plans a DAG onto `pus` (id, power) under `policy`. `comm` estimates the
/// seconds needed to move `bytes` from one PU to another; same-PU
/// transfers are free. Pure: no engine or world access.
pub fn plan_dag(
    dag: &Dag,
    pus: &[(CompId, f64)],
    policy: Policy,
    comm: &dyn Fn(&CompId, &CompId, f64) -> f64,
) -> Result<Schedule, workload::WorkloadError> {
    let order = dag.topo_order()?;
    if pus.is_empty() || policy == Policy::Baseline {
        return Ok(Schedule::default());
    }
    let work: BTreeMap<&str, f64> = dag.tasks.iter().map(|t| (t.id.as_str(), t.work)).collect();
    match policy {
        Policy::Etf => Ok(list_schedule_etf(dag, pus, comm, &work)),
        Policy::Mcp => {
            let priority = mcp_priority(dag, pus, comm, &work, &order);
            Ok(list_schedule_in_order(dag, pus, comm, &work, &priority))
        }
        Policy::Baseline => unreachable!(),
    }
}

fn est_start_finish(
    dag: &Dag,
    comm: &dyn Fn(&CompId, &CompId, f64) -> f64,
    assigned: &BTreeMap<String, (CompId, f64, f64)>,
    pu_free: &BTreeMap<CompId, f64>,
    task: &str,
    work: f64,
    pu: &CompId,
    power: f64,
) -> (f64, f64) {
    let mut ready = pu_free.get(pu).copied().unwrap_or(0.0);
    for (p, c, bytes) in &dag.edges {
        if c != task {
            continue;
        }
        let (ppu, _, pfin) = &assigned[p.as_str()];
        let arrive = if ppu == pu {
            *pfin
        } else {
            *pfin + comm(ppu, pu, *bytes)
        };
        ready = ready.max(arrive);
    }
    (ready, ready + work / power)
}

/// Earliest-task-first: repeatedly commit the (ready task, PU) pair with
/// the smallest estimated finish time, ties by task then PU id.
fn list_schedule_etf(
    dag: &Dag,
    pus: &[(CompId, f64)],
    comm: &dyn Fn(&CompId, &CompId, f64) -> f64,
    work: &BTreeMap<&str, f64>,
) -> Schedule {
    let mut unfinished_parents: BTreeMap<&str, usize> =
        dag.tasks.iter().map(|t| (t.id.as_str(), 0)).collect();
    for (_, c, _) in &dag.edges {
        *unfinished_parents.get_mut(c.as_str()).unwrap() += 1;
    }
    let mut assigned: BTreeMap<String, (CompId, f64, f64)> = BTreeMap::new();
    let mut pu_free: BTreeMap<CompId, f64> = pus.iter().map(|(p, _)| (p.clone(), 0.0)).collect();
    let mut ready: BTreeSet<&str> = unfinished_parents
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(t, _)| *t)
        .collect();
    let mut makespan = 0.0f64;
    while !ready.is_empty() {
        let mut best: Option<(f64, &str, &CompId, f64, f64)> = None;
        for t in &ready {
            for (pu, power) in pus {
                let (s, f) =
                    est_start_finish(dag, comm, &assigned, &pu_free, t, work[t], pu, *power);
                let better = match &best {
                    None => true,
                    Some((bf, bt, bpu, _, _)) => {
                        (f, *t, pu.as_str()) < (*bf, bt, bpu.as_str())
                    }
                };
                if better {
                    best = Some((f, t, pu, s, f));
                }
            }
        }
        let (_, t, pu, s, f) = best.unwrap();
        let t = t.to_string();
        let pu = pu.clone();
        ready.remove(t.as_str());
        pu_free.insert(pu.clone(), f);
        makespan = makespan.max(f);
        assigned.insert(t.clone(), (pu, s, f));
        for (p, c, _) in &dag.edges {
            if *p == t {
                let d = unfinished_parents.get_mut(c.as_str()).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.insert(c);
                }
            }
        }
    }
    Schedule { assignments: assigned, makespan }
}

/// Modified-critical-path priority: ascending as-late-as-possible start
/// times computed with mean power and pairwise mean communication cost.
fn mcp_priority(
    dag: &Dag,
    pus: &[(CompId, f64)],
    comm: &dyn Fn(&CompId, &CompId, f64) -> f64,
    work: &BTreeMap<&str, f64>,
    topo: &[String],
) -> Vec<String> {
    let mean_power = pus.iter().map(|(_, p)| p).sum::<f64>() / pus.len() as f64;
    let mean_comm = |bytes: f64| {
        let mut total = 0.0;
        let mut n = 0u32;
        for (a, _) in pus {
            for (b, _) in pus {
                if a != b {
                    total += comm(a, b, bytes);
                    n += 1;
                }
            }
        }
        if n == 0 { 0.0 } else { total / n as f64 }
    };
    let exec = |t: &str| work[t] / mean_power;
    // Longest path to exit, including the task itself.
    let mut tail: BTreeMap<&str, f64> = BTreeMap::new();
    for t in topo.iter().rev() {
        let mut best = 0.0f64;
        for (p, c, bytes) in &dag.edges {
            if p == t {
                best = best.max(mean_comm(*bytes) + tail[c.as_str()]);
            }
        }
        tail.insert(t.as_str(), exec(t) + best);
    }
    let cp = tail.values().cloned().fold(0.0, f64::max);
    // ALAP start = cp - tail; ties by task id.
    let mut order: Vec<String> = topo.to_vec();
    order.sort_by(|a, b| {
        let ka = cp - tail[a.as_str()];
        let kb = cp - tail[b.as_str()];
        ka.partial_cmp(&kb).unwrap().then_with(|| a.cmp(b))
    });
    order
}

/// List-schedules tasks in the given priority order, but never before all
/// parents are placed; each task takes the PU with the earliest finish.
fn list_schedule_in_order(
    dag: &Dag,
    pus: &[(CompId, f64)],
    comm: &dyn Fn(&CompId, &CompId, f64) -> f64,
    work: &BTreeMap<&str, f64>,
    priority: &[String],
) -> Schedule {
    let mut assigned: BTreeMap<String, (CompId, f64, f64)> = BTreeMap::new();
    let mut pu_free: BTreeMap<CompId, f64> = pus.iter().map(|(p, _)| (p.clone(), 0.0)).collect();
    let mut pending: Vec<&String> = priority.iter().collect();
    let mut makespan = 0.0f64;
    while !pending.is_empty() {
        // First priority entry whose parents are all placed.
        let idx = pending
            .iter()
            .position(|t| {
                dag.edges
                    .iter()
                    .all(|(p, c, _)| c != *t || assigned.contains_key(p))
            })
            .expect("acyclic dag always has a placeable task");
        let t = pending.remove(idx);
        let mut best: Option<(f64, &CompId, f64)> = None;
        for (pu, power) in pus {
            let (s, f) = est_start_finish(dag, comm, &assigned, &pu_free, t, work[t.as_str()], pu, *power);
            let better = match &best {
                None => true,
                Some((bf, bpu, _)) => (f, pu.as_str()) < (*bf, bpu.as_str()),
            };
            if better {
                best = Some((f, pu, s));
            }
        }
        let (f, pu, s) = best.unwrap();
        pu_free.insert(pu.clone(), f);
        makespan = makespan.max(f);
        assigned.insert(t.clone(), (pu.clone(), s, f));
    }
    Schedule { assignments: assigned, makespan }
}

/// Plans a scenario DAG against the current topology: operational PUs,
/// communication estimated over the unloaded shortest path.
pub fn plan_for_world(w: &World, dag: &Dag) -> Option<Schedule> {
    if w.sched.policy == Policy::Baseline {
        return None;
    }
    let pus: Vec<(CompId, f64)> = w
        .topology
        .pus
        .values()
        .filter(|p| p.state.is_up())
        .map(|p| (p.id.clone(), p.power))
        .collect();
    let topo = &w.topology;
    let comm = |a: &CompId, b: &CompId, bytes: f64| -> f64 {
        match topo.route(a, b) {
            Ok(path) => {
                let latency: f64 = path.iter().map(|l| topo.links[l].latency_s).sum();
                let bottleneck = path
                    .iter()
                    .map(|l| topo.links[l].capacity_bps)
                    .fold(f64::INFINITY, f64::min);
                if path.is_empty() {
                    0.0
                } else {
                    latency + bytes * 8.0 / bottleneck
                }
            }
            Err(_) => f64::INFINITY,
        }
    };
    plan_dag(dag, &pus, w.sched.policy, &comm).ok()
}

// ---------------------------------------------------------------------------
// Checkpointing

/// Snapshots a job's remaining work so a later restart resumes from here
/// instead of from scratch.
pub fn checkpoint(w: &mut World, eng: &mut Engine<World>, jid: &str) {
    let remaining = {
        let job = w.jobs.get(jid);
        match (job.state, job.compute_started, job.pu.as_ref()) {
            (JobState::Running, Some(t0), Some(pu)) => {
                let power = w.topology.pus[pu].power;
                (job.remaining_work - (eng.now() - t0) * power).max(0.0)
            }
            _ => job.remaining_work,
        }
    };
    w.sched.snapshots.insert(
        jid.to_string(),
        Snapshot {
            job: jid.to_string(),
            remaining_work: remaining,
            taken_at: eng.now(),
        },
    );
    eng.record(
        "snapshot",
        &World::scheduler_id(),
        jid,
        format!("remaining={remaining}"),
    );
}

/// Periodic checkpointing for one job until it finishes or fails.
pub fn checkpoint_periodic(w: &mut World, eng: &mut Engine<World>, jid: &str, interval_s: f64) {
    assert!(interval_s > 0.0);
    let _ = w;
    eng.schedule(
        eng.now() + interval_s,
        World::scheduler_id(),
        sched_target(),
        EventKind::User("checkpoint"),
        Ev::CheckpointTick { job: jid.to_string(), interval: interval_s },
    )
    .unwrap();
}

pub fn on_checkpoint_tick(w: &mut World, eng: &mut Engine<World>, jid: &str, interval_s: f64) {
    let state = w.jobs.map.get(jid).map(|j| j.state);
    match state {
        Some(JobState::Finished) | Some(JobState::Failed) | None => return,
        _ => {}
    }
    checkpoint(w, eng, jid);
    checkpoint_periodic(w, eng, jid, interval_s);
}

// ---------------------------------------------------------------------------
// Active replication and majority voting

/// Submits `k` replicas of a job template as independent jobs; when all
/// replicas have resolved (finished or failed), a majority vote over the
/// received results decides the group outcome.
pub fn replicate(
    w: &mut World,
    eng: &mut Engine<World>,
    template: &Job,
    k: usize,
) -> Result<String, workload::WorkloadError> {
    assert!(k >= 1);
    let gid = format!("{}.grp", template.id);
    let mut replicas = Vec::new();
    for i in 0..k {
        let mut r = template.clone();
        r.id = format!("{}.r{i}", template.id);
        r.nominal_result = format!("ok:{}", template.id);
        r.replica_group = Some(gid.clone());
        replicas.push(r.id.clone());
        workload::submit_job(w, eng, r)?;
    }
    w.sched.groups.insert(
        gid.clone(),
        ReplicaGroup {
            id: gid.clone(),
            original: template.id.clone(),
            replicas,
            results: BTreeMap::new(),
            decided: false,
            decision: None,
        },
    );
    Ok(gid)
}

/// A replica finished (with a result) or failed (`None`); once every
/// replica has resolved the vote fires.
pub fn on_replica_resolved(
    w: &mut World,
    eng: &mut Engine<World>,
    gid: &str,
    jid: &str,
    result: Option<String>,
) {
    let all_in = {
        let Some(g) = w.sched.groups.get_mut(gid) else { return };
        g.results.insert(jid.to_string(), result);
        !g.decided && g.results.len() == g.replicas.len()
    };
    if all_in {
        eng.schedule(
            eng.now(),
            World::scheduler_id(),
            sched_target(),
            EventKind::User("vote-due"),
            Ev::VoteDue { group: gid.to_string() },
        )
        .unwrap();
    }
}

pub fn on_voter_finished(w: &mut World, eng: &mut Engine<World>, gid: &str) {
    on_vote_due(w, eng, gid);
}

pub fn on_vote_due(w: &mut World, eng: &mut Engine<World>, gid: &str) {
    let decision = {
        let Some(g) = w.sched.groups.get_mut(gid) else { return };
        if g.decided {
            return;
        }
        g.decided = true;
        let received: Vec<&str> = g.results.values().flatten().map(|s| s.as_str()).collect();
        let d = quorum_decide(&received);
        g.decision = d.clone();
        d
    };
    let info = match &decision {
        Some(v) => format!("value={v}"),
        None => "failed".to_string(),
    };
    eng.record("vote", &World::scheduler_id(), gid, info);
    w.metrics.add(
        if decision.is_some() { "votes_decided" } else { "votes_failed" },
        World::SCHEDULER,
        1.0,
    );
}

/// Majority vote over the results actually received: a value wins with a
/// strict majority of the received (not launched) replicas; a single
/// response is accepted; a tie or an empty set fails the group.
pub fn quorum_decide(received: &[&str]) -> Option<String> {
    if received.is_empty() {
        return None;
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in received {
        *counts.entry(r).or_insert(0) += 1;
    }
    let (&best, &n) = counts.iter().max_by_key(|(v, n)| (**n, std::cmp::Reverse(**v))).unwrap();
    (2 * n > received.len()).then(|| best.to_string())
}
