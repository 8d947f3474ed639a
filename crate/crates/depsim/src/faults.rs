//! Fault injection and the monitor. Components carry fault profiles
//! (interarrival and optional repair distributions per fault class);
//! injections update resource state first and then notify subscribers at
//! the same timestamp, in subscription order.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::engine::{CompId, Dist, Engine, EventKind, SeededRng, SimTime, Target};
use crate::resources::{self, CompState};
use crate::workload;
use crate::world::{sched_target, Ev, World};

#[derive(Error, Debug, PartialEq)]
pub enum FaultError {
    #[error("component `{0}` is permanently down")]
    PermanentlyDown(String),
    #[error("unknown component `{0}`")]
    UnknownComponent(String),
    #[error("invalid fault profile: {0}")]
    BadProfile(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum FaultKind {
    Crash,
    /// A fraction of the bytes delivered so far on a link is lost and must
    /// be resent.
    Omission { loss_fraction: f64 },
    /// Pending completions on the component are postponed.
    Timing { extra: Dist },
    /// Arbitrary wrong behavior; the concrete effect depends on the
    /// component class.
    Byzantine,
}

impl FaultKind {
    pub fn tag(&self) -> &'static str {
        match self {
            FaultKind::Crash => "crash",
            FaultKind::Omission { .. } => "omission",
            FaultKind::Timing { .. } => "timing",
            FaultKind::Byzantine => "byzantine",
        }
    }
}

#[derive(Clone, Debug)]
pub struct FaultProfile {
    pub component: CompId,
    pub kind: FaultKind,
    /// Time between fault activations.
    pub interarrival: Dist,
    /// Repair time; `None` makes every activation permanent.
    pub repair: Option<Dist>,
}

struct ProfileRun {
    profile: FaultProfile,
    rng: SeededRng,
    next_at: Option<SimTime>,
}

/// What the monitor tells subscribers about.
#[derive(Clone, Debug, PartialEq)]
pub struct FaultEventRec {
    pub time_s: f64,
    pub component: CompId,
    pub kind: String,
    pub permanent: bool,
    pub recovered: bool,
}

impl FaultEventRec {
    pub fn summary(&self) -> String {
        format!(
            "{} {} permanent={} recovered={}",
            self.kind, self.component.0, self.permanent, self.recovered
        )
    }
}

pub struct Subscription {
    pub id: u64,
    /// None subscribes to every component.
    pub components: Option<BTreeSet<CompId>>,
}

pub struct StormCfg {
    pub components: Vec<CompId>,
    pub rate_per_s: f64,
    pub start_s: f64,
    pub end_s: f64,
}

struct StormRun {
    cfg: StormCfg,
    rng: SeededRng,
}

pub struct FaultState {
    root_seed: u64,
    profiles: Vec<ProfileRun>,
    subs: Vec<Subscription>,
    next_sub: u64,
    pub permanent_down: BTreeSet<CompId>,
    pub byz_rng: SeededRng,
    storm: Option<StormRun>,
    pub history: Vec<FaultEventRec>,
}

impl FaultState {
    pub fn new(root_seed: u64) -> FaultState {
        FaultState {
            root_seed,
            profiles: Vec::new(),
            subs: Vec::new(),
            next_sub: 0,
            permanent_down: BTreeSet::new(),
            byz_rng: SeededRng::substream(root_seed, "byzantine"),
            storm: None,
            history: Vec::new(),
        }
    }
}

/// Registers a monitor subscription; notifications arrive in subscription
/// order at the fault's own timestamp.
pub fn subscribe(w: &mut World, components: Option<BTreeSet<CompId>>) -> u64 {
    let id = w.faults.next_sub;
    w.faults.next_sub += 1;
    w.faults.subs.push(Subscription { id, components });
    id
}

/// Attaches a fault profile to a component and schedules its first
/// activation. Each profile draws from its own substream, so adding one
/// profile never perturbs another's activation times.
pub fn attach_profile(
    w: &mut World,
    eng: &mut Engine<World>,
    profile: FaultProfile,
) -> Result<(), FaultError> {
    if !w.topology.node_exists(&profile.component)
        && !w.topology.links.contains_key(&profile.component)
    {
        return Err(FaultError::UnknownComponent(profile.component.0.clone()));
    }
    profile
        .interarrival
        .validate()
        .map_err(|e| FaultError::BadProfile(e.to_string()))?;
    if let Some(r) = &profile.repair {
        r.validate().map_err(|e| FaultError::BadProfile(e.to_string()))?;
    }
    if let FaultKind::Omission { loss_fraction } = profile.kind {
        if !(0.0..=1.0).contains(&loss_fraction) {
            return Err(FaultError::BadProfile(format!(
                "omission loss fraction {loss_fraction} outside [0,1]"
            )));
        }
    }
    let idx = w.faults.profiles.len();
    let key = format!("fault:{}:{}", profile.component.0, idx);
    let mut run = ProfileRun {
        profile,
        rng: SeededRng::substream(w.faults.root_seed, &key),
        next_at: None,
    };
    let dt = run
        .interval()
        .map_err(|e| FaultError::BadProfile(e.to_string()))?;
    let when = eng.now() + dt;
    run.next_at = Some(when);
    let comp = run.profile.component.clone();
    eng.schedule(
        when,
        comp.clone(),
        Target::Component(World::scheduler_id()),
        EventKind::User("fault-due"),
        Ev::FaultDue { component: comp },
    )
    .unwrap();
    w.faults.profiles.push(run);
    Ok(())
}

impl ProfileRun {
    fn interval(&mut self) -> Result<f64, crate::engine::EngineError> {
        self.profile.interarrival.sample_positive(&mut self.rng)
    }
}

/// A scheduled activation fired: inject every profile of this component
/// whose activation time is now, then schedule its next activation.
pub fn on_fault_due(w: &mut World, eng: &mut Engine<World>, comp: &CompId) {
    let now = eng.now();
    let due: Vec<usize> = w
        .faults
        .profiles
        .iter()
        .enumerate()
        .filter(|(_, p)| p.profile.component == *comp && p.next_at == Some(now))
        .map(|(i, _)| i)
        .collect();
    for i in due {
        w.faults.profiles[i].next_at = None;
        let (kind, repair) = {
            let p = &w.faults.profiles[i].profile;
            (p.kind.clone(), p.repair.clone())
        };
        let permanent = repair.is_none();
        let already_down = w
            .topology
            .component_state(comp)
            .map(|s| !s.is_up())
            .unwrap_or(false);
        if !already_down {
            inject(w, eng, comp, kind.clone(), permanent);
            if let Some(rd) = &repair {
                let dt = {
                    let run = &mut w.faults.profiles[i];
                    rd.sample_positive(&mut run.rng).expect("validated repair dist")
                };
                if matches!(kind, FaultKind::Crash) {
                    eng.schedule(
                        now + dt,
                        comp.clone(),
                        Target::Component(World::scheduler_id()),
                        EventKind::Recovery,
                        Ev::RecoveryDue { component: comp.clone() },
                    )
                    .unwrap();
                }
            }
        }
        // Transient profiles keep firing; a permanent one is spent.
        if !permanent {
            let dt = {
                let run = &mut w.faults.profiles[i];
                match run.interval() {
                    Ok(d) => d,
                    Err(_) => continue,
                }
            };
            let when = now + dt;
            w.faults.profiles[i].next_at = Some(when);
            eng.schedule(
                when,
                comp.clone(),
                Target::Component(World::scheduler_id()),
                EventKind::User("fault-due"),
                Ev::FaultDue { component: comp.clone() },
            )
            .unwrap();
        }
    }
}

/// Applies a fault to a component now: resource state first, then monitor
/// notifications at the same timestamp.
pub fn inject(
    w: &mut World,
    eng: &mut Engine<World>,
    comp: &CompId,
    kind: FaultKind,
    permanent: bool,
) {
    let rec = FaultEventRec {
        time_s: eng.now().seconds(),
        component: comp.clone(),
        kind: kind.tag().to_string(),
        permanent,
        recovered: false,
    };
    match &kind {
        FaultKind::Crash => apply_crash(w, eng, comp, permanent),
        FaultKind::Omission { loss_fraction } => apply_omission(w, eng, comp, *loss_fraction),
        FaultKind::Timing { extra } => apply_timing(w, eng, comp, extra),
        FaultKind::Byzantine => apply_byzantine(w, eng, comp),
    }
    w.metrics.add("faults_injected", comp.as_str(), 1.0);
    w.faults.history.push(rec.clone());
    monitor_dispatch(w, eng, rec);
}

fn monitor_dispatch(w: &mut World, eng: &mut Engine<World>, rec: FaultEventRec) {
    let trace_kind = if rec.recovered { "recovery" } else { "fault" };
    eng.record(trace_kind, &rec.component, rec.kind.as_str(), rec.summary());
    let now = eng.now();
    let matching: Vec<u64> = w
        .faults
        .subs
        .iter()
        .filter(|s| {
            s.components
                .as_ref()
                .map(|set| set.contains(&rec.component))
                .unwrap_or(true)
        })
        .map(|s| s.id)
        .collect();
    for sub in matching {
        eng.schedule(
            now,
            rec.component.clone(),
            sched_target(),
            EventKind::Notify,
            Ev::Notify { sub, fault: rec.clone() },
        )
        .unwrap();
    }
}

fn apply_crash(w: &mut World, eng: &mut Engine<World>, comp: &CompId, permanent: bool) {
    w.topology.set_component_state(comp, CompState::Crashed);
    if permanent {
        w.faults.permanent_down.insert(comp.clone());
    }
    // Transfers touching the component lose what they delivered so far.
    crash_transfers(w, eng, comp);
    // Running jobs on a crashed PU are interrupted ...
    if let Some(pu) = w.topology.pus.get(comp) {
        let running: Vec<String> = pu.running.iter().cloned().collect();
        let backlog: Vec<String> = std::mem::take(
            &mut w.topology.pus.get_mut(comp).unwrap().backlog,
        );
        for jid in running {
            if let Some(pid) = w.jobs.get(&jid).pid {
                eng.interrupt(w, pid, "crash");
            }
        }
        // ... while never-started backlog jobs just get placed elsewhere.
        for jid in backlog {
            workload::place_job(w, eng, &jid);
        }
    }
    // Jobs in service at a crashed database lose their operation.
    if w.topology.dbs.contains_key(comp) {
        let victims: Vec<String> = w
            .db_in_service
            .get(comp)
            .map(|s| s.iter().cloned().collect())
            .unwrap_or_default();
        for jid in victims {
            if let Some(pid) = w.jobs.get(&jid).pid {
                eng.interrupt(w, pid, "server-crash");
            }
        }
    }
}

/// Every transfer whose path crosses `comp` (as a link, an intermediate
/// node, or an endpoint) loses its delivered bytes and restarts, rerouting
/// if a path still exists and blocking otherwise.
fn crash_transfers(w: &mut World, eng: &mut Engine<World>, comp: &CompId) {
    let affected: Vec<resources::TransferId> = w
        .net
        .transfers
        .values()
        .filter(|t| {
            !t.blocked
                && (t.path.contains(comp)
                    || t.via_nodes.contains(comp)
                    || t.src == *comp
                    || t.dst == *comp)
        })
        .map(|t| t.id)
        .collect();
    for tid in affected {
        restart_or_block(w, eng, tid, comp);
    }
}

fn restart_or_block(
    w: &mut World,
    eng: &mut Engine<World>,
    tid: resources::TransferId,
    cause: &CompId,
) {
    let now = eng.now();
    let (lost, src, dst, retries, notify, old_path) = {
        let t = w.net.transfers.get_mut(&tid).unwrap();
        resources::advance_to(t, now);
        if let Some(eid) = t.completion.take() {
            eng.cancel(eid);
        }
        let lost = t.total_bytes - t.remaining_bytes;
        t.retries_used += 1;
        (
            lost,
            t.src.clone(),
            t.dst.clone(),
            t.retries_used,
            t.notify.clone(),
            t.path.clone(),
        )
    };
    if lost > 0.0 {
        w.metrics.add("lost_bytes", cause.as_str(), lost);
    }
    // The old reservation is gone either way.
    for l in &old_path {
        if let Some(s) = w.net.link_flows.get_mut(l) {
            s.remove(&tid);
        }
    }
    let exhausted = w
        .cfg
        .transfer_max_retries
        .map(|m| retries > m)
        .unwrap_or(false);
    if exhausted {
        let t = w.net.transfers.remove(&tid).unwrap();
        eng.record("transfer-failed", &t.src, t.dst.as_str(), format!("t{}", tid.0));
        recompute_after(w, eng, &old_path);
        if let Target::Process(pid) = t.notify {
            eng.interrupt(w, pid, "transfer-failed");
        }
        return;
    }
    match w.topology.route_full(&src, &dst) {
        Ok((path, via)) => {
            let latency: f64 = path.iter().map(|l| w.topology.links[l].latency_s).sum();
            {
                let t = w.net.transfers.get_mut(&tid).unwrap();
                t.remaining_bytes = t.total_bytes;
                t.latency_remaining = latency;
                t.path = path.clone();
                t.via_nodes = via;
                t.blocked = false;
                t.rate = 0.0;
                t.last_update = now;
            }
            eng.record("retry", &src, dst.as_str(), format!("t{} via {cause}", tid.0));
            for l in &path {
                w.net.link_flows.entry(l.clone()).or_default().insert(tid);
            }
            let mut links = old_path;
            links.extend(path);
            recompute_after(w, eng, &links);
        }
        Err(_) => {
            {
                let t = w.net.transfers.get_mut(&tid).unwrap();
                t.remaining_bytes = t.total_bytes;
                t.blocked = true;
                t.rate = 0.0;
                t.last_update = now;
            }
            eng.record("blocked", &src, dst.as_str(), format!("t{} via {cause}", tid.0));
            recompute_after(w, eng, &old_path);
            let _ = notify;
        }
    }
}

fn recompute_after(w: &mut World, eng: &mut Engine<World>, links: &[CompId]) {
    let uniq: Vec<CompId> = {
        let mut s: BTreeSet<CompId> = links.iter().cloned().collect();
        s.retain(|l| w.topology.links.contains_key(l));
        s.into_iter().collect()
    };
    resources::recompute_flows_on(w, eng, &uniq);
}

/// An omission instantaneously re-queues a fraction of each crossing
/// transfer's delivered bytes.
fn apply_omission(w: &mut World, eng: &mut Engine<World>, comp: &CompId, loss_fraction: f64) {
    if let Some(l) = w.topology.links.get_mut(comp) {
        l.loss_fraction = loss_fraction;
    } else {
        return;
    }
    let now = eng.now();
    let tids: Vec<resources::TransferId> = w
        .net
        .link_flows
        .get(comp)
        .map(|s| s.iter().copied().collect())
        .unwrap_or_default();
    let mut total_lost = 0.0;
    for tid in tids {
        {
            let t = w.net.transfers.get_mut(&tid).unwrap();
            if t.blocked {
                continue;
            }
            resources::advance_to(t, now);
            let delivered = t.total_bytes - t.remaining_bytes;
            let lost = loss_fraction * delivered;
            t.remaining_bytes = (t.remaining_bytes + lost).min(t.total_bytes);
            total_lost += lost;
        }
        resources::reschedule_completion_of(w, eng, tid);
    }
    if total_lost > 0.0 {
        w.metrics.add("lost_bytes", comp.as_str(), total_lost);
    }
}

/// A timing fault postpones pending completions: compute completions on a
/// PU, or the residual latency of flows on a link.
fn apply_timing(w: &mut World, eng: &mut Engine<World>, comp: &CompId, extra: &Dist) {
    let delay = extra
        .sample_positive(&mut w.faults.byz_rng)
        .unwrap_or(0.0);
    if w.topology.pus.contains_key(comp) {
        let jobs: Vec<String> = w.topology.pus[comp].running.iter().cloned().collect();
        for jid in jobs {
            let (eid, when, pid) = {
                let job = w.jobs.get(&jid);
                match (job.completion_event, job.completion_time, job.pid) {
                    (Some(e), Some(t), Some(p)) => (e, t, p),
                    _ => continue,
                }
            };
            eng.cancel(eid);
            let when = when + delay;
            let new = eng
                .schedule(
                    when.max(eng.now()),
                    comp.clone(),
                    Target::Process(pid),
                    EventKind::Completion,
                    Ev::JobCompletion { job: jid.clone() },
                )
                .unwrap();
            eng.rebind(pid, new);
            let job = w.jobs.get_mut(&jid);
            job.completion_event = Some(new);
            job.completion_time = Some(when.max(eng.now()));
        }
    } else if w.topology.links.contains_key(comp) {
        let now = eng.now();
        let tids: Vec<resources::TransferId> = w
            .net
            .link_flows
            .get(comp)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        for tid in tids {
            {
                let t = w.net.transfers.get_mut(&tid).unwrap();
                if t.blocked {
                    continue;
                }
                resources::advance_to(t, now);
                t.latency_remaining += delay;
            }
            resources::reschedule_completion_of(w, eng, tid);
        }
    }
    w.metrics.add("timing_delay_s", comp.as_str(), delay);
}

/// The Byzantine effect per component class: a PU corrupts a running job's
/// result, a database answers with a wrong value, a link delivers a
/// duplicate, and the scheduler misplaces its next decision.
fn apply_byzantine(w: &mut World, eng: &mut Engine<World>, comp: &CompId) {
    if comp == &World::scheduler_id() {
        w.sched.byz_next_placement = true;
        return;
    }
    if let Some(pu) = w.topology.pus.get(comp) {
        let running: Vec<String> = pu.running.iter().cloned().collect();
        if running.is_empty() {
            return;
        }
        let victim = &running[w.faults.byz_rng.gen_range_usize(running.len())];
        w.jobs.get_mut(victim).corrupted = true;
        eng.record("corrupt", comp, victim, "");
    } else if w.topology.dbs.contains_key(comp) {
        w.metrics.add("wrong_value", comp.as_str(), 1.0);
    } else if w.topology.links.contains_key(comp) {
        w.metrics.add("dup_delivery", comp.as_str(), 1.0);
    }
}

/// Brings a component back up, retries blocked transfers and resumes
/// placement. Fails for permanently crashed components.
pub fn recover(w: &mut World, eng: &mut Engine<World>, comp: &CompId) -> Result<(), FaultError> {
    if w.faults.permanent_down.contains(comp) {
        return Err(FaultError::PermanentlyDown(comp.0.clone()));
    }
    let down = w
        .topology
        .component_state(comp)
        .map(|s| !s.is_up())
        .unwrap_or(false);
    if !down {
        return Ok(());
    }
    w.topology.set_component_state(comp, CompState::Operational);
    let rec = FaultEventRec {
        time_s: eng.now().seconds(),
        component: comp.clone(),
        kind: "crash".to_string(),
        permanent: false,
        recovered: true,
    };
    w.faults.history.push(rec.clone());
    monitor_dispatch(w, eng, rec);
    unblock_transfers(w, eng);
    if w.topology.pus.contains_key(comp) {
        workload::drain_pu(w, eng, comp);
    }
    workload::retry_unplaced(w, eng);
    Ok(())
}

/// Retries every blocked transfer for which a route exists again.
pub fn unblock_transfers(w: &mut World, eng: &mut Engine<World>) {
    let blocked: Vec<resources::TransferId> = w
        .net
        .transfers
        .values()
        .filter(|t| t.blocked)
        .map(|t| t.id)
        .collect();
    for tid in blocked {
        let (src, dst) = {
            let t = &w.net.transfers[&tid];
            (t.src.clone(), t.dst.clone())
        };
        if let Ok((path, via)) = w.topology.route_full(&src, &dst) {
            let latency: f64 = path.iter().map(|l| w.topology.links[l].latency_s).sum();
            {
                let t = w.net.transfers.get_mut(&tid).unwrap();
                t.remaining_bytes = t.total_bytes;
                t.latency_remaining = latency;
                t.path = path.clone();
                t.via_nodes = via;
                t.blocked = false;
                t.rate = 0.0;
                t.last_update = eng.now();
            }
            for l in &path {
                w.net.link_flows.entry(l.clone()).or_default().insert(tid);
            }
            resources::recompute_flows_on(w, eng, &path);
            eng.record("resume", &src, dst.as_str(), format!("t{}", tid.0));
        }
    }
}

/// Starts a Byzantine storm: a Poisson process that injects Byzantine
/// faults on random components from the affected set.
pub fn byzantine_storm(w: &mut World, eng: &mut Engine<World>, cfg: StormCfg) {
    if cfg.components.is_empty() || cfg.rate_per_s <= 0.0 {
        return;
    }
    let mut rng = SeededRng::substream(w.faults.root_seed, "storm");
    let gap = Dist::Exponential { mean: 1.0 / cfg.rate_per_s }
        .sample(&mut rng)
        .unwrap();
    let first = cfg.start_s + gap;
    let end = cfg.end_s;
    w.faults.storm = Some(StormRun { cfg, rng });
    if first <= end {
        eng.schedule(
            SimTime::new(first),
            World::scheduler_id(),
            sched_target(),
            EventKind::User("storm"),
            Ev::StormTick,
        )
        .unwrap();
    }
}

pub fn on_storm_tick(w: &mut World, eng: &mut Engine<World>) {
    let (victim, next) = {
        let Some(storm) = w.faults.storm.as_mut() else { return };
        let victim = storm.cfg.components
            [storm.rng.gen_range_usize(storm.cfg.components.len())]
        .clone();
        let gap = Dist::Exponential { mean: 1.0 / storm.cfg.rate_per_s }
            .sample(&mut storm.rng)
            .unwrap();
        let t = eng.now().seconds() + gap;
        (victim, (t <= storm.cfg.end_s).then_some(t))
    };
    inject(w, eng, &victim, FaultKind::Byzantine, false);
    if let Some(t) = next {
        eng.schedule(
            SimTime::new(t),
            World::scheduler_id(),
            sched_target(),
            EventKind::User("storm"),
            Ev::StormTick,
        )
        .unwrap();
    }
}
