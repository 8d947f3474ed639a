//! Physical resource models: regional centers with processing units,
//! database servers and mass storage, LAN/WAN links and routers, static
//! shortest-path routing, and the fair-share flow-level network.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use thiserror::Error;

use crate::engine::{CompId, Engine, EventId, EventKind, SimTime, Target};
use crate::world::{Ev, World};

pub type JobId = String;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CompState {
    Operational,
    Crashed,
    Recovering,
}

impl CompState {
    pub fn is_up(self) -> bool {
        self == CompState::Operational
    }
}

#[derive(Error, Debug, PartialEq)]
pub enum ResError {
    #[error("no operational route from {src} to {dst}")]
    NoRoute { src: String, dst: String },
    #[error("processing unit `{0}` has no free slot")]
    NoSlot(String),
    #[error("processing unit `{0}` is down")]
    PuDown(String),
    #[error("server `{0}` is down")]
    ServerDown(String),
    #[error("unknown component `{0}`")]
    Unknown(String),
}

#[derive(Clone, Debug)]
pub struct RegionalCenter {
    pub id: CompId,
    pub pus: Vec<CompId>,
    pub dbs: Vec<CompId>,
    pub lan: CompId,
}

#[derive(Clone, Debug)]
pub struct ProcessingUnit {
    pub id: CompId,
    pub center: CompId,
    /// Work units per second.
    pub power: f64,
    pub slots: u32,
    pub vo: Option<String>,
    pub state: CompState,
    pub running: BTreeSet<JobId>,
    /// Jobs planned onto this PU waiting for a free slot, FIFO.
    pub backlog: Vec<JobId>,
}

#[derive(Clone, Debug)]
pub struct Link {
    pub id: CompId,
    pub endpoints: (CompId, CompId),
    pub capacity_bps: f64,
    pub latency_s: f64,
    pub state: CompState,
    /// Current omission severity; informational between omission events.
    pub loss_fraction: f64,
}

#[derive(Clone, Debug)]
pub struct Router {
    pub id: CompId,
    pub state: CompState,
}

#[derive(Clone, Debug)]
pub struct DatabaseServer {
    pub id: CompId,
    pub center: CompId,
    pub base_latency_s: f64,
    pub throughput_bps: f64,
    pub state: CompState,
    /// Mass storage is a database specialization restricted to read/write.
    pub is_storage: bool,
}

impl DatabaseServer {
    /// Nominal service time of one operation, before faults.
    pub fn service_time(&self, size_bytes: f64) -> f64 {
        self.base_latency_s + size_bytes / self.throughput_bps
    }
}

#[derive(Default)]
pub struct Topology {
    pub centers: BTreeMap<CompId, RegionalCenter>,
    pub pus: BTreeMap<CompId, ProcessingUnit>,
    pub links: BTreeMap<CompId, Link>,
    pub routers: BTreeMap<CompId, Router>,
    pub dbs: BTreeMap<CompId, DatabaseServer>,
}

impl Topology {
    /// The center a node belongs to, if any. Center hub nodes map to
    /// themselves.
    pub fn center_of<'a>(&'a self, node: &'a CompId) -> Option<&'a CompId> {
        if self.centers.contains_key(node) {
            return Some(node);
        }
        self.pus
            .get(node)
            .map(|p| &p.center)
            .or_else(|| self.dbs.get(node).map(|d| &d.center))
    }

    pub fn node_exists(&self, node: &CompId) -> bool {
        self.centers.contains_key(node)
            || self.pus.contains_key(node)
            || self.dbs.contains_key(node)
            || self.routers.contains_key(node)
    }

    pub fn component_state(&self, id: &CompId) -> Option<CompState> {
        if let Some(p) = self.pus.get(id) {
            return Some(p.state);
        }
        if let Some(l) = self.links.get(id) {
            return Some(l.state);
        }
        if let Some(r) = self.routers.get(id) {
            return Some(r.state);
        }
        if let Some(d) = self.dbs.get(id) {
            return Some(d.state);
        }
        None
    }

    pub fn set_component_state(&mut self, id: &CompId, s: CompState) {
        if let Some(p) = self.pus.get_mut(id) {
            p.state = s;
        } else if let Some(l) = self.links.get_mut(id) {
            l.state = s;
        } else if let Some(r) = self.routers.get_mut(id) {
            r.state = s;
        } else if let Some(d) = self.dbs.get_mut(id) {
            d.state = s;
        }
    }

    /// Adjacency over operational links and routers. Routable nodes are
    /// PUs, database servers, routers and center hubs; a center's LAN is a
    /// single shared link attaching every node of the center to its hub.
    fn adjacency(&self) -> BTreeMap<&CompId, Vec<(&CompId, &CompId)>> {
        let mut adj: BTreeMap<&CompId, Vec<(&CompId, &CompId)>> = BTreeMap::new();
        for c in self.centers.values() {
            let lan_up = self
                .links
                .get(&c.lan)
                .map(|l| l.state.is_up())
                .unwrap_or(false);
            if !lan_up {
                continue;
            }
            for node in c.pus.iter().chain(c.dbs.iter()) {
                adj.entry(node).or_default().push((&c.lan, &c.id));
                adj.entry(&c.id).or_default().push((&c.lan, node));
            }
        }
        for l in self.links.values() {
            if !l.state.is_up() {
                continue;
            }
            let (a, b) = (&l.endpoints.0, &l.endpoints.1);
            // LAN links connect a center to itself; skip the self edge.
            if a == b {
                continue;
            }
            let router_down = |n: &CompId| {
                self.routers
                    .get(n)
                    .map(|r| !r.state.is_up())
                    .unwrap_or(false)
            };
            if router_down(a) || router_down(b) {
                continue;
            }
            adj.entry(a).or_default().push((&l.id, b));
            adj.entry(b).or_default().push((&l.id, a));
        }
        adj
    }

    /// Static shortest path (fewest links, ties by lexicographic link-id
    /// sequence) over operational links and routers. Consecutive hops over
    /// the same shared link (a LAN) count once.
    pub fn route(&self, src: &CompId, dst: &CompId) -> Result<Vec<CompId>, ResError> {
        self.route_full(src, dst).map(|(links, _)| links)
    }

    /// Like [`Topology::route`] but also returns the sequence of nodes
    /// visited (excluding endpoints), which fault handling needs to tell
    /// whether a crashed router sat on a transfer's path.
    pub fn route_full(
        &self,
        src: &CompId,
        dst: &CompId,
    ) -> Result<(Vec<CompId>, Vec<CompId>), ResError> {
        if !self.node_exists(src) {
            return Err(ResError::Unknown(src.0.clone()));
        }
        if !self.node_exists(dst) {
            return Err(ResError::Unknown(dst.0.clone()));
        }
        if src == dst {
            return Ok((vec![], vec![]));
        }
        let no_route = || ResError::NoRoute {
            src: src.0.clone(),
            dst: dst.0.clone(),
        };
        // Crashed endpoints are unreachable.
        for n in [src, dst] {
            if let Some(s) = self.component_state(n) {
                if !s.is_up() {
                    return Err(no_route());
                }
            }
        }
        let adj = self.adjacency();
        // Dijkstra on (path length, lexicographic link-id path).
        #[allow(clippy::type_complexity)]
        let mut heap: BinaryHeap<Reverse<(usize, Vec<CompId>, &CompId, Vec<CompId>)>> =
            BinaryHeap::new();
        let mut done: BTreeSet<&CompId> = BTreeSet::new();
        heap.push(Reverse((0, vec![], src, vec![])));
        while let Some(Reverse((len, path, node, via))) = heap.pop() {
            if node == dst {
                return Ok((collapse(path), via));
            }
            if !done.insert(node) {
                continue;
            }
            let crashed_router = self
                .routers
                .get(node)
                .map(|r| !r.state.is_up())
                .unwrap_or(false);
            if crashed_router {
                continue;
            }
            if let Some(edges) = adj.get(node) {
                for (link, next) in edges {
                    if done.contains(*next) {
                        continue;
                    }
                    let mut p = path.clone();
                    p.push((*link).clone());
                    let mut v = via.clone();
                    if node != src {
                        if v.last() != Some(node) {
                            v.push(node.clone());
                        }
                    }
                    heap.push(Reverse((len + 1, p, next, v)));
                }
            }
        }
        Err(no_route())
    }
}

fn collapse(path: Vec<CompId>) -> Vec<CompId> {
    let mut out: Vec<CompId> = Vec::with_capacity(path.len());
    for l in path {
        if out.last() != Some(&l) {
            out.push(l);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Fair-share flow-level network

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct TransferId(pub u64);

/// What a completed transfer means to the rest of the model.
#[derive(Clone, Debug, PartialEq)]
pub enum TransferCtx {
    /// DAG edge data: the child may start once all inbound edges are done.
    DagEdge { dag: String, child: JobId },
    /// Job output shipped back to the submitting center.
    JobOutput { job: JobId },
    /// Database operation request arriving at a server.
    DbRequest { op: u64 },
    Plain,
}

#[derive(Clone, Debug)]
pub struct Transfer {
    pub id: TransferId,
    pub src: CompId,
    pub dst: CompId,
    pub total_bytes: f64,
    pub remaining_bytes: f64,
    pub path: Vec<CompId>,
    /// Intermediate nodes on the path (routers, hubs); endpoints excluded.
    pub via_nodes: Vec<CompId>,
    /// Current allocated rate in bits/s; 0 while blocked.
    pub rate: f64,
    pub latency_remaining: f64,
    pub last_update: SimTime,
    pub retries_used: u32,
    pub started_at: SimTime,
    pub completion: Option<EventId>,
    pub notify: Target,
    pub ctx: TransferCtx,
    pub blocked: bool,
}

#[derive(Default)]
pub struct NetState {
    next_tid: u64,
    pub transfers: BTreeMap<TransferId, Transfer>,
    pub link_flows: BTreeMap<CompId, BTreeSet<TransferId>>,
    pub completed_durations: Vec<f64>,
    pub completed_count: u64,
    pub requested_bytes: f64,
    pub delivered_bytes: f64,
}

fn link_rate(topo: &Topology, flows: &BTreeMap<CompId, BTreeSet<TransferId>>, link: &CompId) -> f64 {
    let l = &topo.links[link];
    let n = flows.get(link).map(|s| s.len()).unwrap_or(0).max(1);
    l.capacity_bps / n as f64
}

fn transfer_rate(topo: &Topology, flows: &BTreeMap<CompId, BTreeSet<TransferId>>, path: &[CompId]) -> f64 {
    path.iter()
        .map(|l| link_rate(topo, flows, l))
        .fold(f64::INFINITY, f64::min)
}

/// Registers a flow on every link of the shortest operational path and
/// recomputes the rates of every flow it now shares a link with. The
/// completion event fires at `now + path latency + bytes*8/rate`; latency is
/// charged once per transfer.
pub fn start_transfer(
    w: &mut World,
    eng: &mut Engine<World>,
    src: &CompId,
    dst: &CompId,
    bytes: f64,
    notify: Target,
    ctx: TransferCtx,
) -> Result<TransferId, ResError> {
    assert!(bytes >= 0.0);
    let (path, via_nodes) = w.topology.route_full(src, dst)?;
    let tid = TransferId(w.net.next_tid);
    w.net.next_tid += 1;
    let latency: f64 = path.iter().map(|l| w.topology.links[l].latency_s).sum();
    let t = Transfer {
        id: tid,
        src: src.clone(),
        dst: dst.clone(),
        total_bytes: bytes,
        remaining_bytes: bytes,
        path: path.clone(),
        via_nodes,
        rate: 0.0,
        latency_remaining: latency,
        last_update: eng.now(),
        retries_used: 0,
        started_at: eng.now(),
        completion: None,
        notify,
        ctx,
        blocked: false,
    };
    w.net.requested_bytes += bytes;
    w.net.transfers.insert(tid, t);
    for l in &path {
        w.net.link_flows.entry(l.clone()).or_default().insert(tid);
    }
    recompute_flows_on(w, eng, &path);
    Ok(tid)
}

/// Advances a transfer's byte count to `now` under its current rate. Bytes
/// flow only once the one-time path latency has elapsed.
pub fn advance_to(t: &mut Transfer, now: SimTime) {
    let mut elapsed = now - t.last_update;
    t.last_update = now;
    if elapsed <= 0.0 {
        return;
    }
    if t.latency_remaining > 0.0 {
        let lat = t.latency_remaining.min(elapsed);
        t.latency_remaining -= lat;
        elapsed -= lat;
    }
    if elapsed > 0.0 && t.rate > 0.0 {
        t.remaining_bytes = (t.remaining_bytes - elapsed * t.rate / 8.0).max(0.0);
    }
}

pub fn reschedule_completion_of(w: &mut World, eng: &mut Engine<World>, tid: TransferId) {
    let t = w.net.transfers.get_mut(&tid).unwrap();
    if let Some(eid) = t.completion.take() {
        eng.cancel(eid);
    }
    if t.blocked || t.rate <= 0.0 {
        return;
    }
    let dt = t.latency_remaining + t.remaining_bytes * 8.0 / t.rate;
    let when = eng.now() + dt;
    let src = t.src.clone();
    let notify = t.notify.clone();
    let eid = eng
        .schedule(when, src, notify.clone(), EventKind::Transfer, Ev::TransferDone { transfer: tid })
        .expect("completion scheduled in past");
    if let Target::Process(pid) = notify {
        eng.rebind(pid, eid);
    }
    w.net.transfers.get_mut(&tid).unwrap().completion = Some(eid);
}

/// Re-applies the min-share rule to every flow crossing any of `links`:
/// progress is advanced under the old rate, then each completion event is
/// retracted and re-scheduled under the new rate.
pub fn recompute_flows_on(w: &mut World, eng: &mut Engine<World>, links: &[CompId]) {
    let mut affected: BTreeSet<TransferId> = BTreeSet::new();
    for l in links {
        if let Some(s) = w.net.link_flows.get(l) {
            affected.extend(s.iter().copied());
        }
    }
    let now = eng.now();
    for tid in affected {
        let new_rate = {
            let t = w.net.transfers.get(&tid).unwrap();
            if t.blocked {
                continue;
            }
            transfer_rate(&w.topology, &w.net.link_flows, &t.path)
        };
        {
            let t = w.net.transfers.get_mut(&tid).unwrap();
            advance_to(t, now);
            t.rate = new_rate;
        }
        reschedule_completion_of(w, eng, tid);
    }
}

/// Bookkeeping when a transfer's completion event fires: deregister the flow
/// and re-share the freed bandwidth. Idempotent.
pub fn transfer_completed(w: &mut World, eng: &mut Engine<World>, tid: TransferId) -> Option<Transfer> {
    let mut t = w.net.transfers.remove(&tid)?;
    advance_to(&mut t, eng.now());
    t.completion = None;
    for l in &t.path {
        if let Some(s) = w.net.link_flows.get_mut(l) {
            s.remove(&tid);
        }
    }
    w.net.completed_durations.push(eng.now() - t.started_at);
    w.net.completed_count += 1;
    w.net.delivered_bytes += t.total_bytes;
    eng.record("transfer-done", &t.src, t.dst.as_str(), format!("t{}", t.id.0));
    let path = t.path.clone();
    recompute_flows_on(w, eng, &path);
    Some(t)
}

/// Tears a transfer down without completing it (requester interrupted or
/// retries exhausted).
pub fn abort_transfer(w: &mut World, eng: &mut Engine<World>, tid: TransferId) -> Option<Transfer> {
    let t = w.net.transfers.remove(&tid)?;
    if let Some(eid) = t.completion {
        eng.cancel(eid);
    }
    for l in &t.path {
        if let Some(s) = w.net.link_flows.get_mut(l) {
            s.remove(&tid);
        }
    }
    let path = t.path.clone();
    recompute_flows_on(w, eng, &path);
    Some(t)
}

// ---------------------------------------------------------------------------
// CPU model: space-shared slots at full per-slot power.

/// Occupies a slot on `pu` and schedules the completion of `work` work units
/// at `now + work / power`. Returns the completion event id.
pub fn cpu_completion_delay(pu: &ProcessingUnit, work: f64) -> f64 {
    work / pu.power
}

pub fn check_slot(pu: &ProcessingUnit) -> Result<(), ResError> {
    if !pu.state.is_up() {
        return Err(ResError::PuDown(pu.id.0.clone()));
    }
    if pu.running.len() as u32 >= pu.slots {
        return Err(ResError::NoSlot(pu.id.0.clone()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn center(topo: &mut Topology, name: &str, pus: &[&str]) {
        let lan = CompId::new(format!("lan.{name}"));
        topo.links.insert(
            lan.clone(),
            Link {
                id: lan.clone(),
                endpoints: (CompId::new(name), CompId::new(name)),
                capacity_bps: 1e9,
                latency_s: 0.0,
                state: CompState::Operational,
                loss_fraction: 0.0,
            },
        );
        let mut ids = vec![];
        for p in pus {
            let id = CompId::new(*p);
            topo.pus.insert(
                id.clone(),
                ProcessingUnit {
                    id: id.clone(),
                    center: CompId::new(name),
                    power: 1.0,
                    slots: 1,
                    vo: None,
                    state: CompState::Operational,
                    running: BTreeSet::new(),
                    backlog: vec![],
                },
            );
            ids.push(id);
        }
        topo.centers.insert(
            CompId::new(name),
            RegionalCenter {
                id: CompId::new(name),
                pus: ids,
                dbs: vec![],
                lan,
            },
        );
    }

    fn wan(topo: &mut Topology, id: &str, a: &str, b: &str) {
        topo.links.insert(
            CompId::new(id),
            Link {
                id: CompId::new(id),
                endpoints: (CompId::new(a), CompId::new(b)),
                capacity_bps: 1e9,
                latency_s: 0.0,
                state: CompState::Operational,
                loss_fraction: 0.0,
            },
        );
    }

    fn four_centers() -> Topology {
        let mut topo = Topology::default();
        for (c, pus) in [
            ("c1", ["c1.pu1", "c1.pu2"]),
            ("c2", ["c2.pu1", "c2.pu2"]),
            ("c3", ["c3.pu1", "c3.pu2"]),
            ("c4", ["c4.pu1", "c4.pu2"]),
        ] {
            center(&mut topo, c, &pus);
        }
        for r in ["r1", "r2"] {
            topo.routers.insert(
                CompId::new(r),
                Router {
                    id: CompId::new(r),
                    state: CompState::Operational,
                },
            );
        }
        wan(&mut topo, "wan.c1r1", "c1", "r1");
        wan(&mut topo, "wan.c2r1", "c2", "r1");
        wan(&mut topo, "wan.c3r2", "c3", "r2");
        wan(&mut topo, "wan.c4r2", "c4", "r2");
        wan(&mut topo, "wan.r1r2", "r1", "r2");
        topo
    }

    #[test]
    fn intra_center_route_is_single_lan_link() {
        let topo = four_centers();
        let p = topo.route(&CompId::new("c1.pu1"), &CompId::new("c1.pu2")).unwrap();
        assert_eq!(p, vec![CompId::new("lan.c1")]);
    }

    #[test]
    fn inter_center_route_crosses_a_router() {
        let topo = four_centers();
        for (a, b) in [("c1.pu1", "c2.pu1"), ("c1.pu1", "c3.pu1"), ("c2.pu1", "c4.pu1")] {
            let p = topo.route(&CompId::new(a), &CompId::new(b)).unwrap();
            let crosses_router = p.iter().any(|l| l.as_str().starts_with("wan."));
            assert!(crosses_router, "{a}->{b}: {p:?}");
        }
    }

    #[test]
    fn crashed_router_blocks_route() {
        let mut topo = four_centers();
        topo.routers.get_mut(&CompId::new("r2")).unwrap().state = CompState::Crashed;
        let err = topo
            .route(&CompId::new("c1.pu1"), &CompId::new("c3.pu1"))
            .unwrap_err();
        assert!(matches!(err, ResError::NoRoute { .. }));
        // Intra-router-domain routes still work.
        assert!(topo.route(&CompId::new("c1.pu1"), &CompId::new("c2.pu1")).is_ok());
    }

    #[test]
    fn route_ties_break_lexicographically() {
        // Two parallel links between the same hubs: the lexicographically
        // smaller id wins.
        let mut topo = Topology::default();
        center(&mut topo, "a", &["a.pu"]);
        center(&mut topo, "b", &["b.pu"]);
        wan(&mut topo, "wan.z", "a", "b");
        wan(&mut topo, "wan.a", "a", "b");
        let p = topo.route(&CompId::new("a.pu"), &CompId::new("b.pu")).unwrap();
        assert_eq!(
            p,
            vec![CompId::new("lan.a"), CompId::new("wan.a"), CompId::new("lan.b")]
        );
    }

    #[test]
    fn db_service_time_closed_form() {
        let db = DatabaseServer {
            id: CompId::new("db1"),
            center: CompId::new("c1"),
            base_latency_s: 0.01,
            throughput_bps: 1e8,
            state: CompState::Operational,
            is_storage: false,
        };
        assert!((db.service_time(1e6) - 0.02).abs() < 1e-12);
        assert_eq!(db.service_time(0.0), 0.01);
    }
}
