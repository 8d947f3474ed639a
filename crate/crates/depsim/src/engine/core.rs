use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use super::event::{CompId, Event, EventId, EventKind, ProcessId, Target};
use super::trace::{Trace, TraceRow};
use super::{EngineError, SimTime};

/// Implemented by the simulated system driven by an [`Engine`]. The engine
/// owns time and causality; the system owns all domain state and reacts to
/// delivered events.
pub trait System: Sized {
    type Payload: Clone + TraceInfo;

    fn handle(&mut self, eng: &mut Engine<Self>, ev: &Event<Self::Payload>);

    /// Whether a component can own new processes. Crashed owners reject
    /// spawns.
    fn is_operational(&self, _comp: &CompId) -> bool {
        true
    }
}

/// Short human-readable description of a payload for the trace `info` column.
pub trait TraceInfo {
    fn trace_info(&self) -> String;
}

impl TraceInfo for () {
    fn trace_info(&self) -> String {
        String::new()
    }
}

impl TraceInfo for String {
    fn trace_info(&self) -> String {
        self.clone()
    }
}

/// What a resumed process observes.
pub enum Wake<P> {
    Start,
    Event(Event<P>),
    Interrupted(String),
}

/// What a process behavior returns: block on an event or finish.
pub enum Suspend {
    Await(EventId),
    Terminate,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ProcState {
    Running,
    Blocked,
    Terminated,
}

pub type Behavior<S> =
    Box<dyn FnMut(&mut S, &mut Engine<S>, ProcessId, Wake<<S as System>::Payload>) -> Suspend>;

struct ProcessSlot<S: System> {
    owner: CompId,
    state: ProcState,
    blocked_on: Option<EventId>,
    // Set while the behavior is executing and an interrupt arrives.
    pending_interrupt: Option<String>,
    behavior: Option<Behavior<S>>,
}

struct QueueEntry<P> {
    event: Event<P>,
}

impl<P> PartialEq for QueueEntry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.event.id == other.event.id
    }
}
impl<P> Eq for QueueEntry<P> {}
impl<P> PartialOrd for QueueEntry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for QueueEntry<P> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Min-heap on (time, seq) via Reverse at the call sites.
        (self.event.time, self.event.id).cmp(&(other.event.time, other.event.id))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunStats {
    pub events_processed: u64,
    pub final_time: SimTime,
}

/// Deterministic discrete-event core: clock, future event queue, resumable
/// processes with interrupts, and the execution trace.
pub struct Engine<S: System> {
    clock: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Reverse<QueueEntry<S::Payload>>>,
    cancelled: BTreeSet<EventId>,
    fired: BTreeSet<EventId>,
    processes: BTreeMap<ProcessId, ProcessSlot<S>>,
    next_pid: u64,
    trace: Trace,
    current_seq: u64,
    root_seed: u64,
    events_processed: u64,
}

impl<S: System> Engine<S> {
    pub fn new(root_seed: u64) -> Engine<S> {
        Engine {
            clock: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            cancelled: BTreeSet::new(),
            fired: BTreeSet::new(),
            processes: BTreeMap::new(),
            next_pid: 0,
            trace: Trace::default(),
            current_seq: 0,
            root_seed,
            events_processed: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.clock
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    /// Enqueues an event. `(time, seq)` ordering guarantees that two events
    /// scheduled for the same instant execute in scheduling order.
    pub fn schedule(
        &mut self,
        time: SimTime,
        source: CompId,
        target: Target,
        kind: EventKind,
        payload: S::Payload,
    ) -> Result<EventId, EngineError> {
        if time < self.clock {
            return Err(EngineError::PastTime {
                requested: time.seconds(),
                clock: self.clock.seconds(),
            });
        }
        let id = EventId(self.next_seq);
        self.next_seq += 1;
        self.queue.push(Reverse(QueueEntry {
            event: Event {
                id,
                time,
                source,
                target,
                kind,
                payload,
            },
        }));
        Ok(id)
    }

    /// Retracts an event. Returns true iff the event existed and had not
    /// fired; a cancelled event never executes and never appears in the
    /// trace.
    pub fn cancel(&mut self, id: EventId) -> bool {
        if id.0 >= self.next_seq || self.fired.contains(&id) {
            return false;
        }
        self.cancelled.insert(id)
    }

    /// Appends a module-level record to the trace, attributed to the event
    /// currently executing.
    pub fn record(&mut self, kind: &str, source: &CompId, target: &str, info: impl Into<String>) {
        self.trace.push(TraceRow {
            seq: self.current_seq,
            time: self.clock,
            kind: kind.to_string(),
            source: source.0.clone(),
            target: target.to_string(),
            info: info.into(),
        });
    }

    /// Creates a process owned by `comp` and runs its behavior to the first
    /// suspension.
    pub fn spawn(
        &mut self,
        sys: &mut S,
        owner: CompId,
        behavior: Behavior<S>,
    ) -> Result<ProcessId, EngineError> {
        if !sys.is_operational(&owner) {
            return Err(EngineError::OwnerDown(owner.0));
        }
        let pid = ProcessId(self.next_pid);
        self.next_pid += 1;
        self.processes.insert(
            pid,
            ProcessSlot {
                owner,
                state: ProcState::Running,
                blocked_on: None,
                pending_interrupt: None,
                behavior: None,
            },
        );
        self.resume(sys, pid, Some(behavior), Wake::Start);
        Ok(pid)
    }

    pub fn process_state(&self, pid: ProcessId) -> Option<ProcState> {
        self.processes.get(&pid).map(|p| p.state)
    }

    pub fn process_owner(&self, pid: ProcessId) -> Option<&CompId> {
        self.processes.get(&pid).map(|p| &p.owner)
    }

    /// Forces a blocked process to resume with `reason` instead of its
    /// awaited event; the awaited event is cancelled. Terminated processes
    /// are unaffected. Only the first interrupt before a resume is
    /// observed; later ones are recorded in the trace and dropped.
    pub fn interrupt(&mut self, sys: &mut S, pid: ProcessId, reason: &str) {
        let Some(slot) = self.processes.get_mut(&pid) else {
            return;
        };
        match slot.state {
            ProcState::Terminated => {}
            ProcState::Running => {
                // Behavior is mid-execution (re-entrant interrupt); queue it.
                if slot.pending_interrupt.is_none() {
                    slot.pending_interrupt = Some(reason.to_string());
                } else {
                    let owner = slot.owner.clone();
                    self.record("interrupt-dropped", &owner, &format!("proc:{}", pid.0), reason);
                }
            }
            ProcState::Blocked => {
                if let Some(eid) = slot.blocked_on.take() {
                    self.cancel(eid);
                }
                let owner = self.processes[&pid].owner.clone();
                self.record("interrupt", &owner, &format!("proc:{}", pid.0), reason);
                self.resume(sys, pid, None, Wake::Interrupted(reason.to_string()));
            }
        }
    }

    /// Replaces the event a blocked process is waiting on. Used when a
    /// pending completion is retracted and re-scheduled (fair-share rate
    /// changes); the old event must already be cancelled by the caller.
    pub fn rebind(&mut self, pid: ProcessId, new_event: EventId) {
        if let Some(slot) = self.processes.get_mut(&pid) {
            if slot.state == ProcState::Blocked {
                slot.blocked_on = Some(new_event);
            }
        }
    }

    fn resume(&mut self, sys: &mut S, pid: ProcessId, fresh: Option<Behavior<S>>, wake: Wake<S::Payload>) {
        let mut behavior = match fresh {
            Some(b) => b,
            None => {
                let slot = self.processes.get_mut(&pid).expect("resume of unknown process");
                slot.state = ProcState::Running;
                slot.blocked_on = None;
                slot.behavior.take().expect("resume without behavior")
            }
        };
        let mut wake = wake;
        loop {
            let step = behavior(sys, self, pid, wake);
            let slot = self.processes.get_mut(&pid).expect("process vanished");
            match step {
                Suspend::Terminate => {
                    slot.state = ProcState::Terminated;
                    slot.behavior = None;
                    slot.blocked_on = None;
                    return;
                }
                Suspend::Await(eid) => {
                    if let Some(reason) = slot.pending_interrupt.take() {
                        // An interrupt arrived while the behavior ran; it
                        // wins over the event the process tried to await.
                        self.cancel(eid);
                        wake = Wake::Interrupted(reason);
                        continue;
                    }
                    slot.state = ProcState::Blocked;
                    slot.blocked_on = Some(eid);
                    slot.behavior = Some(behavior);
                    return;
                }
            }
        }
    }

    /// Executes all events with `time <= t_end` in `(time, seq)` order.
    pub fn run_until(&mut self, sys: &mut S, t_end: SimTime) -> RunStats {
        assert!(t_end >= self.clock, "run_until into the past");
        let mut processed = 0u64;
        loop {
            // Drop cancelled entries lazily.
            while let Some(Reverse(entry)) = self.queue.peek() {
                if self.cancelled.contains(&entry.event.id) {
                    let Reverse(entry) = self.queue.pop().unwrap();
                    self.cancelled.remove(&entry.event.id);
                } else {
                    break;
                }
            }
            let Some(Reverse(entry)) = self.queue.peek() else {
                break;
            };
            if entry.event.time > t_end {
                self.clock = t_end;
                self.events_processed += processed;
                return RunStats {
                    events_processed: processed,
                    final_time: self.clock,
                };
            }
            let Reverse(QueueEntry { event }) = self.queue.pop().unwrap();
            debug_assert!(event.time >= self.clock, "clock would go backwards");
            self.clock = event.time;
            self.fired.insert(event.id);
            self.current_seq = event.id.0;
            self.trace.push(TraceRow {
                seq: event.id.0,
                time: event.time,
                kind: event.kind.as_str().to_string(),
                source: event.source.0.clone(),
                target: event.target.to_string(),
                info: event.payload.trace_info(),
            });
            processed += 1;
            match &event.target {
                Target::Process(pid) => {
                    let pid = *pid;
                    let deliver_to_proc = self
                        .processes
                        .get(&pid)
                        .map(|p| p.state == ProcState::Blocked && p.blocked_on == Some(event.id))
                        .unwrap_or(false);
                    if deliver_to_proc {
                        self.resume(sys, pid, None, Wake::Event(event));
                    } else {
                        sys.handle(self, &event);
                    }
                }
                Target::Component(_) => sys.handle(self, &event),
            }
        }
        // Queue drained: the clock still advances to the requested time so
        // callers can interleave run_until with direct model calls.
        self.clock = t_end;
        self.events_processed += processed;
        RunStats {
            events_processed: processed,
            final_time: self.clock,
        }
    }

    pub fn events_processed(&self) -> u64 {
        self.events_processed
    }
}
