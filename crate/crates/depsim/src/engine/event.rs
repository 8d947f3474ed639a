use std::fmt;

use super::SimTime;

/// Stable identifier of a simulated component (processing unit, link,
/// router, database server, scheduler, regional center, ...).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct CompId(pub String);

impl CompId {
    pub fn new(s: impl Into<String>) -> CompId {
        CompId(s.into())
    }
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CompId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for CompId {
    fn from(s: &str) -> CompId {
        CompId(s.to_string())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct EventId(pub u64);

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct ProcessId(pub u64);

/// Where an event is delivered: a component (handled by the system's
/// dispatch) or a simulation process blocked on it.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Target {
    Component(CompId),
    Process(ProcessId),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Component(c) => f.write_str(c.as_str()),
            Target::Process(p) => write!(f, "proc:{}", p.0),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum EventKind {
    Completion,
    Transfer,
    Fault,
    Recovery,
    Timeout,
    Notify,
    Arrival,
    Interrupt,
    User(&'static str),
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Completion => "completion",
            EventKind::Transfer => "transfer",
            EventKind::Fault => "fault",
            EventKind::Recovery => "recovery",
            EventKind::Timeout => "timeout",
            EventKind::Notify => "notify",
            EventKind::Arrival => "arrival",
            EventKind::Interrupt => "interrupt",
            EventKind::User(s) => s,
        }
    }
}

/// One scheduled occurrence. `(time, seq)` is a strict total order over all
/// events of a run; `seq` doubles as the event id.
#[derive(Clone, Debug)]
pub struct Event<P> {
    pub id: EventId,
    pub time: SimTime,
    pub source: CompId,
    pub target: Target,
    pub kind: EventKind,
    pub payload: P,
}
