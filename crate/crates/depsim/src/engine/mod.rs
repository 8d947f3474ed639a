//! Deterministic discrete-event core: simulation clock, future event queue,
//! resumable simulation processes with interrupts, seeded random substreams,
//! and the execution trace.

mod core;
mod event;
mod rng;
mod time;
mod trace;

pub use core::{Behavior, Engine, ProcState, RunStats, Suspend, System, TraceInfo, Wake};
pub use event::{CompId, Event, EventId, EventKind, ProcessId, Target};
pub use rng::{Dist, SeededRng};
pub use time::{fmt_sig9, SimTime};
pub use trace::{Trace, TraceRow};

use thiserror::Error;

#[derive(Error, Debug, PartialEq)]
pub enum EngineError {
    #[error("cannot schedule at t={requested} before clock t={clock}")]
    PastTime { requested: f64, clock: f64 },
    #[error("owner component `{0}` is down")]
    OwnerDown(String),
    #[error("invalid distribution parameters: {0}")]
    BadParams(String),
}
