use std::io::{self, Write};

use super::time::fmt_sig9;
use super::SimTime;

/// One row of the execution trace. `seq` is the id of the event whose
/// execution produced the row; module-level records emitted while an event
/// executes share its seq and follow it in row order.
#[derive(Clone, Debug)]
pub struct TraceRow {
    pub seq: u64,
    pub time: SimTime,
    pub kind: String,
    pub source: String,
    pub target: String,
    pub info: String,
}

#[derive(Default)]
pub struct Trace {
    rows: Vec<TraceRow>,
}

impl Trace {
    pub fn push(&mut self, row: TraceRow) {
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    /// Writes the trace as CSV: header `seq,time,kind,source,target,info`,
    /// times with exactly 9 significant digits, LF line endings. Bit-exact
    /// across runs of the same (scenario, seed).
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(b"seq,time,kind,source,target,info\n")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.seq,
                fmt_sig9(r.time.seconds()),
                sanitize(&r.kind),
                sanitize(&r.source),
                sanitize(&r.target),
                sanitize(&r.info)
            )?;
        }
        Ok(())
    }
}

// Field values never legitimately contain commas or newlines; replace them
// so a malformed id cannot break the CSV structure.
fn sanitize(s: &str) -> String {
    if s.contains([',', '\n', '\r']) {
        s.replace([',', '\n', '\r'], ";")
    } else {
        s.to_string()
    }
}
