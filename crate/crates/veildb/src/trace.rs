//! Untrusted-memory access traces.
//!
//! Every block read or write against a region appends one event to the
//! engine's trace. The trace is the artifact the verification harness works
//! with: two runs are considered access-pattern equivalent when their traces
//! agree event for event in (region, op, address). Sequence numbers are
//! ordinal and excluded from comparison; they exist so exported traces can
//! name a divergence point.
//!
//! Export format, one record per line, bit-exact so external tools can diff
//! trace files: `seq region op address` where `op` is `R` or `W` and the
//! numeric fields are unpadded decimal, separated by single spaces.

use crate::error::{EngineError, Result};
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Read,
    Write,
}

impl Op {
    fn letter(self) -> char {
        match self {
            Op::Read => 'R',
            Op::Write => 'W',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessEvent {
    pub seq: u64,
    pub region: u32,
    pub op: Op,
    pub address: u64,
}

/// Recorder owned by one engine. `seq` is global and monotone for the life
/// of the engine; draining events does not reset it.
#[derive(Debug, Default)]
pub struct Trace {
    events: Vec<AccessEvent>,
    next_seq: u64,
    marks: Vec<(u64, String)>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, region: u32, op: Op, address: u64) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.events.push(AccessEvent {
            seq,
            region,
            op,
            address,
        });
    }

    /// Next sequence number to be assigned; equals the count of events ever
    /// recorded.
    pub fn seq(&self) -> u64 {
        self.next_seq
    }

    pub fn events(&self) -> &[AccessEvent] {
        &self.events
    }

    /// Drain buffered events, leaving the sequence counter running.
    pub fn take(&mut self) -> Vec<AccessEvent> {
        self.marks.clear();
        std::mem::take(&mut self.events)
    }

    /// Drop a named marker at the current position. Markers label plan
    /// phases in reports; they are not part of the exported event stream and
    /// must only ever carry size- and plan-dependent labels.
    pub fn mark(&mut self, label: impl Into<String>) {
        self.marks.push((self.next_seq, label.into()));
    }

    pub fn marks(&self) -> &[(u64, String)] {
        &self.marks
    }
}

/// Outcome of comparing two traces on (region, op, address) per position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceDiff {
    Equal,
    /// Position (0-based) of the first divergent event; if one trace is a
    /// prefix of the other, this is the shorter trace's length.
    FirstDivergence(u64),
}

pub fn trace_diff(a: &[AccessEvent], b: &[AccessEvent]) -> TraceDiff {
    let n = a.len().min(b.len());
    for i in 0..n {
        let (x, y) = (a[i], b[i]);
        if x.region != y.region || x.op != y.op || x.address != y.address {
            return TraceDiff::FirstDivergence(i as u64);
        }
    }
    if a.len() != b.len() {
        return TraceDiff::FirstDivergence(n as u64);
    }
    TraceDiff::Equal
}

pub fn export(events: &[AccessEvent]) -> String {
    let mut out = String::with_capacity(events.len() * 16);
    for e in events {
        writeln!(out, "{} {} {} {}", e.seq, e.region, e.op.letter(), e.address).unwrap();
    }
    out
}

/// Parse the export format. Strict: exactly four space-separated fields per
/// non-empty line, no padding, `R`/`W` ops.
pub fn parse(text: &str) -> Result<Vec<AccessEvent>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(' ');
        let mut next = |what: &str| {
            fields
                .next()
                .ok_or_else(|| EngineError::TraceFormat(format!("line {}: missing {what}", lineno + 1)))
        };
        let seq = parse_u64(next("seq")?, lineno)?;
        let region = parse_u64(next("region")?, lineno)?;
        let op = match next("op")? {
            "R" => Op::Read,
            "W" => Op::Write,
            other => {
                return Err(EngineError::TraceFormat(format!(
                    "line {}: bad op {other:?}",
                    lineno + 1
                )))
            }
        };
        let address = parse_u64(next("address")?, lineno)?;
        if fields.next().is_some() {
            return Err(EngineError::TraceFormat(format!(
                "line {}: trailing fields",
                lineno + 1
            )));
        }
        let region = u32::try_from(region)
            .map_err(|_| EngineError::TraceFormat(format!("line {}: region too large", lineno + 1)))?;
        out.push(AccessEvent {
            seq,
            region,
            op,
            address,
        });
    }
    Ok(out)
}

fn parse_u64(s: &str, lineno: usize) -> Result<u64> {
    if s.is_empty() || (s.len() > 1 && s.starts_with('0')) || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(EngineError::TraceFormat(format!(
            "line {}: bad number {s:?}",
            lineno + 1
        )));
    }
    s.parse::<u64>()
        .map_err(|e| EngineError::TraceFormat(format!("line {}: {e}", lineno + 1)))
}
