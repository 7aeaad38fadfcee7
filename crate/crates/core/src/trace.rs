//! Append-only event trace and its JSONL wire format.
//!
//! Every metric the harness reports is a pure function of this trace, so the
//! serialization must be byte-stable: lines are emitted by hand with a fixed
//! field order, and floats are printed with 17 significant digits, which
//! round-trips 64-bit values exactly. Parsing accepts any valid JSON via
//! serde, so hand-edited or foreign traces replay as well.

use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::smmu::Location;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("malformed trace at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("trace i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

/// Formats a float with 17 significant digits; parsing the result recovers
/// the identical 64-bit value.
pub fn fmt_f64(value: f64) -> String {
    format!("{value:.16e}")
}

/// One simulation event, stamped with the logical tick it occurred at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "snake_case")]
pub enum TraceEvent {
    /// A token emitted by a reasoning thread.
    Token { thread: u32, tick: u64, token: u64 },
    /// An interrupt was raised.
    Irq { thread: u32, tick: u64, id: u8 },
    /// A queued interrupt was handed to its handler.
    Dispatch { thread: u32, tick: u64, id: u8 },
    /// The active slice was saved ahead of a tool call.
    Store { thread: u32, tick: u64, slice: u64, hash: u64 },
    /// The saved slice was brought back after the tool call.
    Reload { thread: u32, tick: u64, slice: u64, hash: u64 },
    /// Tool output re-coded and accepted against the active schema.
    AlignOk { thread: u32, tick: u64, hash: u64, cosine: f64 },
    /// Tool output rejected by the alignment check.
    AlignErr { thread: u32, tick: u64, hash: u64, cosine: f64 },
    /// A blocked thread resumed stable execution.
    Resume { thread: u32, tick: u64 },
    /// A slice moved down the memory hierarchy.
    Evict { hash: u64, tick: u64, from: Location, to: Location },
    /// A slice was accessed / promoted into L1.
    PageIn { hash: u64, tick: u64, from: Location, to: Location },
    /// A token run was finalized into a new slice.
    Slice { hash: u64, tick: u64, id: u64, tokens: u64, thread: u32 },
    /// An access to an unknown hash, signalled rather than crashed.
    Fault { tick: u64, hash: u64 },
    /// A cognitive sync pulse across all agents.
    Csp { tick: u64, agents: u32, conflicts: u64 },
    /// Scheduler handed the kernel to another thread.
    Switch { tick: u64, from: Option<u32>, to: u32, penalty: u64 },
    /// All threads blocked on devices; the clock idled forward.
    Idle { tick: u64, ticks: u64 },
    /// Drift evaluation window closed.
    Window { tick: u64, sup: f64, eps_max: f64 },
    /// End of run; `tick` is the total consumed budget.
    End { tick: u64 },
}

impl TraceEvent {
    pub fn tick(&self) -> u64 {
        match self {
            TraceEvent::Token { tick, .. }
            | TraceEvent::Irq { tick, .. }
            | TraceEvent::Dispatch { tick, .. }
            | TraceEvent::Store { tick, .. }
            | TraceEvent::Reload { tick, .. }
            | TraceEvent::AlignOk { tick, .. }
            | TraceEvent::AlignErr { tick, .. }
            | TraceEvent::Resume { tick, .. }
            | TraceEvent::Evict { tick, .. }
            | TraceEvent::PageIn { tick, .. }
            | TraceEvent::Slice { tick, .. }
            | TraceEvent::Fault { tick, .. }
            | TraceEvent::Csp { tick, .. }
            | TraceEvent::Switch { tick, .. }
            | TraceEvent::Idle { tick, .. }
            | TraceEvent::Window { tick, .. }
            | TraceEvent::End { tick } => *tick,
        }
    }

    /// Serializes the event as one JSON line with a fixed field order.
    pub fn to_json_line(&self) -> String {
        let mut s = String::with_capacity(96);
        match self {
            TraceEvent::Token { thread, tick, token } => {
                let _ = write!(s, r#"{{"ev":"token","thread":{thread},"tick":{tick},"token":{token}}}"#);
            }
            TraceEvent::Irq { thread, tick, id } => {
                let _ = write!(s, r#"{{"ev":"irq","thread":{thread},"tick":{tick},"id":{id}}}"#);
            }
            TraceEvent::Dispatch { thread, tick, id } => {
                let _ = write!(s, r#"{{"ev":"dispatch","thread":{thread},"tick":{tick},"id":{id}}}"#);
            }
            TraceEvent::Store { thread, tick, slice, hash } => {
                let _ = write!(
                    s,
                    r#"{{"ev":"store","thread":{thread},"tick":{tick},"slice":{slice},"hash":{hash}}}"#
                );
            }
            TraceEvent::Reload { thread, tick, slice, hash } => {
                let _ = write!(
                    s,
                    r#"{{"ev":"reload","thread":{thread},"tick":{tick},"slice":{slice},"hash":{hash}}}"#
                );
            }
            TraceEvent::AlignOk { thread, tick, hash, cosine } => {
                let _ = write!(
                    s,
                    r#"{{"ev":"align_ok","thread":{thread},"tick":{tick},"hash":{hash},"cosine":{}}}"#,
                    fmt_f64(*cosine)
                );
            }
            TraceEvent::AlignErr { thread, tick, hash, cosine } => {
                let _ = write!(
                    s,
                    r#"{{"ev":"align_err","thread":{thread},"tick":{tick},"hash":{hash},"cosine":{}}}"#,
                    fmt_f64(*cosine)
                );
            }
            TraceEvent::Resume { thread, tick } => {
                let _ = write!(s, r#"{{"ev":"resume","thread":{thread},"tick":{tick}}}"#);
            }
            TraceEvent::Evict { hash, tick, from, to } => {
                let _ = write!(
                    s,
                    r#"{{"ev":"evict","hash":{hash},"tick":{tick},"from":"{}","to":"{}"}}"#,
                    from.as_str(),
                    to.as_str()
                );
            }
            TraceEvent::PageIn { hash, tick, from, to } => {
                let _ = write!(
                    s,
                    r#"{{"ev":"page_in","hash":{hash},"tick":{tick},"from":"{}","to":"{}"}}"#,
                    from.as_str(),
                    to.as_str()
                );
            }
            TraceEvent::Slice { hash, tick, id, tokens, thread } => {
                let _ = write!(
                    s,
                    r#"{{"ev":"slice","hash":{hash},"tick":{tick},"id":{id},"tokens":{tokens},"thread":{thread}}}"#
                );
            }
            TraceEvent::Fault { tick, hash } => {
                let _ = write!(s, r#"{{"ev":"fault","tick":{tick},"hash":{hash}}}"#);
            }
            TraceEvent::Csp { tick, agents, conflicts } => {
                let _ = write!(
                    s,
                    r#"{{"ev":"csp","tick":{tick},"agents":{agents},"conflicts":{conflicts}}}"#
                );
            }
            TraceEvent::Switch { tick, from, to, penalty } => {
                let _ = write!(s, r#"{{"ev":"switch","tick":{tick},"from":"#);
                match from {
                    Some(f) => {
                        let _ = write!(s, "{f}");
                    }
                    None => s.push_str("null"),
                }
                let _ = write!(s, r#","to":{to},"penalty":{penalty}}}"#);
            }
            TraceEvent::Idle { tick, ticks } => {
                let _ = write!(s, r#"{{"ev":"idle","tick":{tick},"ticks":{ticks}}}"#);
            }
            TraceEvent::Window { tick, sup, eps_max } => {
                let _ = write!(
                    s,
                    r#"{{"ev":"window","tick":{tick},"sup":{},"eps_max":{}}}"#,
                    fmt_f64(*sup),
                    fmt_f64(*eps_max)
                );
            }
            TraceEvent::End { tick } => {
                let _ = write!(s, r#"{{"ev":"end","tick":{tick}}}"#);
            }
        }
        s
    }
}

/// Append-only log of simulation events in logical-time order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventTrace {
    events: Vec<TraceEvent>,
}

impl EventTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, event: TraceEvent) {
        self.events.push(event);
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TraceEvent> {
        self.events.iter()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for event in &self.events {
            out.push_str(&event.to_json_line());
            out.push('\n');
        }
        out
    }

    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, TraceError> {
        let mut events = Vec::new();
        for (index, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let event: TraceEvent =
                serde_json::from_str(&line).map_err(|e| TraceError::Malformed {
                    line: index + 1,
                    message: e.to_string(),
                })?;
            events.push(event);
        }
        Ok(Self { events })
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TraceError> {
        Self::from_reader(text.as_bytes())
    }
}

impl FromIterator<TraceEvent> for EventTrace {
    fn from_iter<T: IntoIterator<Item = TraceEvent>>(iter: T) -> Self {
        Self {
            events: iter.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_events() -> Vec<TraceEvent> {
        vec![
            TraceEvent::Token { thread: 1, tick: 5, token: u64::MAX },
            TraceEvent::Irq { thread: 1, tick: 6, id: 0x01 },
            TraceEvent::Dispatch { thread: 1, tick: 6, id: 0x01 },
            TraceEvent::Store { thread: 1, tick: 6, slice: 3, hash: 0xabcdef },
            TraceEvent::Reload { thread: 1, tick: 9, slice: 3, hash: 0xabcdef },
            TraceEvent::AlignOk { thread: 1, tick: 8, hash: 7, cosine: 0.75 },
            TraceEvent::AlignErr { thread: 1, tick: 8, hash: 7, cosine: -0.25 },
            TraceEvent::Resume { thread: 1, tick: 10 },
            TraceEvent::Evict { hash: 9, tick: 4, from: Location::L1, to: Location::L2 },
            TraceEvent::PageIn { hash: 9, tick: 5, from: Location::L2, to: Location::L1 },
            TraceEvent::Slice { hash: 11, tick: 3, id: 0, tokens: 7, thread: 0 },
            TraceEvent::Fault { tick: 2, hash: 0xdead },
            TraceEvent::Csp { tick: 50, agents: 4, conflicts: 1 },
            TraceEvent::Switch { tick: 20, from: None, to: 1, penalty: 0 },
            TraceEvent::Switch { tick: 30, from: Some(1), to: 2, penalty: 4 },
            TraceEvent::Idle { tick: 40, ticks: 3 },
            TraceEvent::Window { tick: 100, sup: 1.5, eps_max: 8.0 },
            TraceEvent::End { tick: 200 },
        ]
    }

    #[test]
    fn every_variant_round_trips_through_jsonl() {
        let trace: EventTrace = sample_events().into_iter().collect();
        let text = trace.to_jsonl();
        let parsed = EventTrace::from_jsonl(&text).unwrap();
        assert_eq!(parsed, trace);
    }

    #[test]
    fn emission_is_byte_stable() {
        let trace: EventTrace = sample_events().into_iter().collect();
        assert_eq!(trace.to_jsonl(), trace.to_jsonl());
        let line = TraceEvent::Csp { tick: 50, agents: 4, conflicts: 1 }.to_json_line();
        assert_eq!(line, r#"{"ev":"csp","tick":50,"agents":4,"conflicts":1}"#);
    }

    #[test]
    fn float_format_round_trips_exactly() {
        for v in [0.1, 1.0 / 3.0, 2.0_f64.sqrt(), 1e-300, 123456.789_f64, 0.0] {
            let s = fmt_f64(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{s} did not round-trip");
        }
    }

    #[test]
    fn truncated_line_reports_line_number() {
        let good = TraceEvent::End { tick: 1 }.to_json_line();
        let text = format!("{good}\n{{\"ev\":\"tok");
        let err = EventTrace::from_jsonl(&text).unwrap_err();
        match err {
            TraceError::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn blank_lines_are_ignored() {
        let text = format!("\n{}\n\n", TraceEvent::End { tick: 3 }.to_json_line());
        let trace = EventTrace::from_jsonl(&text).unwrap();
        assert_eq!(trace.len(), 1);
    }
}
