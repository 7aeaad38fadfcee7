//! Metric reports. Every field is a pure function of the event trace, so a
//! replayed JSONL file reproduces the live report exactly.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::kernel::SIG_TOOL_INVOKE;
use crate::trace::{fmt_f64, EventTrace, TraceError, TraceEvent};

/// System-level metrics of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Information-gain tokens over processed tokens; 0 when nothing ran.
    pub eta: f64,
    /// Mean ticks from a tool interrupt to the thread's resume.
    pub mean_cognitive_latency: f64,
    /// Fraction of evaluation windows whose drift supremum stayed below the
    /// coherence bound; 1 when no window closed.
    pub gamma: f64,
    pub pulse_count: u64,
    pub conflict_count: u64,
    /// Switch penalties and idle ticks over the total consumed budget.
    pub overhead_fraction: f64,
    pub tokens_processed: u64,
    pub gain_tokens: u64,
}

impl MetricsReport {
    /// Stable JSON rendering with 17-significant-digit floats.
    pub fn to_json(&self) -> String {
        format!(
            concat!(
                "{{\"eta\":{},\"mean_cognitive_latency\":{},\"gamma\":{},",
                "\"pulse_count\":{},\"conflict_count\":{},\"overhead_fraction\":{},",
                "\"tokens_processed\":{},\"gain_tokens\":{}}}"
            ),
            fmt_f64(self.eta),
            fmt_f64(self.mean_cognitive_latency),
            fmt_f64(self.gamma),
            self.pulse_count,
            self.conflict_count,
            fmt_f64(self.overhead_fraction),
            self.tokens_processed,
            self.gain_tokens,
        )
    }
}

/// Derives the full report from a trace.
pub fn compute_metrics(trace: &EventTrace) -> MetricsReport {
    let mut slice_sizes: BTreeMap<u64, u64> = BTreeMap::new();
    let mut gained: BTreeSet<u64> = BTreeSet::new();
    let mut pending_irq: BTreeMap<u32, VecDeque<u64>> = BTreeMap::new();
    let mut latency_samples: Vec<u64> = Vec::new();
    let mut windows_total = 0u64;
    let mut windows_ok = 0u64;
    let mut pulse_count = 0u64;
    let mut conflict_count = 0u64;
    let mut overhead_ticks = 0u64;
    let mut total_ticks = 0u64;

    for event in trace.iter() {
        match event {
            TraceEvent::Slice { hash, tokens, .. } => {
                slice_sizes.insert(*hash, *tokens);
            }
            TraceEvent::PageIn { hash, .. } => {
                gained.insert(*hash);
            }
            TraceEvent::Irq { thread, tick, id } if *id == SIG_TOOL_INVOKE => {
                pending_irq.entry(*thread).or_default().push_back(*tick);
            }
            TraceEvent::Resume { thread, tick } => {
                if let Some(queue) = pending_irq.get_mut(thread) {
                    if let Some(raised) = queue.pop_front() {
                        latency_samples.push(tick - raised);
                    }
                }
            }
            TraceEvent::Window { sup, eps_max, .. } => {
                windows_total += 1;
                if sup < eps_max {
                    windows_ok += 1;
                }
            }
            TraceEvent::Csp { conflicts, .. } => {
                pulse_count += 1;
                conflict_count += conflicts;
            }
            TraceEvent::Switch { penalty, .. } => {
                overhead_ticks += penalty;
            }
            TraceEvent::Idle { ticks, .. } => {
                overhead_ticks += ticks;
            }
            TraceEvent::End { tick } => {
                total_ticks = *tick;
            }
            _ => {}
        }
    }

    let tokens_processed: u64 = slice_sizes.values().sum();
    let gain_tokens: u64 = gained
        .iter()
        .filter_map(|hash| slice_sizes.get(hash))
        .sum();
    let eta = if tokens_processed == 0 {
        0.0
    } else {
        gain_tokens as f64 / tokens_processed as f64
    };
    let mean_cognitive_latency = if latency_samples.is_empty() {
        0.0
    } else {
        latency_samples.iter().sum::<u64>() as f64 / latency_samples.len() as f64
    };
    let gamma = if windows_total == 0 {
        1.0
    } else {
        windows_ok as f64 / windows_total as f64
    };
    let overhead_fraction = if total_ticks == 0 {
        0.0
    } else {
        overhead_ticks as f64 / total_ticks as f64
    };

    MetricsReport {
        eta,
        mean_cognitive_latency,
        gamma,
        pulse_count,
        conflict_count,
        overhead_fraction,
        tokens_processed,
        gain_tokens,
    }
}

/// Parses a JSONL trace file and recomputes its metrics report.
pub fn replay_trace(path: &std::path::Path) -> Result<MetricsReport, TraceError> {
    let file = std::fs::File::open(path)?;
    let trace = EventTrace::from_reader(std::io::BufReader::new(file))?;
    Ok(compute_metrics(&trace))
}
