//! agentos-kernel: a deterministic simulator of an operating-system layer
//! for reasoning agents.
//!
//! The crate is organized around the subsystems of that layer:
//!
//! - [`synthrk`] — the seeded synthetic reasoning kernel standing in for a
//!   live model: token/embedding streams, attention rows with plantable
//!   anchors, agent dynamics, and tool-device stubs.
//! - [`slicer`] — attention entropy, contextual information density,
//!   boundary detection, and slice finalization.
//! - [`smmu`] — the semantic memory hierarchy: page table, L1 eviction by
//!   effective importance, paging latencies, and the utilization ledger.
//! - [`kernel`] — reasoning control blocks, the interrupt vector table and
//!   queue, perception alignment, and the tool interrupt cycle.
//! - [`scheduler`] — priority dispatch with aging and the context-switch
//!   penalty model.
//! - [`sync`] — multi-agent drift, sync pulses, the advantageous-timing
//!   policy, and Monte-Carlo stability estimation.
//! - [`trace`] — the append-only event log and its JSONL wire format.
//! - [`harness`] — scenario configuration, the closed simulation loop,
//!   metric reports, replay, and the experiment sweeps.
//!
//! Every run is a pure function of `(seed, config)`: no wall clock, no OS
//! randomness, no hash-order dependence.

pub mod harness;
pub mod kernel;
pub mod scheduler;
pub mod slicer;
pub mod smmu;
pub mod sync;
pub mod synthrk;
pub mod trace;

pub use harness::{
    experiment_sync_cost, experiment_thrash, replay_trace, run_scenario, run_schedule,
    MetricsReport, ScenarioConfig,
};
pub use kernel::{cognitive_latency, perception_align, raise_interrupt, rk_step, Kernel};
pub use slicer::{
    attention_entropy, cid, cid_series, compress_state, detect_boundaries, finalize_slices,
    semantic_hash, SemanticSlice,
};
pub use smmu::{effective_importance, utilization_eta, Smmu};
pub use sync::{
    estimate_gamma, instantaneous_drift, multi_agent_drift, sync_pulse, timing_policy, total_drift,
};
pub use synthrk::{GeneratorState, SplitMix64};
pub use trace::{EventTrace, TraceEvent};
