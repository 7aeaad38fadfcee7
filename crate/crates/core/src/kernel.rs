//! The reasoning kernel: per-thread cognitive state, the interrupt vector
//! table and priority queue, perception alignment of tool output, and the
//! interrupt-driven execution cycle.
//!
//! A tool request splits the cycle in two. `begin`: raise the tool
//! interrupt, finalize and store the active slice, start the device call,
//! and block the thread. `complete` (on the thread's next dispatch after the
//! device deadline): align the output, reload the stored slice, append the
//! aligned slice, and resume. Blocked threads yield the kernel so the
//! scheduler can run others in the meantime.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::slicer::{self, SemanticSlice, SliceStatus};
use crate::smmu::{Smmu, SmmuEffect};
use crate::synthrk::{
    embedding_for_token, tool_device_id, GeneratorState, SynthParams, ToolBus, TOOL_REQUEST_BASE,
};
use crate::trace::{EventTrace, TraceEvent};

pub const SIG_TOOL_INVOKE: u8 = 0x01;
pub const SIG_CONTEXT_FULL: u8 = 0x02;
pub const SIG_SYNC_DRIFT: u8 = 0x03;
pub const SIG_PERCEPTION_ERR: u8 = 0x04;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("interrupt id {0:#04x} is not present in the vector table")]
    UnknownInterrupt(u8),
    #[error("tool output does not match the active schema (cosine {cosine})")]
    AlignmentFailure { cosine: f64 },
    #[error("tool returned no output")]
    EmptyOutput,
    #[error("event at index {0} is not an interrupt")]
    NotAnInterrupt(usize),
    #[error("thread never resumed after the interrupt at tick {0}")]
    NoResume(u64),
}

/// Interrupt urgency, ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum IrqPriority {
    Medium,
    High,
    Critical,
}

impl IrqPriority {
    pub fn as_str(self) -> &'static str {
        match self {
            IrqPriority::Medium => "Medium",
            IrqPriority::High => "High",
            IrqPriority::Critical => "Critical",
        }
    }
}

#[derive(Debug, Clone)]
pub struct IvtEntry {
    pub name: &'static str,
    pub description: &'static str,
    pub priority: IrqPriority,
}

/// The interrupt vector table. The four standard vectors are always present.
#[derive(Debug, Clone)]
pub struct InterruptVectorTable {
    entries: BTreeMap<u8, IvtEntry>,
}

impl Default for InterruptVectorTable {
    fn default() -> Self {
        let mut entries = BTreeMap::new();
        entries.insert(
            SIG_TOOL_INVOKE,
            IvtEntry {
                name: "SIG_TOOL_INVOKE",
                description: "kernel requests an external tool call",
                priority: IrqPriority::High,
            },
        );
        entries.insert(
            SIG_CONTEXT_FULL,
            IvtEntry {
                name: "SIG_CONTEXT_FULL",
                description: "active window reached its token capacity",
                priority: IrqPriority::Medium,
            },
        );
        entries.insert(
            SIG_SYNC_DRIFT,
            IvtEntry {
                name: "SIG_SYNC_DRIFT",
                description: "cognitive drift exceeded its threshold",
                priority: IrqPriority::High,
            },
        );
        entries.insert(
            SIG_PERCEPTION_ERR,
            IvtEntry {
                name: "SIG_PERCEPTION_ERR",
                description: "tool output failed the schema alignment check",
                priority: IrqPriority::Critical,
            },
        );
        Self { entries }
    }
}

impl InterruptVectorTable {
    pub fn get(&self, id: u8) -> Option<&IvtEntry> {
        self.entries.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&u8, &IvtEntry)> {
        self.entries.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueuedInterrupt {
    pub id: u8,
    pub priority: IrqPriority,
    seq: u64,
}

impl Ord for QueuedInterrupt {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Max-heap: higher priority first, then earlier arrival.
        self.priority
            .cmp(&other.priority)
            .then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for QueuedInterrupt {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Pending interrupts, served by (priority desc, arrival asc).
#[derive(Debug, Clone, Default)]
pub struct InterruptQueue {
    heap: std::collections::BinaryHeap<QueuedInterrupt>,
    next_seq: u64,
}

impl InterruptQueue {
    pub fn pop(&mut self) -> Option<QueuedInterrupt> {
        self.heap.pop()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// Enqueues an interrupt, keeping the queue ordered by priority and arrival.
pub fn raise_interrupt(
    id: u8,
    ivt: &InterruptVectorTable,
    queue: &mut InterruptQueue,
) -> Result<(), KernelError> {
    let entry = ivt.get(id).ok_or(KernelError::UnknownInterrupt(id))?;
    let seq = queue.next_seq;
    queue.next_seq += 1;
    queue.heap.push(QueuedInterrupt {
        id,
        priority: entry.priority,
        seq,
    });
    Ok(())
}

/// Per-thread cognitive state driven by the kernel transition.
#[derive(Debug, Clone)]
pub struct CognitiveState {
    pub hidden: Vec<f64>,
    pub logical_clock: u64,
    pub last_token: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThreadState {
    Ready,
    Running,
    Blocked,
    Terminated,
}

/// Per-thread control block. The generator stream is keyed by
/// `seed ^ thread_id`, so equal seeds still give independent threads.
#[derive(Debug, Clone)]
pub struct ReasoningControlBlock {
    pub thread_id: u32,
    pub priority: u32,
    pub state: ThreadState,
    pub cognitive: CognitiveState,
    pub active_slice: Option<u64>,
    pub semantic_stack_depth: u32,
    pub pending_interrupt: Option<u8>,
    gen: GeneratorState,
}

impl ReasoningControlBlock {
    pub fn new(thread_id: u32, priority: u32, seed: u64, params: SynthParams) -> Self {
        let mut hidden = vec![0.0; params.dim];
        if !hidden.is_empty() {
            hidden[0] = 1.0;
        }
        Self {
            thread_id,
            priority,
            state: ThreadState::Ready,
            cognitive: CognitiveState {
                hidden,
                logical_clock: 0,
                last_token: 0,
            },
            active_slice: None,
            semantic_stack_depth: 0,
            pending_interrupt: None,
            gen: GeneratorState::with_stream(seed, thread_id as u64, params),
        }
    }
}

/// One kernel transition: pulls the next token from the thread's stream,
/// advances the logical clock, and folds the token's embedding into the
/// hidden state. May return a tool-request marker.
pub fn rk_step(rcb: &mut ReasoningControlBlock) -> crate::synthrk::GenStep {
    let step = rcb.gen.gen_step();
    rcb.cognitive.logical_clock += 1;
    rcb.cognitive.last_token = step.token_id;
    let mut next: Vec<f64> = rcb
        .cognitive
        .hidden
        .iter()
        .zip(&step.embedding)
        .map(|(h, e)| 0.9 * h + 0.1 * e)
        .collect();
    let norm = next.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in next.iter_mut() {
            *v /= norm;
        }
        rcb.cognitive.hidden = next;
    }
    step
}

/// Tool output re-coded and scored against the active schema.
#[derive(Debug, Clone)]
pub struct AlignedCandidate {
    pub token_ids: Vec<u64>,
    pub schema: Vec<f64>,
    pub cosine: f64,
}

fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Re-codes raw tool bytes into tokens (8-byte little-endian chunks, tool
/// bit cleared), compresses them into a candidate schema, and accepts the
/// candidate only if its cosine similarity against the current schema
/// reaches the alignment threshold.
pub fn perception_align(
    raw: &[u8],
    current_schema: &[f64],
    theta_align: f64,
    dim: usize,
) -> Result<AlignedCandidate, KernelError> {
    if raw.is_empty() {
        return Err(KernelError::EmptyOutput);
    }
    let token_ids: Vec<u64> = raw
        .chunks(8)
        .map(|chunk| {
            let mut bytes = [0u8; 8];
            bytes[..chunk.len()].copy_from_slice(chunk);
            u64::from_le_bytes(bytes) & !TOOL_REQUEST_BASE
        })
        .collect();
    let embeddings: Vec<Vec<f64>> = token_ids
        .iter()
        .map(|&id| embedding_for_token(id, dim))
        .collect();
    let schema = slicer::compress_state(&embeddings).expect("token list is non-empty");
    let cosine = cosine_similarity(&schema, current_schema);
    if cosine >= theta_align {
        Ok(AlignedCandidate {
            token_ids,
            schema,
            cosine,
        })
    } else {
        Err(KernelError::AlignmentFailure { cosine })
    }
}

/// Ticks from an interrupt to the same thread's next resume.
pub fn cognitive_latency(trace: &EventTrace, irq_index: usize) -> Result<u64, KernelError> {
    let events = trace.events();
    let Some(TraceEvent::Irq { thread, tick, .. }) = events.get(irq_index) else {
        return Err(KernelError::NotAnInterrupt(irq_index));
    };
    for event in &events[irq_index + 1..] {
        if let TraceEvent::Resume {
            thread: t,
            tick: resume_tick,
        } = event
        {
            if t == thread {
                return Ok(resume_tick - tick);
            }
        }
    }
    Err(KernelError::NoResume(*tick))
}

/// Callback invoked once per consumed tick, letting the harness advance the
/// agent layer in lockstep with the kernel.
pub trait TickHook {
    fn on_tick(&mut self, now: u64, smmu: &mut Smmu, trace: &mut EventTrace);
}

/// Hook that does nothing; unit tests and single-layer runs use it.
pub struct NoopHook;

impl TickHook for NoopHook {
    fn on_tick(&mut self, _now: u64, _smmu: &mut Smmu, _trace: &mut EventTrace) {}
}

/// Kernel tuning knobs.
#[derive(Debug, Clone)]
pub struct KernelConfig {
    /// Cosine threshold for accepting tool output.
    pub theta_align: f64,
    /// Fixed ticks charged when a blocked thread resumes.
    pub dispatch_overhead: u64,
    /// Ticks a tool device takes per call.
    pub tool_latency: u64,
    /// Device payload length in 8-byte tokens.
    pub payload_tokens: usize,
    /// Boundary threshold for streaming slice detection.
    pub slice_epsilon: f64,
    /// Force-finalize a run at this many tokens (the L1 capacity).
    pub max_slice_tokens: u64,
    /// Embedding dimension.
    pub dim: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            theta_align: 0.35,
            dispatch_overhead: 1,
            tool_latency: 3,
            payload_tokens: 4,
            slice_epsilon: 0.15,
            max_slice_tokens: 64,
            dim: 8,
        }
    }
}

/// A pending device call the thread is blocked on.
#[derive(Debug, Clone)]
struct PendingTool {
    raw: Vec<u8>,
    wake_tick: u64,
    stored: Option<(u64, u64)>,
}

/// A reasoning thread plus its streaming-slicer state.
#[derive(Debug, Clone)]
pub struct KernelThread {
    pub rcb: ReasoningControlBlock,
    /// 1-based position of the thread's next content token minus one.
    position: usize,
    run_start: usize,
    run_tokens: Vec<u64>,
    run_embeddings: Vec<Vec<f64>>,
    run_cids: Vec<f64>,
    prev_cid: Option<f64>,
    active: Option<(u64, u64)>,
    owned_hashes: std::collections::BTreeSet<u64>,
    pending_tool: Option<PendingTool>,
}

impl KernelThread {
    pub fn new(thread_id: u32, priority: u32, seed: u64, params: SynthParams) -> Self {
        Self {
            rcb: ReasoningControlBlock::new(thread_id, priority, seed, params),
            position: 0,
            run_start: 1,
            run_tokens: Vec::new(),
            run_embeddings: Vec::new(),
            run_cids: Vec::new(),
            prev_cid: None,
            active: None,
            owned_hashes: std::collections::BTreeSet::new(),
            pending_tool: None,
        }
    }

    /// Slice id and hash of the most recently finalized slice.
    pub fn active_slice(&self) -> Option<(u64, u64)> {
        self.active
    }

    /// Hashes of every slice this thread has finalized or appended.
    pub fn owned_hashes(&self) -> impl Iterator<Item = &u64> {
        self.owned_hashes.iter()
    }

    /// True when the thread can be handed the kernel at `now`.
    pub fn dispatchable(&self, now: u64) -> bool {
        match self.rcb.state {
            ThreadState::Ready => true,
            ThreadState::Blocked => self
                .pending_tool
                .as_ref()
                .is_some_and(|p| p.wake_tick <= now),
            _ => false,
        }
    }

    /// Earliest tick a blocked thread becomes dispatchable again.
    pub fn wake_tick(&self) -> Option<u64> {
        self.pending_tool.as_ref().map(|p| p.wake_tick)
    }

    /// Tokens of this thread's slices currently resident in L1; the reload
    /// cost basis for a context switch back to it.
    pub fn l1_footprint(&self, smmu: &Smmu) -> u64 {
        self.owned_hashes
            .iter()
            .filter_map(|hash| {
                let entry = smmu.page_table().get(*hash)?;
                if entry.status == SliceStatus::Active {
                    smmu.slice(*hash).map(SemanticSlice::size)
                } else {
                    None
                }
            })
            .sum()
    }
}

/// Outcome of one scheduling slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOutcome {
    /// Ticks consumed inside the slot.
    pub consumed: u64,
    /// Tokens emitted inside the slot.
    pub tokens: u64,
    /// True when the thread blocked on a tool call and yielded early.
    pub blocked: bool,
}

/// The reasoning kernel. One instance per simulation; threads are handed to
/// it one at a time by the scheduler.
#[derive(Debug)]
pub struct Kernel {
    pub ivt: InterruptVectorTable,
    pub queue: InterruptQueue,
    pub config: KernelConfig,
    tool_bus: ToolBus,
    tool_ordinals: BTreeMap<u8, u64>,
    next_slice_id: u64,
}

impl Kernel {
    pub fn new(seed: u64, config: KernelConfig) -> Self {
        let tool_bus = ToolBus::new(seed, config.tool_latency, config.payload_tokens);
        Self {
            ivt: InterruptVectorTable::default(),
            queue: InterruptQueue::default(),
            config,
            tool_bus,
            tool_ordinals: BTreeMap::new(),
        next_slice_id: 0,
        }
    }

    /// Runs one thread for up to `budget` ticks, starting at `*clock`.
    /// Consumes exactly one tick per emitted token plus any paging and
    /// dispatch latencies (clamped at the slot boundary); returns early when
    /// the thread blocks on a tool call.
    pub fn run_thread<H: TickHook>(
        &mut self,
        thread: &mut KernelThread,
        budget: u64,
        clock: &mut u64,
        smmu: &mut Smmu,
        trace: &mut EventTrace,
        hook: &mut H,
    ) -> RunOutcome {
        let start = *clock;
        let slot_end = start + budget;
        let mut tokens = 0;
        if budget == 0 {
            return RunOutcome { consumed: 0, tokens, blocked: false };
        }

        // Finish a pending tool cycle first.
        if thread.rcb.state == ThreadState::Blocked {
            let pending = thread
                .pending_tool
                .take()
                .expect("blocked implies a pending tool");
            debug_assert!(pending.wake_tick <= *clock);
            thread.rcb.state = ThreadState::Running;
            self.complete_tool_cycle(thread, pending, clock, slot_end, smmu, trace, hook);
        } else {
            thread.rcb.state = ThreadState::Running;
        }

        while *clock < slot_end && thread.rcb.state == ThreadState::Running {
            let step = rk_step(&mut thread.rcb);
            *clock += 1;
            tokens += 1;
            trace.push(TraceEvent::Token {
                thread: thread.rcb.thread_id,
                tick: *clock,
                token: step.token_id,
            });
            hook.on_tick(*clock, smmu, trace);
            if step.is_tool_request {
                self.begin_tool_cycle(thread, step.token_id, *clock, smmu, trace);
            } else {
                self.accept_content_token(thread, step, *clock, smmu, trace);
            }
            self.drain_queue(thread.rcb.thread_id, *clock, trace);
        }

        if thread.rcb.state == ThreadState::Running {
            thread.rcb.state = ThreadState::Ready;
        }
        RunOutcome {
            consumed: *clock - start,
            tokens,
            blocked: thread.rcb.state == ThreadState::Blocked,
        }
    }

    fn accept_content_token(
        &mut self,
        thread: &mut KernelThread,
        step: crate::synthrk::GenStep,
        now: u64,
        smmu: &mut Smmu,
        trace: &mut EventTrace,
    ) {
        thread.position += 1;
        let row = thread.rcb.gen.gen_attention_row(thread.position);
        let density = slicer::cid(&row).expect("generated rows are stochastic");
        if let Some(prev) = thread.prev_cid {
            if (density - prev).abs() > self.config.slice_epsilon && !thread.run_tokens.is_empty() {
                self.finalize_run(thread, now, smmu, trace);
                thread.run_start = thread.position;
            }
        }
        thread.run_tokens.push(step.token_id);
        thread.run_embeddings.push(step.embedding);
        thread.run_cids.push(density);
        thread.prev_cid = Some(density);
        if thread.run_tokens.len() as u64 >= self.config.max_slice_tokens {
            self.finalize_run(thread, now, smmu, trace);
            thread.run_start = thread.position + 1;
        }
    }

    /// Closes the open token run into a slice and admits it into L1.
    fn finalize_run(
        &mut self,
        thread: &mut KernelThread,
        now: u64,
        smmu: &mut Smmu,
        trace: &mut EventTrace,
    ) {
        if thread.run_tokens.is_empty() {
            return;
        }
        let token_ids = std::mem::take(&mut thread.run_tokens);
        let embeddings = std::mem::take(&mut thread.run_embeddings);
        let cids = std::mem::take(&mut thread.run_cids);
        let schema = slicer::compress_state(&embeddings).expect("run is non-empty");
        let importance = cids.iter().sum::<f64>() / cids.len() as f64;
        let hash = slicer::semantic_hash(&token_ids);
        let end = thread.run_start + token_ids.len() - 1;
        let slice = SemanticSlice {
            slice_id: self.next_slice_id,
            token_range: (thread.run_start, end),
            semantic_hash: hash,
            token_ids,
            schema,
            importance,
            status: SliceStatus::Active,
            created_at: now,
        };
        self.next_slice_id += 1;
        let effects = smmu
            .manage_memory(slice, now)
            .expect("runs are capped at the L1 capacity");
        let evicted =
            self.emit_effects(&effects, thread.rcb.thread_id, now, trace);
        if evicted {
            let _ = raise_interrupt(SIG_CONTEXT_FULL, &self.ivt, &mut self.queue);
            trace.push(TraceEvent::Irq {
                thread: thread.rcb.thread_id,
                tick: now,
                id: SIG_CONTEXT_FULL,
            });
        }
        let slice_id = smmu
            .page_table()
            .get(hash)
            .expect("just admitted")
            .slice_id;
        thread.owned_hashes.insert(hash);
        thread.active = Some((slice_id, hash));
        thread.rcb.active_slice = Some(slice_id);
    }

    /// Emits smmu effects as trace events; returns whether anything was
    /// evicted from L1.
    fn emit_effects(
        &self,
        effects: &[SmmuEffect],
        thread: u32,
        now: u64,
        trace: &mut EventTrace,
    ) -> bool {
        let mut evicted = false;
        for effect in effects {
            match *effect {
                SmmuEffect::Registered { hash, slice_id, tokens } => {
                    trace.push(TraceEvent::Slice {
                        hash,
                        tick: now,
                        id: slice_id,
                        tokens,
                        thread,
                    });
                }
                SmmuEffect::Evicted { hash, from, to } => {
                    if from == crate::smmu::Location::L1 {
                        evicted = true;
                    }
                    trace.push(TraceEvent::Evict { hash, tick: now, from, to });
                }
                SmmuEffect::PagedIn { hash, from, .. } => {
                    trace.push(TraceEvent::PageIn {
                        hash,
                        tick: now,
                        from,
                        to: crate::smmu::Location::L1,
                    });
                }
            }
        }
        evicted
    }

    fn begin_tool_cycle(
        &mut self,
        thread: &mut KernelThread,
        token: u64,
        now: u64,
        smmu: &mut Smmu,
        trace: &mut EventTrace,
    ) {
        let tid = thread.rcb.thread_id;
        raise_interrupt(SIG_TOOL_INVOKE, &self.ivt, &mut self.queue)
            .expect("standard vector");
        trace.push(TraceEvent::Irq { thread: tid, tick: now, id: SIG_TOOL_INVOKE });
        let served = self.queue.pop().expect("just raised");
        trace.push(TraceEvent::Dispatch { thread: tid, tick: now, id: served.id });
        debug_assert_eq!(served.id, SIG_TOOL_INVOKE);

        // The tool request closes the current semantic unit.
        if !thread.run_tokens.is_empty() {
            self.finalize_run(thread, now, smmu, trace);
            thread.run_start = thread.position + 1;
        }
        let stored = thread.active;
        if let Some((slice_id, hash)) = stored {
            let effects = smmu.page_out(hash).expect("active slice is registered");
            self.emit_effects(&effects, tid, now, trace);
            trace.push(TraceEvent::Store { thread: tid, tick: now, slice: slice_id, hash });
            thread.rcb.semantic_stack_depth += 1;
        }

        let device = tool_device_id(token);
        let ordinal = self.tool_ordinals.entry(device).or_insert(0);
        let call_ordinal = *ordinal;
        *ordinal += 1;
        let (raw, latency) = self.tool_bus.call(device, call_ordinal);

        thread.pending_tool = Some(PendingTool {
            raw,
            wake_tick: now + latency,
            stored,
        });
        thread.rcb.state = ThreadState::Blocked;
        thread.rcb.pending_interrupt = Some(SIG_TOOL_INVOKE);
    }

    fn complete_tool_cycle<H: TickHook>(
        &mut self,
        thread: &mut KernelThread,
        pending: PendingTool,
        clock: &mut u64,
        slot_end: u64,
        smmu: &mut Smmu,
        trace: &mut EventTrace,
        hook: &mut H,
    ) {
        let tid = thread.rcb.thread_id;
        let (active_hash, schema) = match pending.stored {
            Some((_, hash)) => {
                let schema = smmu.schema_of(hash).map(<[f64]>::to_vec);
                (hash, schema)
            }
            None => (0, None),
        };

        let aligned = match &schema {
            Some(schema) => {
                match perception_align(&pending.raw, schema, self.config.theta_align, self.config.dim)
                {
                    Ok(candidate) => {
                        trace.push(TraceEvent::AlignOk {
                            thread: tid,
                            tick: *clock,
                            hash: active_hash,
                            cosine: candidate.cosine,
                        });
                        Some(candidate)
                    }
                    Err(err) => {
                        let cosine = match err {
                            KernelError::AlignmentFailure { cosine } => cosine,
                            _ => 0.0,
                        };
                        trace.push(TraceEvent::AlignErr {
                            thread: tid,
                            tick: *clock,
                            hash: active_hash,
                            cosine,
                        });
                        let _ = raise_interrupt(SIG_PERCEPTION_ERR, &self.ivt, &mut self.queue);
                        trace.push(TraceEvent::Irq {
                            thread: tid,
                            tick: *clock,
                            id: SIG_PERCEPTION_ERR,
                        });
                        None
                    }
                }
            }
            None => {
                // No active slice to align against: the output has no schema
                // context and is rejected outright.
                trace.push(TraceEvent::AlignErr {
                    thread: tid,
                    tick: *clock,
                    hash: 0,
                    cosine: -1.0,
                });
                let _ = raise_interrupt(SIG_PERCEPTION_ERR, &self.ivt, &mut self.queue);
                trace.push(TraceEvent::Irq {
                    thread: tid,
                    tick: *clock,
                    id: SIG_PERCEPTION_ERR,
                });
                None
            }
        };

        // Reload the stored slice before appending anything, so the pairing
        // holds even when alignment failed.
        if let Some((slice_id, hash)) = pending.stored {
            match smmu.page_in(hash, *clock) {
                Ok((effects, latency)) => {
                    self.emit_effects(&effects, tid, *clock, trace);
                    trace.push(TraceEvent::Reload {
                        thread: tid,
                        tick: *clock,
                        slice: slice_id,
                        hash,
                    });
                    advance(clock, latency, slot_end, smmu, trace, hook);
                }
                Err(_) => {
                    trace.push(TraceEvent::Fault { tick: *clock, hash });
                }
            }
            thread.rcb.semantic_stack_depth = thread.rcb.semantic_stack_depth.saturating_sub(1);
        }

        if let Some(candidate) = aligned {
            let start = thread.position + 1;
            let end = start + candidate.token_ids.len() - 1;
            thread.position = end;
            thread.run_start = end + 1;
            let hash = slicer::semantic_hash(&candidate.token_ids);
            let slice = SemanticSlice {
                slice_id: self.next_slice_id,
                token_range: (start, end),
                semantic_hash: hash,
                token_ids: candidate.token_ids,
                schema: candidate.schema,
                // Alignment score doubles as the slice's importance.
                importance: candidate.cosine.clamp(0.0, 1.0),
                status: SliceStatus::Active,
                created_at: *clock,
            };
            self.next_slice_id += 1;
            let effects = smmu
                .manage_memory(slice, *clock)
                .expect("payload is capped below the L1 capacity");
            thread.owned_hashes.insert(hash);
            let evicted = self.emit_effects(&effects, tid, *clock, trace);
            if evicted {
                let _ = raise_interrupt(SIG_CONTEXT_FULL, &self.ivt, &mut self.queue);
                trace.push(TraceEvent::Irq { thread: tid, tick: *clock, id: SIG_CONTEXT_FULL });
            }
        }

        self.drain_queue(tid, *clock, trace);
        advance(clock, self.config.dispatch_overhead, slot_end, smmu, trace, hook);
        thread.rcb.pending_interrupt = None;
        thread.rcb.state = ThreadState::Running;
        trace.push(TraceEvent::Resume { thread: tid, tick: *clock });
    }

    /// Dispatches everything pending, highest priority first. The tool
    /// vector starts its own cycle elsewhere; the remaining handlers are
    /// bookkeeping and are recorded for the audit trail.
    fn drain_queue(&mut self, thread: u32, now: u64, trace: &mut EventTrace) {
        while let Some(q) = self.queue.pop() {
            trace.push(TraceEvent::Dispatch { thread, tick: now, id: q.id });
        }
    }
}

/// Advances the clock tick by tick, clamped at the slot boundary, firing the
/// hook for each elapsed tick.
fn advance<H: TickHook>(
    clock: &mut u64,
    ticks: u64,
    slot_end: u64,
    smmu: &mut Smmu,
    trace: &mut EventTrace,
    hook: &mut H,
) {
    for _ in 0..ticks {
        if *clock >= slot_end {
            break;
        }
        *clock += 1;
        hook.on_tick(*clock, smmu, trace);
    }
}
