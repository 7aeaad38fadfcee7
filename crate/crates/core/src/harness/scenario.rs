//! The closed simulation loop: scheduler slots over the kernel, the agent
//! layer advancing in lockstep with every consumed tick, and a budget that
//! is partitioned exactly into reasoning and overhead.

use crate::kernel::{Kernel, KernelThread, TickHook, SIG_SYNC_DRIFT};
use crate::scheduler::{Scheduler, ThrashReport};
use crate::smmu::Smmu;
use crate::sync::{
    instantaneous_drift, state_of_truth, sync_pulse, timing_policy, AgentState, Decision,
    DriftAccumulator, SyncConfig,
};
use crate::synthrk::GeneratorState;
use crate::trace::{EventTrace, TraceEvent};

use super::config::{ScenarioConfig, SyncPolicy};
use super::metrics::{compute_metrics, MetricsReport};

/// Stream-id namespace for agent dynamics, disjoint from thread streams.
const AGENT_STREAM_BASE: u64 = 0xA6E0_0000_0000_0000;

/// The multi-agent layer, advanced once per consumed tick via the kernel's
/// tick hook. Owns the drift meters, the pulse policy, and the evaluation
/// windows for the empirical stability index.
struct AgentLayer {
    agents: Vec<AgentState>,
    gens: Vec<GeneratorState>,
    meters: Vec<DriftAccumulator>,
    delta_history: Vec<f64>,
    sync_config: SyncConfig,
    policy: SyncPolicy,
    window: u64,
    window_sup: f64,
    current_thread: u32,
    agent_count: u32,
    scanned_events: usize,
}

impl AgentLayer {
    fn new(config: &ScenarioConfig) -> Self {
        let params = config.synth_params();
        let dim = params.dim;
        let k = config.agents;
        let agents: Vec<AgentState> = (0..k)
            .map(|i| {
                // Agents start on distinct unit axes (wrapping past the
                // dimension), so initial drift is non-trivial.
                let mut hidden = vec![0.0; dim];
                hidden[i as usize % dim] = 1.0;
                AgentState {
                    agent_id: i,
                    hidden,
                    local_slices: Vec::new(),
                    drift_meter: 0.0,
                    theta: config.seed ^ (AGENT_STREAM_BASE | i as u64),
                }
            })
            .collect();
        let gens = agents
            .iter()
            .map(|a| GeneratorState::new(a.theta, params.clone()))
            .collect();
        let meters = agents.iter().map(|_| DriftAccumulator::new(0.0)).collect();
        Self {
            agents,
            gens,
            meters,
            delta_history: Vec::new(),
            sync_config: config.sync_config(),
            policy: config.sync.policy.clone(),
            window: config.sync.window,
            window_sup: 0.0,
            current_thread: 0,
            agent_count: k,
            scanned_events: 0,
        }
    }

    /// Attributes slices finalized since the last scan to agents,
    /// round-robin by the finalizing thread.
    fn attribute_new_slices(&mut self, smmu: &Smmu, trace: &EventTrace) {
        let events = trace.events();
        for event in &events[self.scanned_events.min(events.len())..] {
            if let TraceEvent::Slice { hash, thread, .. } = event {
                if let Some(slice) = smmu.slice(*hash) {
                    let idx = (*thread % self.agent_count) as usize;
                    self.agents[idx].local_slices.push(slice.clone());
                }
            }
        }
        self.scanned_events = events.len();
    }

    fn evolve(&mut self) -> Vec<f64> {
        let global = state_of_truth(&self.agents);
        for (agent, gen) in self.agents.iter_mut().zip(self.gens.iter_mut()) {
            agent.hidden = gen.agent_evolve(&agent.hidden, &global);
        }
        state_of_truth(&self.agents)
    }

    fn pulse_due(&self, now: u64) -> bool {
        if self.agent_count < 2 {
            return false;
        }
        match self.policy {
            SyncPolicy::Periodic { period } => now % period == 0,
            SyncPolicy::Advantageous => {
                let max_meter = self
                    .agents
                    .iter()
                    .map(|a| a.drift_meter)
                    .fold(0.0f64, f64::max);
                timing_policy(&self.delta_history, max_meter, &self.sync_config)
                    == Decision::SyncNow
            }
        }
    }

    fn fire_pulse(&mut self, now: u64, smmu: &mut Smmu, trace: &mut EventTrace) {
        // Drift-triggered pulses announce themselves on the sync vector.
        if matches!(self.policy, SyncPolicy::Advantageous) {
            trace.push(TraceEvent::Irq {
                thread: self.current_thread,
                tick: now,
                id: SIG_SYNC_DRIFT,
            });
            trace.push(TraceEvent::Dispatch {
                thread: self.current_thread,
                tick: now,
                id: SIG_SYNC_DRIFT,
            });
        }
        // Capturing a slice for reconciliation is a read: page each distinct
        // captured hash back into L1 so the access is accounted and traced.
        let captured: std::collections::BTreeSet<u64> = self
            .agents
            .iter()
            .flat_map(|a| a.local_slices.iter().map(|s| s.semantic_hash))
            .collect();
        for hash in captured {
            match smmu.page_in(hash, now) {
                Ok((effects, _latency)) => {
                    for effect in effects {
                        match effect {
                            crate::smmu::SmmuEffect::Evicted { hash, from, to } => {
                                trace.push(TraceEvent::Evict { hash, tick: now, from, to });
                            }
                            crate::smmu::SmmuEffect::PagedIn { hash, from, .. } => {
                                trace.push(TraceEvent::PageIn {
                                    hash,
                                    tick: now,
                                    from,
                                    to: crate::smmu::Location::L1,
                                });
                            }
                            crate::smmu::SmmuEffect::Registered { .. } => {}
                        }
                    }
                }
                Err(_) => trace.push(TraceEvent::Fault { tick: now, hash }),
            }
        }
        let outcome = sync_pulse(&mut self.agents, now).expect("pulse_due checks agent count");
        trace.push(TraceEvent::Csp {
            tick: now,
            agents: self.agent_count,
            conflicts: outcome.conflicts.len() as u64,
        });
        for meter in self.meters.iter_mut() {
            meter.reset(0.0);
        }
        self.delta_history.clear();
    }
}

impl TickHook for AgentLayer {
    fn on_tick(&mut self, now: u64, smmu: &mut Smmu, trace: &mut EventTrace) {
        self.attribute_new_slices(smmu, trace);
        let global = self.evolve();
        let mut max_delta = 0.0f64;
        let mut max_meter = 0.0f64;
        for (i, agent) in self.agents.iter_mut().enumerate() {
            let delta = instantaneous_drift(&agent.hidden, &global)
                .expect("agent dimensions are uniform");
            agent.drift_meter =
                self.meters[i].step(delta, self.sync_config.dt, self.sync_config.lambda);
            max_delta = max_delta.max(delta);
            max_meter = max_meter.max(agent.drift_meter);
        }
        self.delta_history.push(max_delta);
        self.window_sup = self.window_sup.max(max_meter);

        if self.pulse_due(now) {
            self.fire_pulse(now, smmu, trace);
        }

        if now % self.window == 0 {
            trace.push(TraceEvent::Window {
                tick: now,
                sup: self.window_sup,
                eps_max: self.sync_config.epsilon_max,
            });
            self.window_sup = 0.0;
        }
    }
}

/// Runs one scenario to its tick budget. Returns the full event trace and
/// the metrics report, which is itself computed from the trace alone.
pub fn run_scenario(config: &ScenarioConfig) -> Result<(EventTrace, MetricsReport), super::config::ConfigError> {
    config.validate()?;
    let params = config.synth_params();
    let mut kernel = Kernel::new(config.seed, config.kernel_config());
    let mut smmu = Smmu::new(config.memory_config());
    let mut scheduler = Scheduler::new(config.scheduler_config());
    let mut threads: Vec<KernelThread> = (0..config.threads)
        .map(|tid| KernelThread::new(tid, 1, config.seed, params.clone()))
        .collect();
    let mut layer = AgentLayer::new(config);
    let mut trace = EventTrace::new();
    let mut clock: u64 = 0;
    let mut reasoning: u64 = 0;
    let mut overhead: u64 = 0;
    let mut current: Option<u32> = None;
    // Footprint of each thread's resident slices at its last suspension;
    // the reload basis for switching back to it.
    let mut suspended_footprint: Vec<u64> = vec![0; config.threads as usize];
    let budget = config.budget;

    while clock < budget {
        let ready: Vec<(u32, u32)> = threads
            .iter()
            .filter(|t| t.dispatchable(clock))
            .map(|t| (t.rcb.thread_id, t.rcb.priority))
            .collect();

        if ready.is_empty() {
            // Everyone is blocked on a device: idle until the first wake.
            let next_wake = threads
                .iter()
                .filter_map(KernelThread::wake_tick)
                .min()
                .unwrap_or(budget);
            let idle = next_wake.max(clock + 1).min(budget) - clock;
            trace.push(TraceEvent::Idle { tick: clock, ticks: idle });
            for _ in 0..idle {
                clock += 1;
                overhead += 1;
                layer.on_tick(clock, &mut smmu, &mut trace);
            }
            continue;
        }

        let winner = scheduler
            .schedule_next(&ready)
            .expect("ready set is non-empty");
        if current != Some(winner) {
            let reload = suspended_footprint[winner as usize];
            let penalty = scheduler
                .context_switch(current, winner, reload)
                .min(budget - clock);
            trace.push(TraceEvent::Switch {
                tick: clock,
                from: current,
                to: winner,
                penalty,
            });
            for _ in 0..penalty {
                clock += 1;
                overhead += 1;
                layer.on_tick(clock, &mut smmu, &mut trace);
            }
            current = Some(winner);
        }
        if clock >= budget {
            break;
        }

        layer.current_thread = winner;
        let slot = scheduler.config().quantum.min(budget - clock);
        let outcome = kernel.run_thread(
            &mut threads[winner as usize],
            slot,
            &mut clock,
            &mut smmu,
            &mut trace,
            &mut layer,
        );
        reasoning += outcome.consumed;
        suspended_footprint[winner as usize] = threads[winner as usize].l1_footprint(&smmu);
    }

    debug_assert_eq!(reasoning + overhead, budget);
    trace.push(TraceEvent::End { tick: clock });
    let report = compute_metrics(&trace);
    Ok((trace, report))
}

/// Scheduler-focused entry point: runs `threads` identical reasoning threads
/// for `budget` ticks under the given config and reports how the ticks split
/// between reasoning and switching overhead.
pub fn run_schedule(
    threads: u32,
    budget: u64,
    config: &ScenarioConfig,
) -> Result<(ThrashReport, EventTrace), super::config::ConfigError> {
    let mut scenario = config.clone();
    scenario.threads = threads;
    scenario.budget = budget;
    scenario.agents = 1;
    let (trace, _report) = run_scenario(&scenario)?;
    let overhead: u64 = trace
        .iter()
        .map(|e| match e {
            TraceEvent::Switch { penalty, .. } => *penalty,
            TraceEvent::Idle { ticks, .. } => *ticks,
            _ => 0,
        })
        .sum();
    Ok((ThrashReport::new(threads, budget - overhead, overhead), trace))
}
