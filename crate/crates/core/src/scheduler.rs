//! Priority scheduling of reasoning threads over the single kernel, with an
//! aging boost against starvation and an explicit context-switch penalty
//! model proportional to the tokens that must be reloaded.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SchedError {
    #[error("the ready queue is empty")]
    EmptyReadyQueue,
}

#[derive(Debug, Clone)]
pub struct SchedulerConfig {
    /// Ticks per scheduling slot.
    pub quantum: u64,
    /// Fixed ticks charged per context switch.
    pub switch_base: u64,
    /// Tokens reloaded per tick during a switch.
    pub reload_bandwidth: u64,
    /// Priority units gained per slot spent waiting.
    pub aging_step: u32,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            quantum: 10,
            switch_base: 2,
            reload_bandwidth: 8,
            aging_step: 1,
        }
    }
}

/// How a run's ticks split between useful reasoning and switching overhead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThrashReport {
    pub threads: u32,
    pub reasoning_ticks: u64,
    pub overhead_ticks: u64,
    pub overhead_fraction: f64,
}

impl ThrashReport {
    pub fn new(threads: u32, reasoning_ticks: u64, overhead_ticks: u64) -> Self {
        let total = reasoning_ticks + overhead_ticks;
        let overhead_fraction = if total == 0 {
            0.0
        } else {
            overhead_ticks as f64 / total as f64
        };
        Self {
            threads,
            reasoning_ticks,
            overhead_ticks,
            overhead_fraction,
        }
    }
}

/// The dispatch policy: highest effective priority wins, where effective
/// priority is the base plus an aging bonus per slot spent waiting. Aging
/// resets on dispatch, so no ready thread starves.
#[derive(Debug, Clone)]
pub struct Scheduler {
    config: SchedulerConfig,
    waited: BTreeMap<u32, u64>,
}

impl Scheduler {
    pub fn new(config: SchedulerConfig) -> Self {
        Self {
            config,
            waited: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    /// Picks the next thread among `(thread_id, base_priority)` candidates.
    /// Ties go to the lowest thread id. The winner's aging resets; every
    /// other candidate accrues one wait slot.
    pub fn schedule_next(&mut self, ready: &[(u32, u32)]) -> Result<u32, SchedError> {
        if ready.is_empty() {
            return Err(SchedError::EmptyReadyQueue);
        }
        let effective = |tid: u32, base: u32| -> u64 {
            base as u64
                + self.config.aging_step as u64 * self.waited.get(&tid).copied().unwrap_or(0)
        };
        let mut winner = ready[0].0;
        let mut best = effective(ready[0].0, ready[0].1);
        for &(tid, base) in &ready[1..] {
            let score = effective(tid, base);
            if score > best || (score == best && tid < winner) {
                winner = tid;
                best = score;
            }
        }
        for &(tid, _) in ready {
            if tid == winner {
                self.waited.insert(tid, 0);
            } else {
                *self.waited.entry(tid).or_insert(0) += 1;
            }
        }
        Ok(winner)
    }

    /// Penalty in ticks for handing the kernel from one thread to another:
    /// a fixed base plus the reload time of the incoming thread's resident
    /// tokens. The cold start (no previous thread) is free.
    pub fn context_switch(&self, from: Option<u32>, to: u32, reload_tokens: u64) -> u64 {
        match from {
            None => 0,
            Some(f) if f == to => 0,
            Some(_) => {
                let bw = self.config.reload_bandwidth.max(1);
                self.config.switch_base + reload_tokens.div_ceil(bw)
            }
        }
    }
}
