//! Scenario configuration: a JSON document with one block per subsystem.
//! Unknown keys are rejected, and every invariant is checked with the field
//! path in the error, so a config mistake fails loudly before the run.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::KernelConfig;
use crate::scheduler::SchedulerConfig;
use crate::smmu::MemoryConfig;
use crate::sync::SyncConfig;
use crate::synthrk::SynthParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error at {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {field}: {message}")]
    Invalid { field: &'static str, message: String },
    #[error("config i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        message: message.into(),
    }
}

/// When the agent cluster re-synchronizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncPolicy {
    /// Pulse every `period` ticks.
    Periodic { period: u64 },
    /// Pulse at confirmed drift minima once armed, or on the hard threshold.
    Advantageous,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlicerBlock {
    /// Boundary threshold on the adjacent CID difference.
    pub epsilon: f64,
}

impl Default for SlicerBlock {
    fn default() -> Self {
        Self { epsilon: 0.15 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemoryBlock {
    /// L1 budget in tokens.
    pub k: u64,
    pub recency_weight: f64,
    pub l2_latency: u64,
    pub l3_latency: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l2_capacity: Option<u64>,
}

impl Default for MemoryBlock {
    fn default() -> Self {
        Self {
            k: 64,
            recency_weight: 0.5,
            l2_latency: 2,
            l3_latency: 8,
            l2_capacity: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerBlock {
    pub quantum: u64,
    pub switch_base: u64,
    pub reload_bandwidth: u64,
    pub aging_step: u32,
}

impl Default for SchedulerBlock {
    fn default() -> Self {
        let d = SchedulerConfig::default();
        Self {
            quantum: d.quantum,
            switch_base: d.switch_base,
            reload_bandwidth: d.reload_bandwidth,
            aging_step: d.aging_step,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyncBlock {
    pub lambda: f64,
    pub epsilon_drift: f64,
    pub epsilon_max: f64,
    pub soft_threshold: f64,
    pub dt: f64,
    pub policy: SyncPolicy,
    /// Evaluation window length in ticks for the empirical stability index.
    pub window: u64,
}

impl Default for SyncBlock {
    fn default() -> Self {
        let d = SyncConfig::default();
        Self {
            lambda: d.lambda,
            epsilon_drift: d.epsilon_drift,
            epsilon_max: d.epsilon_max,
            soft_threshold: d.soft_threshold,
            dt: d.dt,
            policy: SyncPolicy::Periodic { period: 50 },
            window: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthBlock {
    pub anchor_prob: f64,
    pub anchor_mass: f64,
    pub tool_prob: f64,
    pub noise_scale: f64,
    pub dim: usize,
    pub tool_latency: u64,
    pub payload_tokens: usize,
}

impl Default for SynthBlock {
    fn default() -> Self {
        let d = SynthParams::default();
        Self {
            anchor_prob: d.anchor_prob,
            anchor_mass: d.anchor_mass,
            tool_prob: d.tool_prob,
            noise_scale: d.noise_scale,
            dim: d.dim,
            tool_latency: 3,
            payload_tokens: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelBlock {
    pub theta_align: f64,
    pub dispatch_overhead: u64,
}

impl Default for KernelBlock {
    fn default() -> Self {
        Self {
            theta_align: 0.35,
            dispatch_overhead: 1,
        }
    }
}

/// The full scenario: the seed, the population sizes, the tick budget, and
/// one tuning block per subsystem.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub agents: u32,
    pub threads: u32,
    pub budget: u64,
    #[serde(default)]
    pub slicer: SlicerBlock,
    #[serde(default)]
    pub memory: MemoryBlock,
    #[serde(default)]
    pub scheduler: SchedulerBlock,
    #[serde(default)]
    pub sync: SyncBlock,
    #[serde(default)]
    pub synthrk: SynthBlock,
    #[serde(default)]
    pub kernel: KernelBlock,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            agents: 3,
            threads: 2,
            budget: 2000,
            slicer: SlicerBlock::default(),
            memory: MemoryBlock::default(),
            scheduler: SchedulerBlock::default(),
            sync: SyncBlock::default(),
            synthrk: SynthBlock::default(),
            kernel: KernelBlock::default(),
        }
    }
}

impl ScenarioConfig {
    /// Parses and validates a JSON scenario, reporting the failing field path.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let deserializer = &mut serde_json::Deserializer::from_str(text);
        let config: ScenarioConfig =
            serde_path_to_error::deserialize(deserializer).map_err(|e| ConfigError::Parse {
                path: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.agents < 1 {
            return Err(invalid("agents", "must be >= 1"));
        }
        if self.threads < 1 {
            return Err(invalid("threads", "must be >= 1"));
        }
        if !(self.slicer.epsilon > 0.0) {
            return Err(invalid("slicer.epsilon", "must be > 0"));
        }
        if self.memory.k < 1 {
            return Err(invalid("memory.k", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.memory.recency_weight) {
            return Err(invalid("memory.recency_weight", "must be in [0, 1]"));
        }
        if self.scheduler.quantum < 1 {
            return Err(invalid("scheduler.quantum", "must be >= 1"));
        }
        if self.scheduler.reload_bandwidth < 1 {
            return Err(invalid("scheduler.reload_bandwidth", "must be >= 1"));
        }
        if self.sync.lambda < 0.0 {
            return Err(invalid("sync.lambda", "must be >= 0"));
        }
        if !(self.sync.dt > 0.0) {
            return Err(invalid("sync.dt", "must be > 0"));
        }
        if !(self.sync.epsilon_max > 0.0) {
            return Err(invalid("sync.epsilon_max", "must be > 0"));
        }
        if self.sync.window < 1 {
            return Err(invalid("sync.window", "must be >= 1"));
        }
        if let SyncPolicy::Periodic { period } = self.sync.policy {
            if period < 1 {
                return Err(invalid("sync.policy.periodic.period", "must be >= 1"));
            }
        }
        if !(0.0..=1.0).contains(&self.synthrk.anchor_prob) {
            return Err(invalid("synthrk.anchor_prob", "must be in [0, 1]"));
        }
        if !(self.synthrk.anchor_mass > 0.0 && self.synthrk.anchor_mass < 1.0) {
            return Err(invalid("synthrk.anchor_mass", "must be in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.synthrk.tool_prob) {
            return Err(invalid("synthrk.tool_prob", "must be in [0, 1]"));
        }
        if self.synthrk.noise_scale < 0.0 {
            return Err(invalid("synthrk.noise_scale", "must be >= 0"));
        }
        if self.synthrk.dim < 1 {
            return Err(invalid("synthrk.dim", "must be >= 1"));
        }
        if self.synthrk.payload_tokens < 1 {
            return Err(invalid("synthrk.payload_tokens", "must be >= 1"));
        }
        if self.synthrk.payload_tokens as u64 > self.memory.k {
            return Err(invalid(
                "synthrk.payload_tokens",
                "tool payload cannot exceed the L1 capacity",
            ));
        }
        Ok(())
    }

    pub fn synth_params(&self) -> SynthParams {
        SynthParams {
            anchor_prob: self.synthrk.anchor_prob,
            anchor_mass: self.synthrk.anchor_mass,
            tool_prob: self.synthrk.tool_prob,
            noise_scale: self.synthrk.noise_scale,
            dim: self.synthrk.dim,
        }
    }

    pub fn memory_config(&self) -> MemoryConfig {
        MemoryConfig {
            l1_capacity_tokens: self.memory.k,
            recency_weight: self.memory.recency_weight,
            l2_latency: self.memory.l2_latency,
            l3_latency: self.memory.l3_latency,
            l2_capacity_tokens: self.memory.l2_capacity,
        }
    }

    pub fn scheduler_config(&self) -> SchedulerConfig {
        SchedulerConfig {
            quantum: self.scheduler.quantum,
            switch_base: self.scheduler.switch_base,
            reload_bandwidth: self.scheduler.reload_bandwidth,
            aging_step: self.scheduler.aging_step,
        }
    }

    pub fn sync_config(&self) -> SyncConfig {
        SyncConfig {
            lambda: self.sync.lambda,
            epsilon_drift: self.sync.epsilon_drift,
            epsilon_max: self.sync.epsilon_max,
            soft_threshold: self.sync.soft_threshold,
            dt: self.sync.dt,
        }
    }

    pub fn kernel_config(&self) -> KernelConfig {
        KernelConfig {
            theta_align: self.kernel.theta_align,
            dispatch_overhead: self.kernel.dispatch_overhead,
            tool_latency: self.synthrk.tool_latency,
            payload_tokens: self.synthrk.payload_tokens,
            slice_epsilon: self.slicer.epsilon,
            max_slice_tokens: self.memory.k,
            dim: self.synthrk.dim,
        }
    }
}
