//! Multi-agent coherence: instantaneous and cumulative drift, sync pulses,
//! the advantageous-timing policy, and stability estimation over simulated
//! divergence paths.

use thiserror::Error;

use crate::slicer::SemanticSlice;
use crate::synthrk::{GeneratorState, SynthParams};

#[derive(Debug, Error, PartialEq)]
pub enum SyncError {
    #[error("hidden-state dimensions disagree: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("drift series is not sorted by time at index {0}")]
    UnsortedSeries(usize),
    #[error("a sync pulse needs at least 2 agents, got {0}")]
    TooFewAgents(usize),
    #[error("invalid stability-estimate parameters: {0}")]
    InvalidParams(String),
}

/// Per-agent state in the synchronization subsystem.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub agent_id: u32,
    pub hidden: Vec<f64>,
    pub local_slices: Vec<SemanticSlice>,
    /// Accumulated cognitive drift; reset to exactly zero by a pulse.
    pub drift_meter: f64,
    /// Agent parameter seed feeding its dynamics stream.
    pub theta: u64,
}

#[derive(Debug, Clone)]
pub struct SyncConfig {
    /// Forgetting factor in the drift integral.
    pub lambda: f64,
    /// Hard pulse threshold on the drift meter.
    pub epsilon_drift: f64,
    /// Coherence bound used by the stability index.
    pub epsilon_max: f64,
    /// Drift level arming the advantageous-timing policy.
    pub soft_threshold: f64,
    /// Quadrature step in logical time.
    pub dt: f64,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            epsilon_drift: 5.0,
            epsilon_max: 8.0,
            soft_threshold: 2.0,
            dt: 1.0,
        }
    }
}

/// Euclidean distance between two hidden states.
pub fn instantaneous_drift(a: &[f64], b: &[f64]) -> Result<f64, SyncError> {
    if a.len() != b.len() {
        return Err(SyncError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// The shared reference state: the mean of all agent hidden vectors, the
/// unique point minimizing the sum of squared distances.
pub fn state_of_truth(agents: &[AgentState]) -> Vec<f64> {
    let dim = agents.first().map_or(0, |a| a.hidden.len());
    let mut mean = vec![0.0; dim];
    for agent in agents {
        for (m, v) in mean.iter_mut().zip(&agent.hidden) {
            *m += v;
        }
    }
    let k = agents.len() as f64;
    for m in mean.iter_mut() {
        *m /= k;
    }
    mean
}

/// Per-agent instantaneous drift against a shared reference state.
pub fn multi_agent_drift(agents: &[AgentState], global_ref: &[f64]) -> Result<Vec<f64>, SyncError> {
    agents
        .iter()
        .map(|a| instantaneous_drift(&a.hidden, global_ref))
        .collect()
}

/// Trapezoidal quadrature of `exp(-lambda (T - tau)) * delta(tau)` over a
/// time-sorted sample series. Exact for constant series at `lambda = 0`.
pub fn total_drift(series: &[(f64, f64)], lambda: f64, horizon: f64) -> Result<f64, SyncError> {
    for (i, pair) in series.windows(2).enumerate() {
        if pair[1].0 < pair[0].0 {
            return Err(SyncError::UnsortedSeries(i + 1));
        }
    }
    let weighted = |tau: f64, delta: f64| (-lambda * (horizon - tau)).exp() * delta;
    let mut acc = 0.0;
    for pair in series.windows(2) {
        let (t0, d0) = pair[0];
        let (t1, d1) = pair[1];
        acc += 0.5 * (weighted(t0, d0) + weighted(t1, d1)) * (t1 - t0);
    }
    Ok(acc)
}

/// Incremental form of the drift integral: each step of width `dt` decays
/// the accumulated value by `exp(-lambda dt)` and adds the trapezoid of the
/// newest segment. Matches `total_drift` over the same grid.
#[derive(Debug, Clone)]
pub struct DriftAccumulator {
    value: f64,
    last_delta: f64,
}

impl DriftAccumulator {
    pub fn new(initial_delta: f64) -> Self {
        Self {
            value: 0.0,
            last_delta: initial_delta,
        }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn step(&mut self, next_delta: f64, dt: f64, lambda: f64) -> f64 {
        let decay = (-lambda * dt).exp();
        self.value = decay * self.value + 0.5 * dt * (decay * self.last_delta + next_delta);
        self.last_delta = next_delta;
        self.value
    }

    pub fn reset(&mut self, delta: f64) {
        self.value = 0.0;
        self.last_delta = delta;
    }
}

/// Record of a slice discarded during pulse reconciliation: two different
/// hashes claimed the same logical time; the higher-importance one survived.
#[derive(Debug, Clone, PartialEq)]
pub struct ConflictRecord {
    pub logical_time: u64,
    pub kept: u64,
    pub discarded: u64,
}

/// Result of one sync pulse.
#[derive(Debug, Clone)]
pub struct PulseOutcome {
    pub unified_hidden: Vec<f64>,
    pub merged_slices: Vec<SemanticSlice>,
    pub conflicts: Vec<ConflictRecord>,
    /// Pairwise-alignment work: k(k-1)/2 for k agents.
    pub pairwise_ops: u64,
}

/// Executes a sync pulse: capture every agent's state, align the latent
/// states on their mean, aggregate the captured slices (deduplicated by
/// hash, same-time conflicts resolved by importance), rebroadcast the
/// unified state to every agent, and reset all drift meters to zero.
pub fn sync_pulse(agents: &mut [AgentState], logical_time: u64) -> Result<PulseOutcome, SyncError> {
    let k = agents.len();
    if k < 2 {
        return Err(SyncError::TooFewAgents(k));
    }
    let dim = agents[0].hidden.len();
    for agent in agents.iter() {
        if agent.hidden.len() != dim {
            return Err(SyncError::DimensionMismatch {
                left: dim,
                right: agent.hidden.len(),
            });
        }
    }

    let unified_hidden = state_of_truth(agents);

    // Capture and deduplicate by hash.
    let mut by_hash: std::collections::BTreeMap<u64, SemanticSlice> =
        std::collections::BTreeMap::new();
    for agent in agents.iter() {
        for slice in &agent.local_slices {
            by_hash.entry(slice.semantic_hash).or_insert_with(|| slice.clone());
        }
    }

    // Resolve same-logical-time conflicts: keep the highest importance,
    // break ties toward the smaller hash.
    let mut by_time: std::collections::BTreeMap<u64, Vec<SemanticSlice>> =
        std::collections::BTreeMap::new();
    for slice in by_hash.into_values() {
        by_time.entry(slice.created_at).or_default().push(slice);
    }
    let mut merged_slices = Vec::new();
    let mut conflicts = Vec::new();
    for (time, mut group) in by_time {
        group.sort_by(|a, b| {
            b.importance
                .partial_cmp(&a.importance)
                .expect("importance is finite")
                .then(a.semantic_hash.cmp(&b.semantic_hash))
        });
        let winner = group.remove(0);
        for loser in group {
            conflicts.push(ConflictRecord {
                logical_time: time,
                kept: winner.semantic_hash,
                discarded: loser.semantic_hash,
            });
        }
        merged_slices.push(winner);
    }
    merged_slices.sort_by_key(|s| (s.created_at, s.semantic_hash));

    for agent in agents.iter_mut() {
        agent.hidden = unified_hidden.clone();
        agent.local_slices = merged_slices.clone();
        agent.drift_meter = 0.0;
    }

    let _ = logical_time; // pulses are a zero-tick logical barrier
    Ok(PulseOutcome {
        unified_hidden,
        merged_slices,
        conflicts,
        pairwise_ops: (k as u64) * (k as u64 - 1) / 2,
    })
}

/// Timing decision for the next pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    SyncNow,
    Wait,
}

/// Advantageous-timing rule: fire when the drift meter is armed past the
/// soft threshold and the instantaneous drift just passed a strict local
/// minimum (confirmed one sample later), or unconditionally once the hard
/// drift threshold is crossed.
pub fn timing_policy(delta_history: &[f64], drift_meter: f64, config: &SyncConfig) -> Decision {
    if drift_meter >= config.epsilon_drift {
        return Decision::SyncNow;
    }
    if drift_meter >= config.soft_threshold && delta_history.len() >= 3 {
        let n = delta_history.len();
        let (a, b, c) = (
            delta_history[n - 3],
            delta_history[n - 2],
            delta_history[n - 1],
        );
        if a > b && b < c {
            return Decision::SyncNow;
        }
    }
    Decision::Wait
}

/// Divergence-process parameters for the parametric stability estimate.
#[derive(Debug, Clone, Copy)]
pub struct GbmParams {
    pub delta0: f64,
    pub mu: f64,
    pub sigma: f64,
    /// Time horizon the supremum is taken over.
    pub horizon: f64,
}

/// Monte-Carlo stability index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaEstimate {
    pub gamma: f64,
    pub trials: u64,
    pub std_error: f64,
}

/// Estimates the probability that accumulated drift stays below
/// `epsilon_max` over the horizon, by simulating geometric Brownian
/// divergence paths with exact log-normal steps and accumulating the drift
/// integral on the same grid. Trials are keyed by `(seed, trial index)`, so
/// the estimate is independent of execution order.
pub fn estimate_gamma(
    config: &SyncConfig,
    params: &GbmParams,
    trials: u64,
    seed: u64,
) -> Result<GammaEstimate, SyncError> {
    if trials < 1 {
        return Err(SyncError::InvalidParams("trials must be >= 1".into()));
    }
    if !(params.delta0 > 0.0) {
        return Err(SyncError::InvalidParams("delta0 must be > 0".into()));
    }
    if !(config.dt > 0.0) {
        return Err(SyncError::InvalidParams("dt must be > 0".into()));
    }
    if !(params.horizon > 0.0) {
        return Err(SyncError::InvalidParams("horizon must be > 0".into()));
    }
    if params.sigma < 0.0 {
        return Err(SyncError::InvalidParams("sigma must be >= 0".into()));
    }
    if config.lambda < 0.0 {
        return Err(SyncError::InvalidParams("lambda must be >= 0".into()));
    }

    // Snap the grid so the final step lands exactly on the horizon.
    let steps = ((params.horizon / config.dt).round() as u64).max(1);
    let dt = params.horizon / steps as f64;
    let drift_term = (params.mu - 0.5 * params.sigma * params.sigma) * dt;
    let vol_term = params.sigma * dt.sqrt();

    let mut below = 0u64;
    for trial in 0..trials {
        let mut gen = GeneratorState::with_stream(seed, trial, SynthParams::default());
        let mut delta = params.delta0;
        let mut acc = DriftAccumulator::new(delta);
        let mut sup: f64 = 0.0;
        for _ in 0..steps {
            let z = gen.next_normal();
            delta *= (drift_term + vol_term * z).exp();
            sup = sup.max(acc.step(delta, dt, config.lambda));
        }
        if sup < config.epsilon_max {
            below += 1;
        }
    }
    let gamma = below as f64 / trials as f64;
    Ok(GammaEstimate {
        gamma,
        trials,
        std_error: (gamma * (1.0 - gamma) / trials as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slicer::{SliceStatus, semantic_hash};
    use crate::synthrk::SplitMix64;
    use proptest::prelude::*;

    fn agent(id: u32, hidden: Vec<f64>) -> AgentState {
        AgentState {
            agent_id: id,
            hidden,
            local_slices: Vec::new(),
            drift_meter: 1.0,
            theta: id as u64,
        }
    }

    fn slice_at(time: u64, ids: &[u64], importance: f64) -> SemanticSlice {
        SemanticSlice {
            slice_id: time,
            token_range: (1, ids.len()),
            semantic_hash: semantic_hash(ids),
            token_ids: ids.to_vec(),
            schema: vec![0.0; 2],
            importance,
            status: SliceStatus::Active,
            created_at: time,
        }
    }

    #[test]
    fn drift_basics() {
        assert_eq!(instantaneous_drift(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let d = instantaneous_drift(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((d - 1.4142135623730951).abs() < 1e-15);
        assert!(matches!(
            instantaneous_drift(&[1.0], &[1.0, 2.0]),
            Err(SyncError::DimensionMismatch { left: 1, right: 2 })
        ));
    }

    // Component-wise summation oracle on a seeded pair.
    #[test]
    fn drift_matches_naive_loop() {
        let mut g = SplitMix64::new(404);
        let a: Vec<f64> = (0..4).map(|_| g.uniform_open01()).collect();
        let b: Vec<f64> = (0..4).map(|_| g.uniform_open01()).collect();
        let mut acc = 0.0;
        for k in 0..4 {
            acc += (a[k] - b[k]) * (a[k] - b[k]);
        }
        let expected = acc.sqrt();
        assert_eq!(instantaneous_drift(&a, &b).unwrap(), expected);
    }

    #[test]
    fn total_drift_rectangle_case() {
        let series: Vec<(f64, f64)> = (0..=10).map(|i| (i as f64 / 10.0, 2.0)).collect();
        let v = total_drift(&series, 0.0, 1.0).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
    }

    // Closed form c (1 - exp(-lambda T)) / lambda.
    #[test]
    fn total_drift_exponential_case() {
        let dt = 1e-3;
        let series: Vec<(f64, f64)> = (0..=1000).map(|i| (i as f64 * dt, 3.0)).collect();
        let v = total_drift(&series, 1.0, 1.0).unwrap();
        let expected = 3.0 * (1.0 - (-1.0f64).exp());
        assert!((v - expected).abs() < 1e-4, "got {v}, expected {expected}");
        assert!((expected - 1.896361676485673).abs() < 1e-12);
    }

    #[test]
    fn total_drift_zero_integrand() {
        let series: Vec<(f64, f64)> = (0..=5).map(|i| (i as f64, 0.0)).collect();
        for lambda in [0.0, 0.5, 3.0] {
            assert_eq!(total_drift(&series, lambda, 5.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn total_drift_rejects_unsorted() {
        let series = vec![(0.0, 1.0), (2.0, 1.0), (1.0, 1.0)];
        assert_eq!(
            total_drift(&series, 0.0, 2.0).unwrap_err(),
            SyncError::UnsortedSeries(2)
        );
    }

    #[test]
    fn accumulator_matches_batch_quadrature() {
        let lambda = 0.7;
        let dt = 0.01;
        let deltas: Vec<f64> = (0..=200).map(|i| (i as f64 * 0.13).sin().abs()).collect();
        let mut acc = DriftAccumulator::new(deltas[0]);
        for d in &deltas[1..] {
            acc.step(*d, dt, lambda);
        }
        let horizon = 200.0 * dt;
        let series: Vec<(f64, f64)> = deltas
            .iter()
            .enumerate()
            .map(|(i, &d)| (i as f64 * dt, d))
            .collect();
        let batch = total_drift(&series, lambda, horizon).unwrap();
        assert!((acc.value() - batch).abs() < 1e-9);
    }

    #[test]
    fn multi_agent_drift_examples() {
        let agents = vec![agent(0, vec![1.0, 0.0]), agent(1, vec![-1.0, 0.0])];
        let global = state_of_truth(&agents);
        assert_eq!(global, vec![0.0, 0.0]);
        let drifts = multi_agent_drift(&agents, &global).unwrap();
        assert_eq!(drifts, vec![1.0, 1.0]);

        let same = vec![agent(0, vec![0.3, 0.4]), agent(1, vec![0.3, 0.4])];
        let drifts = multi_agent_drift(&same, &state_of_truth(&same)).unwrap();
        assert!(drifts.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn multi_agent_drift_seeded_oracle() {
        let mut g = SplitMix64::new(88);
        let agents: Vec<AgentState> = (0..3)
            .map(|i| agent(i, (0..4).map(|_| g.uniform_open01()).collect()))
            .collect();
        let global = state_of_truth(&agents);
        for k in 0..4 {
            let mean = (agents[0].hidden[k] + agents[1].hidden[k] + agents[2].hidden[k]) / 3.0;
            assert!((global[k] - mean).abs() < 1e-15);
        }
        let drifts = multi_agent_drift(&agents, &global).unwrap();
        for (a, d) in agents.iter().zip(&drifts) {
            assert_eq!(*d, instantaneous_drift(&a.hidden, &global).unwrap());
        }
    }

    #[test]
    fn pulse_unifies_and_resets() {
        let mut agents = vec![agent(0, vec![1.0, 0.0]), agent(1, vec![0.0, 1.0])];
        let outcome = sync_pulse(&mut agents, 10).unwrap();
        assert_eq!(outcome.unified_hidden, vec![0.5, 0.5]);
        assert_eq!(outcome.pairwise_ops, 1);
        for a in &agents {
            assert_eq!(a.hidden, vec![0.5, 0.5]);
            assert_eq!(a.drift_meter, 0.0);
        }
        let d = instantaneous_drift(&agents[0].hidden, &agents[1].hidden).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn pulse_is_fixpoint_for_identical_agents() {
        let mut agents: Vec<AgentState> =
            (0..4).map(|i| agent(i, vec![0.1, 0.2, 0.3])).collect();
        let outcome = sync_pulse(&mut agents, 0).unwrap();
        assert_eq!(outcome.unified_hidden, vec![0.1, 0.2, 0.3]);
        assert_eq!(outcome.pairwise_ops, 6);
    }

    #[test]
    fn pulse_requires_two_agents() {
        let mut one = vec![agent(0, vec![1.0])];
        assert_eq!(
            sync_pulse(&mut one, 0).unwrap_err(),
            SyncError::TooFewAgents(1)
        );
    }

    #[test]
    fn pulse_pairwise_counter_is_quadratic() {
        for k in [2usize, 4, 8, 16] {
            let mut agents: Vec<AgentState> =
                (0..k as u32).map(|i| agent(i, vec![i as f64, 1.0])).collect();
            let outcome = sync_pulse(&mut agents, 0).unwrap();
            assert_eq!(outcome.pairwise_ops, (k * (k - 1) / 2) as u64);
        }
    }

    #[test]
    fn pulse_dedupes_and_resolves_conflicts() {
        let shared = slice_at(5, &[1, 2], 0.4);
        let strong = slice_at(7, &[3, 4], 0.9);
        let weak = slice_at(7, &[5, 6], 0.2);
        let mut agents = vec![agent(0, vec![1.0, 0.0]), agent(1, vec![0.0, 1.0])];
        agents[0].local_slices = vec![shared.clone(), strong.clone()];
        agents[1].local_slices = vec![shared.clone(), weak.clone()];
        let outcome = sync_pulse(&mut agents, 8).unwrap();
        let hashes: Vec<u64> = outcome.merged_slices.iter().map(|s| s.semantic_hash).collect();
        assert_eq!(hashes, vec![shared.semantic_hash, strong.semantic_hash]);
        assert_eq!(
            outcome.conflicts,
            vec![ConflictRecord {
                logical_time: 7,
                kept: strong.semantic_hash,
                discarded: weak.semantic_hash,
            }]
        );
        for a in &agents {
            assert_eq!(a.local_slices.len(), 2);
        }
    }

    #[test]
    fn timing_policy_rules() {
        let config = SyncConfig {
            soft_threshold: 2.0,
            epsilon_drift: 5.0,
            ..SyncConfig::default()
        };
        // Never armed: waits forever regardless of history shape.
        assert_eq!(timing_policy(&[3.0, 1.0, 2.0], 1.9, &config), Decision::Wait);
        // Armed and a confirmed local minimum.
        assert_eq!(
            timing_policy(&[3.0, 2.0, 1.0, 2.0], 2.5, &config),
            Decision::SyncNow
        );
        // Armed but drift still falling: not confirmable yet.
        assert_eq!(
            timing_policy(&[3.0, 2.0, 1.0], 2.5, &config),
            Decision::Wait
        );
        // Hard guard fires on monotone-increasing drift.
        assert_eq!(
            timing_policy(&[1.0, 2.0, 3.0], 5.0, &config),
            Decision::SyncNow
        );
        // Short history: only the hard guard can fire.
        assert_eq!(timing_policy(&[1.0], 2.5, &config), Decision::Wait);
        assert_eq!(timing_policy(&[1.0], 6.0, &config), Decision::SyncNow);
    }

    fn gamma_config(epsilon_max: f64, lambda: f64, dt: f64) -> SyncConfig {
        SyncConfig {
            lambda,
            epsilon_max,
            dt,
            ..SyncConfig::default()
        }
    }

    #[test]
    fn gamma_certain_event_with_infinite_bound() {
        let est = estimate_gamma(
            &gamma_config(f64::INFINITY, 0.0, 0.01),
            &GbmParams { delta0: 1.0, mu: 0.5, sigma: 0.8, horizon: 1.0 },
            200,
            7,
        )
        .unwrap();
        assert_eq!(est.gamma, 1.0);
        assert_eq!(est.std_error, 0.0);
    }

    // Zero volatility, zero drift: the accumulated drift is exactly the
    // horizon, so the bound decides the outcome deterministically.
    #[test]
    fn gamma_degenerate_closed_form() {
        let params = GbmParams { delta0: 1.0, mu: 0.0, sigma: 0.0, horizon: 1.0 };
        let hi = estimate_gamma(&gamma_config(1.5, 0.0, 1e-3), &params, 50, 1).unwrap();
        assert_eq!(hi.gamma, 1.0);
        let lo = estimate_gamma(&gamma_config(0.5, 0.0, 1e-3), &params, 50, 1).unwrap();
        assert_eq!(lo.gamma, 0.0);
    }

    #[test]
    fn gamma_is_deterministic_bit_for_bit() {
        let config = gamma_config(2.0, 0.2, 0.01);
        let params = GbmParams { delta0: 1.0, mu: 0.1, sigma: 0.5, horizon: 1.0 };
        let a = estimate_gamma(&config, &params, 10_000, 42).unwrap();
        let b = estimate_gamma(&config, &params, 10_000, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.std_error <= 0.5 / (10_000f64).sqrt());
    }

    #[test]
    fn gamma_monotone_in_epsilon_max() {
        let params = GbmParams { delta0: 1.0, mu: 0.2, sigma: 0.6, horizon: 1.0 };
        let mut prev = 0.0;
        for eps in [0.3, 0.6, 1.0, 1.5, 2.5, 4.0] {
            let est = estimate_gamma(&gamma_config(eps, 0.1, 0.01), &params, 2_000, 9).unwrap();
            assert!(est.gamma >= prev, "gamma fell from {prev} to {} at {eps}", est.gamma);
            prev = est.gamma;
        }
    }

    #[test]
    fn gamma_rejects_invalid_params() {
        let config = gamma_config(1.0, 0.0, 0.01);
        let good = GbmParams { delta0: 1.0, mu: 0.0, sigma: 0.1, horizon: 1.0 };
        assert!(estimate_gamma(&config, &good, 0, 1).is_err());
        assert!(estimate_gamma(&config, &GbmParams { delta0: 0.0, ..good }, 10, 1).is_err());
        assert!(estimate_gamma(&config, &GbmParams { sigma: -1.0, ..good }, 10, 1).is_err());
        assert!(estimate_gamma(&gamma_config(1.0, 0.0, 0.0), &good, 10, 1).is_err());
    }

    // A.3 without pulses: the accumulated drift of noisy agents keeps
    // growing (lambda = 0 integral of a positive signal).
    #[test]
    fn unsynchronized_drift_grows_without_bound() {
        let params = SynthParams { noise_scale: 0.15, dim: 4, ..SynthParams::default() };
        let checkpoints = [100usize, 200, 400];
        let mut means = vec![0.0; checkpoints.len()];
        for seed in 0..10u64 {
            let mut gens: Vec<GeneratorState> = (0..3)
                .map(|i| GeneratorState::with_stream(seed, 0x100 + i, params.clone()))
                .collect();
            let mut hidden: Vec<Vec<f64>> = vec![
                vec![1.0, 0.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0],
            ];
            let mean0: Vec<f64> = (0..4)
                .map(|k| hidden.iter().map(|h| h[k]).sum::<f64>() / 3.0)
                .collect();
            let d0 = instantaneous_drift(&hidden[0], &mean0).unwrap();
            let mut acc = DriftAccumulator::new(d0);
            for step in 1..=400usize {
                let global: Vec<f64> = (0..4)
                    .map(|k| hidden.iter().map(|h| h[k]).sum::<f64>() / 3.0)
                    .collect();
                for (h, g) in hidden.iter_mut().zip(gens.iter_mut()) {
                    *h = g.agent_evolve(h, &global);
                }
                let global: Vec<f64> = (0..4)
                    .map(|k| hidden.iter().map(|h| h[k]).sum::<f64>() / 3.0)
                    .collect();
                let d = instantaneous_drift(&hidden[0], &global).unwrap();
                acc.step(d, 1.0, 0.0);
                if let Some(pos) = checkpoints.iter().position(|&c| c == step) {
                    means[pos] += acc.value() / 10.0;
                }
            }
        }
        assert!(means[0] < means[1] && means[1] < means[2], "drift means {means:?}");
        assert!(means[0] > 0.0);
    }

    proptest! {
        // Metric properties on random triples.
        #[test]
        fn drift_is_a_metric(
            a in proptest::collection::vec(-10.0..10.0f64, 4),
            b in proptest::collection::vec(-10.0..10.0f64, 4),
            c in proptest::collection::vec(-10.0..10.0f64, 4),
        ) {
            let dab = instantaneous_drift(&a, &b).unwrap();
            let dba = instantaneous_drift(&b, &a).unwrap();
            let dac = instantaneous_drift(&a, &c).unwrap();
            let dcb = instantaneous_drift(&c, &b).unwrap();
            prop_assert!(dab >= 0.0);
            prop_assert_eq!(dab, dba);
            prop_assert!(dab <= dac + dcb + 1e-12);
            prop_assert_eq!(instantaneous_drift(&a, &a).unwrap(), 0.0);
        }

        // With lambda = 0 and non-negative drift the integral can only grow.
        #[test]
        fn total_drift_monotone_in_horizon(
            deltas in proptest::collection::vec(0.0..5.0f64, 3..40),
        ) {
            let series: Vec<(f64, f64)> = deltas
                .iter()
                .enumerate()
                .map(|(i, &d)| (i as f64, d))
                .collect();
            let n = series.len();
            let mut prev = 0.0;
            for end in 2..=n {
                let horizon = (end - 1) as f64;
                let v = total_drift(&series[..end], 0.0, horizon).unwrap();
                prop_assert!(v >= prev - 1e-12);
                prev = v;
            }
        }
    }
}
