//! Scaling experiments: the thrashing sweep over thread counts and the
//! sync-cost sweep over agent counts with collapse-point detection.

use crate::trace::{fmt_f64, EventTrace};

use super::config::{ConfigError, ScenarioConfig, SyncPolicy};
use super::metrics::compute_metrics;
use super::scenario::{run_schedule, run_scenario};

/// One point of the thrashing sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThrashPoint {
    pub threads: u32,
    pub overhead_fraction: f64,
}

/// Runs the homogeneous thrashing benchmark for each thread count: identical
/// priority-1 threads, no tool calls, pure least-recently-used eviction so
/// resident footprints stay flat, and one fixed seed across the sweep.
pub fn experiment_thrash(
    thread_counts: &[u32],
    config: &ScenarioConfig,
) -> Result<(Vec<ThrashPoint>, Vec<EventTrace>), ConfigError> {
    let mut benchmark = config.clone();
    benchmark.synthrk.tool_prob = 0.0;
    benchmark.memory.recency_weight = 1.0;
    let mut points = Vec::with_capacity(thread_counts.len());
    let mut traces = Vec::with_capacity(thread_counts.len());
    for &n in thread_counts {
        let (report, trace) = run_schedule(n, benchmark.budget, &benchmark)?;
        points.push(ThrashPoint {
            threads: n,
            overhead_fraction: report.overhead_fraction,
        });
        traces.push(trace);
    }
    Ok((points, traces))
}

pub fn thrash_csv(points: &[ThrashPoint]) -> String {
    let mut out = String::from("threads,overhead_fraction\n");
    for p in points {
        out.push_str(&format!("{},{}\n", p.threads, fmt_f64(p.overhead_fraction)));
    }
    out
}

/// One row of the sync-cost sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncCostRow {
    pub agents: u32,
    pub pulses: u64,
    /// Total pairwise-alignment operations: pulses * k(k-1)/2.
    pub pairwise_ops: u64,
    pub cum_sync_cost: u64,
    pub cum_inference_gain: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncCostReport {
    pub rows: Vec<SyncCostRow>,
    /// First agent count whose cumulative sync cost exceeds the cumulative
    /// inference gain, if any.
    pub collapse_point: Option<u32>,
}

/// Sweeps the agent count and accounts reconciliation work against
/// information-gain tokens. `agent_counts` must be ascending.
pub fn experiment_sync_cost(
    agent_counts: &[u32],
    config: &ScenarioConfig,
) -> Result<SyncCostReport, ConfigError> {
    if agent_counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ConfigError::Invalid {
            field: "agents",
            message: "agent counts must be strictly ascending".into(),
        });
    }
    let mut rows = Vec::with_capacity(agent_counts.len());
    let mut collapse_point = None;
    for &k in agent_counts {
        let mut scenario = config.clone();
        scenario.agents = k;
        let (trace, report) = run_scenario(&scenario)?;
        let _ = compute_metrics(&trace);
        let per_pulse = (k as u64) * (k as u64 - 1) / 2;
        let pairwise_ops = report.pulse_count * per_pulse;
        let row = SyncCostRow {
            agents: k,
            pulses: report.pulse_count,
            pairwise_ops,
            cum_sync_cost: pairwise_ops,
            cum_inference_gain: report.gain_tokens,
        };
        if collapse_point.is_none() && row.cum_sync_cost > row.cum_inference_gain {
            collapse_point = Some(k);
        }
        rows.push(row);
    }
    Ok(SyncCostReport {
        rows,
        collapse_point,
    })
}

pub fn sync_cost_csv(report: &SyncCostReport) -> String {
    let mut out = String::from("agents,pulses,pairwise_ops,cum_sync_cost,cum_inference_gain\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.agents, r.pulses, r.pairwise_ops, r.cum_sync_cost, r.cum_inference_gain
        ));
    }
    out
}

/// Ordinary least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|(x, _)| x.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, y)| y.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

/// Scenario variant used by the thrash acceptance run: tuned so the
/// steady-state penalty is identical for every thread count.
pub fn homogeneous_thrash_config(seed: u64, budget: u64) -> ScenarioConfig {
    let mut config = ScenarioConfig::default();
    config.seed = seed;
    config.budget = budget;
    config.synthrk.tool_prob = 0.0;
    config.memory.recency_weight = 1.0;
    config.sync.policy = SyncPolicy::Periodic { period: budget };
    config
}
