//! Synthetic reasoning-kernel substrate.
//!
//! Everything the simulator would normally obtain from a live model is
//! produced here instead: attention rows with plantable anchors, token and
//! embedding streams, agent hidden-state dynamics, and tool-device payloads.
//! All of it is driven by splitmix64 so that a `(seed, config)` pair pins the
//! entire run down to the bit, on any platform.

use crate::slicer::AttentionRow;

/// Reserved range marker: any token id with the top bit set is a tool request.
pub const TOOL_REQUEST_BASE: u64 = 1 << 63;

/// Salt mixed into a token id when deriving its embedding stream, so the
/// embedding map and the main token stream never alias.
const EMBED_SALT: u64 = 0xa24b_aed4_963e_e407;

/// Returns true when `token` falls in the reserved tool-request range.
pub fn is_tool_request(token: u64) -> bool {
    token >= TOOL_REQUEST_BASE
}

/// Device id carried in the low byte of a tool-request token.
pub fn tool_device_id(token: u64) -> u8 {
    (token & 0xff) as u8
}

/// splitmix64 generator. The state update and output mix follow the standard
/// reference recurrence; outputs are bit-exact across languages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in the open interval (0, 1): take the top 53 bits, scale by
    /// 2^-53, and re-draw on an exact zero so `ln(u)` is always finite.
    #[inline]
    pub fn uniform_open01(&mut self) -> f64 {
        loop {
            let u = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            if u > 0.0 {
                return u;
            }
        }
    }
}

/// Tunable parameters for the synthetic streams.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    /// Probability that a position is marked as a semantic anchor.
    pub anchor_prob: f64,
    /// Mass concentrated on the anchor target, in (0, 1).
    pub anchor_mass: f64,
    /// Probability that an emitted token is a tool request.
    pub tool_prob: f64,
    /// Agent dynamics noise scale.
    pub noise_scale: f64,
    /// Embedding / hidden-state dimension.
    pub dim: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            anchor_prob: 0.08,
            anchor_mass: 0.6,
            tool_prob: 0.05,
            noise_scale: 0.05,
            dim: 8,
        }
    }
}

/// One step of the synthetic token stream.
#[derive(Debug, Clone, PartialEq)]
pub struct GenStep {
    pub token_id: u64,
    pub embedding: Vec<f64>,
    pub is_tool_request: bool,
}

/// Seeded generator state: the PRNG, the stream parameters, anchor positions
/// planted so far, and a spare slot for the polar normal sampler.
#[derive(Debug, Clone)]
pub struct GeneratorState {
    prng: SplitMix64,
    pub params: SynthParams,
    anchors: Vec<usize>,
    normal_spare: Option<f64>,
}

impl GeneratorState {
    pub fn new(seed: u64, params: SynthParams) -> Self {
        Self {
            prng: SplitMix64::new(seed),
            params,
            anchors: Vec::new(),
            normal_spare: None,
        }
    }

    /// The sanctioned way to derive an independent parallel stream: reseed
    /// with `seed ^ stream_id`. Anchor history does not carry over.
    pub fn with_stream(seed: u64, stream_id: u64, params: SynthParams) -> Self {
        Self::new(seed ^ stream_id, params)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.prng.next_u64()
    }

    #[inline]
    pub fn uniform_open01(&mut self) -> f64 {
        self.prng.uniform_open01()
    }

    /// Standard normal via the Marsaglia polar method on the open-interval
    /// uniform recipe. Pairs are generated at once; the second value is
    /// cached, so draw order is reproducible call by call.
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.normal_spare.take() {
            return z;
        }
        loop {
            let v1 = 2.0 * self.uniform_open01() - 1.0;
            let v2 = 2.0 * self.uniform_open01() - 1.0;
            let s = v1 * v1 + v2 * v2;
            if s >= 1.0 || s == 0.0 {
                continue;
            }
            let f = (-2.0 * s.ln() / s).sqrt();
            self.normal_spare = Some(v2 * f);
            return v1 * f;
        }
    }

    /// Generates the attention row for position `t` (1-based).
    ///
    /// Recipe, in draw order: `t` exponentials `e_j = -ln(u_j)`, then one
    /// uniform for the anchor decision (marking `t` itself with probability
    /// `anchor_prob`). The final row is
    /// `normalize((1 - beta) * e + beta * one_hot(target))` where the target
    /// is the nearest anchor at or before `t`, falling back to `t`.
    pub fn gen_attention_row(&mut self, t: usize) -> AttentionRow {
        assert!(t >= 1, "attention rows are 1-based");
        let mut weights: Vec<f64> = (0..t).map(|_| -self.uniform_open01().ln()).collect();
        if self.uniform_open01() < self.params.anchor_prob {
            self.anchors.push(t);
        }
        let target = self
            .anchors
            .iter()
            .rev()
            .find(|&&a| a <= t)
            .copied()
            .unwrap_or(t);
        let beta = self.params.anchor_mass;
        for w in weights.iter_mut() {
            *w *= 1.0 - beta;
        }
        weights[target - 1] += beta;
        let sum: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= sum;
        }
        AttentionRow {
            position: t,
            weights,
        }
    }

    /// Emits the next token. Tool requests carry their device id in the low
    /// byte; ordinary tokens have the top bit cleared so the two ranges never
    /// overlap. The embedding is the pure per-token map, so re-coding the
    /// same token id always reproduces the same vector.
    pub fn gen_step(&mut self) -> GenStep {
        let raw = self.next_u64();
        let is_tool = self.uniform_open01() < self.params.tool_prob;
        let token_id = if is_tool {
            TOOL_REQUEST_BASE | (raw & 0xff)
        } else {
            raw & !TOOL_REQUEST_BASE
        };
        GenStep {
            embedding: embedding_for_token(token_id, self.params.dim),
            token_id,
            is_tool_request: is_tool,
        }
    }

    /// One step of the agent hidden-state dynamics:
    /// `h' = normalize(0.9 h + 0.1 g + rho * noise)` with noise components
    /// uniform in [-1, 1]. The noise draws happen even at `rho = 0` so the
    /// stream position does not depend on the noise scale.
    pub fn agent_evolve(&mut self, hidden: &[f64], global_signal: &[f64]) -> Vec<f64> {
        assert_eq!(
            hidden.len(),
            global_signal.len(),
            "agent_evolve dimension mismatch"
        );
        let rho = self.params.noise_scale;
        let mut out: Vec<f64> = hidden
            .iter()
            .zip(global_signal)
            .map(|(h, g)| 0.9 * h + 0.1 * g)
            .collect();
        for v in out.iter_mut() {
            *v += rho * (2.0 * self.uniform_open01() - 1.0);
        }
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return hidden.to_vec();
        }
        for v in out.iter_mut() {
            *v /= norm;
        }
        out
    }
}

/// Pure per-token embedding map: `dim` values in [-1, 1] from a splitmix
/// stream seeded by the token id. Equal ids always map to equal vectors.
pub fn embedding_for_token(token_id: u64, dim: usize) -> Vec<f64> {
    let mut g = SplitMix64::new(token_id ^ EMBED_SALT);
    (0..dim).map(|_| 2.0 * g.uniform_open01() - 1.0).collect()
}

/// Deterministic stub for external tool devices. Payloads are keyed purely
/// by `(device_id, call_ordinal)` on top of the bus seed, so the same call
/// always returns the same bytes regardless of global stream position.
#[derive(Debug, Clone)]
pub struct ToolBus {
    seed: u64,
    /// Ticks charged per call.
    pub latency: u64,
    /// Payload length in re-codable 8-byte tokens.
    pub payload_tokens: usize,
}

impl ToolBus {
    pub fn new(seed: u64, latency: u64, payload_tokens: usize) -> Self {
        Self {
            seed,
            latency,
            payload_tokens,
        }
    }

    /// Returns the raw payload and the tick cost of the call.
    pub fn call(&self, device_id: u8, call_ordinal: u64) -> (Vec<u8>, u64) {
        let key = crate::slicer::semantic_hash(&[device_id as u64, call_ordinal]);
        let mut g = SplitMix64::new(self.seed ^ key);
        let mut bytes = Vec::with_capacity(self.payload_tokens * 8);
        for _ in 0..self.payload_tokens {
            bytes.extend_from_slice(&g.next_u64().to_le_bytes());
        }
        (bytes, self.latency)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values computed from the splitmix64 recurrence directly.
    #[test]
    fn splitmix_reference_outputs() {
        let mut g = SplitMix64::new(0);
        assert_eq!(g.next_u64(), 0xe220a8397b1dcdaf);
        assert_eq!(g.next_u64(), 0x6e789e6aa1b965f4);
        assert_eq!(g.next_u64(), 0x06c45d188009454f);
        let mut g1 = SplitMix64::new(1);
        assert_eq!(g1.next_u64(), 0x910a2dec89025cc1);
        let mut g2 = SplitMix64::new(2);
        assert_eq!(g2.next_u64(), 0x975835de1c9756ce);
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = SplitMix64::new(1234);
        let mut b = SplitMix64::new(1234);
        for _ in 0..64 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_differ_at_first_output() {
        let mut a = SplitMix64::new(1);
        let mut b = SplitMix64::new(2);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn uniform_is_open_interval() {
        let mut g = SplitMix64::new(7);
        for _ in 0..10_000 {
            let u = g.uniform_open01();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    // Independent replay of the documented row recipe.
    fn oracle_row(seed: u64, params: &SynthParams, rows_up_to: usize) -> Vec<Vec<f64>> {
        let mut prng = SplitMix64::new(seed);
        let mut anchors: Vec<usize> = Vec::new();
        let mut out = Vec::new();
        for t in 1..=rows_up_to {
            let mut e: Vec<f64> = (0..t).map(|_| -prng.uniform_open01().ln()).collect();
            if prng.uniform_open01() < params.anchor_prob {
                anchors.push(t);
            }
            let target = anchors.iter().rev().find(|&&a| a <= t).copied().unwrap_or(t);
            for w in e.iter_mut() {
                *w *= 1.0 - params.anchor_mass;
            }
            e[target - 1] += params.anchor_mass;
            let s: f64 = e.iter().sum();
            for w in e.iter_mut() {
                *w /= s;
            }
            out.push(e);
        }
        out
    }

    #[test]
    fn attention_row_matches_recipe_oracle() {
        let params = SynthParams {
            anchor_prob: 0.5,
            ..SynthParams::default()
        };
        let mut gen = GeneratorState::new(99, params.clone());
        let expected = oracle_row(99, &params, 6);
        for (t, exp) in (1..=6).zip(expected) {
            let row = gen.gen_attention_row(t);
            assert_eq!(row.weights, exp, "row {t} diverged from the recipe");
        }
    }

    #[test]
    fn generated_rows_are_stochastic() {
        let mut gen = GeneratorState::new(3, SynthParams::default());
        for t in 1..=200 {
            let row = gen.gen_attention_row(t);
            assert_eq!(row.weights.len(), t);
            let sum: f64 = row.weights.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(row.weights.iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn anchor_mass_near_one_concentrates_row() {
        let params = SynthParams {
            anchor_prob: 1.0,
            anchor_mass: 0.999_999,
            ..SynthParams::default()
        };
        let mut gen = GeneratorState::new(5, params);
        gen.gen_attention_row(1);
        let row = gen.gen_attention_row(4);
        // Anchor planted at position 1; nearly all mass must sit there.
        assert!(row.weights[0] > 0.999);
        let cid = crate::slicer::cid(&row).unwrap();
        assert!(cid > 0.99);
    }

    #[test]
    fn beta_zero_is_pure_normalized_exponentials() {
        let params = SynthParams {
            anchor_prob: 1.0,
            anchor_mass: 0.0,
            ..SynthParams::default()
        };
        let mut gen = GeneratorState::new(11, params);
        let row = gen.gen_attention_row(5);
        let mut prng = SplitMix64::new(11);
        let mut e: Vec<f64> = (0..5).map(|_| -prng.uniform_open01().ln()).collect();
        let _anchor_draw = prng.uniform_open01();
        let s: f64 = e.iter().sum();
        for w in e.iter_mut() {
            *w /= s;
        }
        assert_eq!(row.weights, e);
    }

    #[test]
    fn tool_probability_extremes() {
        let mut never = GeneratorState::new(1, SynthParams {
            tool_prob: 0.0,
            ..SynthParams::default()
        });
        let mut always = GeneratorState::new(1, SynthParams {
            tool_prob: 1.0,
            ..SynthParams::default()
        });
        for _ in 0..500 {
            assert!(!never.gen_step().is_tool_request);
            let step = always.gen_step();
            assert!(step.is_tool_request);
            assert!(is_tool_request(step.token_id));
        }
    }

    #[test]
    fn token_ranges_are_disjoint() {
        let mut gen = GeneratorState::new(77, SynthParams {
            tool_prob: 0.5,
            ..SynthParams::default()
        });
        for _ in 0..2000 {
            let step = gen.gen_step();
            assert_eq!(step.is_tool_request, is_tool_request(step.token_id));
        }
    }

    #[test]
    fn fixed_seed_fixes_tool_positions() {
        let params = SynthParams {
            tool_prob: 0.3,
            ..SynthParams::default()
        };
        let run = |seed| -> Vec<bool> {
            let mut g = GeneratorState::new(seed, params.clone());
            (0..200).map(|_| g.gen_step().is_tool_request).collect()
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }

    #[test]
    fn embedding_map_is_pure_and_bounded() {
        let a = embedding_for_token(12345, 8);
        let b = embedding_for_token(12345, 8);
        assert_eq!(a, b);
        assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_ne!(embedding_for_token(1, 8), embedding_for_token(2, 8));
    }

    #[test]
    fn agent_evolve_fixpoint_without_noise() {
        let mut gen = GeneratorState::new(1, SynthParams {
            noise_scale: 0.0,
            dim: 4,
            ..SynthParams::default()
        });
        let v = vec![0.5, 0.5, 0.5, 0.5];
        let out = gen.agent_evolve(&v, &v);
        for (a, b) in out.iter().zip(&v) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn agent_evolve_contracts_without_noise() {
        let params = SynthParams {
            noise_scale: 0.0,
            dim: 4,
            ..SynthParams::default()
        };
        let mut ga = GeneratorState::new(8, params.clone());
        let mut a = vec![1.0, 0.0, 0.0, 0.0];
        let mut b = vec![0.0, 1.0, 0.0, 0.0];
        let mut prev = crate::sync::instantaneous_drift(&a, &b).unwrap();
        for _ in 0..100 {
            let mean: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            a = ga.agent_evolve(&a, &mean);
            b = ga.agent_evolve(&b, &mean);
            let d = crate::sync::instantaneous_drift(&a, &b).unwrap();
            assert!(d < prev, "pairwise distance must strictly decrease");
            prev = d;
        }
    }

    #[test]
    fn agent_evolve_keeps_unit_norm() {
        let mut gen = GeneratorState::new(9, SynthParams {
            noise_scale: 0.2,
            dim: 6,
            ..SynthParams::default()
        });
        let mut h = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let g = vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        for _ in 0..500 {
            h = gen.agent_evolve(&h, &g);
            let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn noisy_agents_stay_apart() {
        let params = SynthParams {
            noise_scale: 0.1,
            dim: 4,
            ..SynthParams::default()
        };
        let mut ga = GeneratorState::with_stream(3, 1, params.clone());
        let mut gb = GeneratorState::with_stream(3, 2, params);
        let mut a = vec![1.0, 0.0, 0.0, 0.0];
        let mut b = vec![0.0, 1.0, 0.0, 0.0];
        let mut min_after_burnin = f64::INFINITY;
        for step in 0..300 {
            let mean: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            a = ga.agent_evolve(&a, &mean);
            b = gb.agent_evolve(&b, &mean);
            if step >= 50 {
                let d = crate::sync::instantaneous_drift(&a, &b).unwrap();
                min_after_burnin = min_after_burnin.min(d);
            }
        }
        assert!(min_after_burnin > 0.0);
    }

    #[test]
    fn tool_device_keyed_purity() {
        let bus = ToolBus::new(42, 3, 4);
        let (p1, ticks) = bus.call(2, 17);
        let (p2, _) = bus.call(2, 17);
        assert_eq!(p1, p2);
        assert_eq!(ticks, 3);
        assert_eq!(p1.len(), 32);
    }

    #[test]
    fn tool_device_ordinals_distinct() {
        let bus = ToolBus::new(7, 0, 2);
        let mut seen = std::collections::HashSet::new();
        for ordinal in 0..1000 {
            let (payload, _) = bus.call(1, ordinal);
            assert!(seen.insert(payload), "payload collision at ordinal {ordinal}");
        }
    }

    #[test]
    fn zero_latency_device_charges_nothing() {
        let bus = ToolBus::new(7, 0, 2);
        assert_eq!(bus.call(0, 0).1, 0);
    }

    #[test]
    fn normal_sampler_is_deterministic_and_sane() {
        let mut a = GeneratorState::new(5, SynthParams::default());
        let mut b = GeneratorState::new(5, SynthParams::default());
        let mut mean = 0.0;
        let mut var = 0.0;
        const N: usize = 20_000;
        for _ in 0..N {
            let z = a.next_normal();
            assert_eq!(z, b.next_normal());
            mean += z;
            var += z * z;
        }
        mean /= N as f64;
        var = var / N as f64 - mean * mean;
        assert!(mean.abs() < 0.05);
        assert!((var - 1.0).abs() < 0.05);
    }
}
