//! Attention-entropy slicing.
//!
//! Turns per-position attention rows into a contextual information density
//! (CID) series, detects boundaries where the density jumps, and finalizes
//! token runs into addressable semantic slices carrying a hash, a compressed
//! schema vector, and an importance score.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for the row-stochastic sum check.
const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SlicerError {
    #[error("attention row at position {position} is not row-stochastic (sum {sum})")]
    NonStochasticRow { position: usize, sum: f64 },
    #[error("attention row at position {position} has {got} weights, expected {position}")]
    RaggedRow { position: usize, got: usize },
    #[error("attention trace is empty")]
    EmptyTrace,
    #[error("trace heads disagree on sequence length")]
    HeadLengthMismatch,
    #[error("boundary threshold must be positive, got {0}")]
    InvalidThreshold(f64),
    #[error("cid series needs at least 2 positions, got {0}")]
    SeriesTooShort(usize),
    #[error("cannot compress an empty slice")]
    EmptySlice,
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("trace length {trace}, token list {tokens}, embedding list {embeddings} disagree")]
    LengthMismatch {
        trace: usize,
        tokens: usize,
        embeddings: usize,
    },
}

/// One causal attention row: the distribution over positions `1..=position`
/// attended from `position`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRow {
    /// 1-based sequence index.
    pub position: usize,
    pub weights: Vec<f64>,
}

impl AttentionRow {
    pub fn new(position: usize, weights: Vec<f64>) -> Self {
        Self { position, weights }
    }

    fn validate(&self) -> Result<(), SlicerError> {
        if self.weights.len() != self.position {
            return Err(SlicerError::RaggedRow {
                position: self.position,
                got: self.weights.len(),
            });
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE || self.weights.iter().any(|&w| w < 0.0) {
            return Err(SlicerError::NonStochasticRow {
                position: self.position,
                sum,
            });
        }
        Ok(())
    }
}

/// A full attention trace: one row list per head, rows 1..=n within each head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub heads: Vec<Vec<AttentionRow>>,
}

impl AttentionTrace {
    /// Builds a single-head trace from raw weight rows.
    pub fn single_head(rows: Vec<Vec<f64>>) -> Self {
        let head = rows
            .into_iter()
            .enumerate()
            .map(|(i, w)| AttentionRow::new(i + 1, w))
            .collect();
        Self { heads: vec![head] }
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn len(&self) -> usize {
        self.heads.first().map_or(0, |h| h.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// On-disk attention trace: `rows` holds `heads * n` weight lists, grouped
/// per head (all of head 1's rows 1..n, then head 2's, and so on). Row `t`
/// within a head block carries exactly `t` weights. `token_ids`, when
/// present, supplies the ids used for hashing and schema lookup.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionTraceFile {
    pub heads: usize,
    pub rows: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_ids: Option<Vec<u64>>,
}

impl AttentionTraceFile {
    pub fn into_trace(self) -> Result<(AttentionTrace, Option<Vec<u64>>), SlicerError> {
        if self.heads == 0 || self.rows.is_empty() {
            return Err(SlicerError::EmptyTrace);
        }
        if self.rows.len() % self.heads != 0 {
            return Err(SlicerError::HeadLengthMismatch);
        }
        let n = self.rows.len() / self.heads;
        let mut rows = self.rows.into_iter();
        let mut heads = Vec::with_capacity(self.heads);
        for _ in 0..self.heads {
            let head: Vec<AttentionRow> = (1..=n)
                .map(|t| AttentionRow::new(t, rows.next().expect("row count checked")))
                .collect();
            for row in &head {
                row.validate()?;
            }
            heads.push(head);
        }
        Ok((AttentionTrace { heads }, self.token_ids))
    }
}

/// Per-position contextual information density, each value in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct CidSeries {
    pub values: Vec<f64>,
}

impl CidSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Residency of a slice within the memory hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SliceStatus {
    Active,
    PagedOut,
    Cold,
}

/// The atomic addressable context unit: a contiguous token run with its
/// hash, compressed schema, and importance score.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticSlice {
    pub slice_id: u64,
    /// Inclusive 1-based token positions.
    pub token_range: (usize, usize),
    pub token_ids: Vec<u64>,
    pub semantic_hash: u64,
    pub schema: Vec<f64>,
    pub importance: f64,
    pub status: SliceStatus,
    pub created_at: u64,
}

impl SemanticSlice {
    /// Token count; the unit of L1 budget accounting.
    pub fn size(&self) -> u64 {
        self.token_ids.len() as u64
    }
}

/// Shannon entropy of one attention row, natural log, with `0 ln 0 = 0`.
pub fn attention_entropy(row: &AttentionRow) -> Result<f64, SlicerError> {
    row.validate()?;
    let h = -row
        .weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| w * w.ln())
        .sum::<f64>();
    // -0.0 from an all-one-hot row normalizes to +0.0.
    Ok(h + 0.0)
}

/// Contextual information density at the row's position:
/// `1 - H / ln(t)` clamped to [0, 1], with `D(1) = 1` by definition.
pub fn cid(row: &AttentionRow) -> Result<f64, SlicerError> {
    let h = attention_entropy(row)?;
    if row.position == 1 {
        return Ok(1.0);
    }
    let d = 1.0 - h / (row.position as f64).ln();
    Ok(d.clamp(0.0, 1.0))
}

/// CID per position, averaged over heads.
pub fn cid_series(trace: &AttentionTrace) -> Result<CidSeries, SlicerError> {
    if trace.is_empty() {
        return Err(SlicerError::EmptyTrace);
    }
    let n = trace.len();
    if trace.heads.iter().any(|h| h.len() != n) {
        return Err(SlicerError::HeadLengthMismatch);
    }
    let head_count = trace.head_count() as f64;
    let mut values = Vec::with_capacity(n);
    for t in 0..n {
        let mut acc = 0.0;
        for head in &trace.heads {
            acc += cid(&head[t])?;
        }
        values.push(acc / head_count);
    }
    Ok(CidSeries { values })
}

/// Positions (2..=n) where the absolute adjacent CID difference exceeds
/// `epsilon`, with `n` always appended as the terminal boundary. The result
/// is strictly increasing and non-empty, so a partition of 1..=n is total.
pub fn detect_boundaries(series: &CidSeries, epsilon: f64) -> Result<Vec<usize>, SlicerError> {
    if !(epsilon > 0.0) {
        return Err(SlicerError::InvalidThreshold(epsilon));
    }
    let n = series.len();
    if n < 2 {
        return Err(SlicerError::SeriesTooShort(n));
    }
    let mut boundaries: Vec<usize> = (2..=n)
        .filter(|&t| (series.values[t - 1] - series.values[t - 2]).abs() > epsilon)
        .collect();
    if boundaries.last() != Some(&n) {
        boundaries.push(n);
    }
    Ok(boundaries)
}

/// Expands a boundary list into inclusive 1-based ranges tiling 1..=n.
/// Each interior boundary starts a new slice; the final entry (always `n`)
/// closes the last one.
pub fn partition_from_boundaries(boundaries: &[usize], n: usize) -> Vec<(usize, usize)> {
    let mut ranges = Vec::with_capacity(boundaries.len());
    let mut start = 1;
    for (i, &b) in boundaries.iter().enumerate() {
        if i + 1 == boundaries.len() {
            ranges.push((start, n));
        } else {
            ranges.push((start, b - 1));
            start = b;
        }
    }
    ranges
}

/// 64-bit FNV-1a over each token id serialized as 8 little-endian bytes.
pub fn semantic_hash(token_ids: &[u64]) -> u64 {
    const OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET_BASIS;
    for id in token_ids {
        for byte in id.to_le_bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(PRIME);
        }
    }
    hash
}

/// Arithmetic mean of the embeddings: the slice's latent schema.
pub fn compress_state(embeddings: &[Vec<f64>]) -> Result<Vec<f64>, SlicerError> {
    let first = embeddings.first().ok_or(SlicerError::EmptySlice)?;
    let dim = first.len();
    let mut mean = vec![0.0; dim];
    for emb in embeddings {
        if emb.len() != dim {
            return Err(SlicerError::DimensionMismatch {
                expected: dim,
                got: emb.len(),
            });
        }
        for (m, v) in mean.iter_mut().zip(emb) {
            *m += v;
        }
    }
    let count = embeddings.len() as f64;
    for m in mean.iter_mut() {
        *m /= count;
    }
    Ok(mean)
}

/// Partitions the sequence at the detected boundaries and finalizes each run
/// into a slice. Importance is the mean CID over the slice's positions;
/// `created_at` is stamped with the slice's end position (the logical tick
/// at which the run closed).
pub fn finalize_slices(
    trace: &AttentionTrace,
    token_ids: &[u64],
    embeddings: &[Vec<f64>],
    epsilon: f64,
) -> Result<Vec<SemanticSlice>, SlicerError> {
    let series = cid_series(trace)?;
    let n = series.len();
    if token_ids.len() != n || embeddings.len() != n {
        return Err(SlicerError::LengthMismatch {
            trace: n,
            tokens: token_ids.len(),
            embeddings: embeddings.len(),
        });
    }
    let ranges = if n == 1 {
        vec![(1, 1)]
    } else {
        partition_from_boundaries(&detect_boundaries(&series, epsilon)?, n)
    };
    let mut slices = Vec::with_capacity(ranges.len());
    for (ordinal, (start, end)) in ranges.into_iter().enumerate() {
        let ids = token_ids[start - 1..end].to_vec();
        let schema = compress_state(&embeddings[start - 1..end])?;
        let importance =
            series.values[start - 1..end].iter().sum::<f64>() / (end - start + 1) as f64;
        slices.push(SemanticSlice {
            slice_id: ordinal as u64,
            token_range: (start, end),
            semantic_hash: semantic_hash(&ids),
            token_ids: ids,
            schema,
            importance,
            status: SliceStatus::Active,
            created_at: end as u64,
        });
    }
    Ok(slices)
}
