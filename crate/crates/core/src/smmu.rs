//! Semantic memory-management unit.
//!
//! Slices live in a three-level hierarchy: L1 is the token-budgeted active
//! window, L2 the paged-out semantic RAM, L3 an in-simulator cold store.
//! A hash-keyed page table tracks every slice ever registered; eviction picks
//! the resident with the lowest effective importance (recency blended with
//! semantic importance), breaking ties toward the oldest slice id.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::slicer::{SemanticSlice, SliceStatus};

#[derive(Debug, Error, PartialEq)]
pub enum SmmuError {
    #[error("slice of {size} tokens exceeds the L1 capacity of {capacity}")]
    SliceTooLarge { size: u64, capacity: u64 },
    #[error("hash {0:#018x} is not present in the page table")]
    UnknownHash(u64),
    #[error("utilization is undefined before any token is processed")]
    EmptyLedger,
}

/// Hierarchy level a slice currently resides in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Location {
    L1,
    L2,
    L3,
}

impl Location {
    pub fn as_str(self) -> &'static str {
        match self {
            Location::L1 => "L1",
            Location::L2 => "L2",
            Location::L3 => "L3",
        }
    }

    fn status(self) -> SliceStatus {
        match self {
            Location::L1 => SliceStatus::Active,
            Location::L2 => SliceStatus::PagedOut,
            Location::L3 => SliceStatus::Cold,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MemoryConfig {
    /// L1 budget in tokens.
    pub l1_capacity_tokens: u64,
    /// Recency weight `w` in the effective-importance blend.
    pub recency_weight: f64,
    /// Page-in cost from L2, in ticks.
    pub l2_latency: u64,
    /// Page-in cost from L3, in ticks.
    pub l3_latency: u64,
    /// Optional L2 budget; overflow demotes the stalest entries to L3.
    pub l2_capacity_tokens: Option<u64>,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            l1_capacity_tokens: 64,
            recency_weight: 0.5,
            l2_latency: 2,
            l3_latency: 8,
            l2_capacity_tokens: None,
        }
    }
}

/// Blend of recency and semantic importance used for eviction ranking:
/// `w * 1/(1 + age) + (1 - w) * importance`.
pub fn effective_importance(
    importance: f64,
    last_access: u64,
    now: u64,
    config: &MemoryConfig,
) -> f64 {
    let recency = 1.0 / (1.0 + (now.saturating_sub(last_access)) as f64);
    config.recency_weight * recency + (1.0 - config.recency_weight) * importance
}

/// Page table entry: where a slice is and how it has been used.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SptEntry {
    pub slice_id: u64,
    pub location: Location,
    pub status: SliceStatus,
    pub last_access: u64,
    pub access_count: u64,
}

/// Hash-keyed directory of every slice known to the system. Entries are
/// demoted, never removed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SemanticPageTable {
    entries: BTreeMap<u64, SptEntry>,
}

impl SemanticPageTable {
    pub fn get(&self, hash: u64) -> Option<&SptEntry> {
        self.entries.get(&hash)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&u64, &SptEntry)> {
        self.entries.iter()
    }
}

/// Token accounting for the utilization ratio: a processed token counts as
/// gain once its slice is accessed again after finalization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UtilizationLedger {
    pub tokens_processed: u64,
    pub gain_tokens: u64,
}

/// Ratio of information-gain tokens to processed tokens.
pub fn utilization_eta(ledger: &UtilizationLedger) -> Result<f64, SmmuError> {
    if ledger.tokens_processed == 0 {
        return Err(SmmuError::EmptyLedger);
    }
    Ok(ledger.gain_tokens as f64 / ledger.tokens_processed as f64)
}

/// Ordered record of one page-table mutation, for trace emission.
#[derive(Debug, Clone, PartialEq)]
pub enum SmmuEffect {
    /// A new slice entered the table (and L1).
    Registered { hash: u64, slice_id: u64, tokens: u64 },
    /// A slice moved down the hierarchy.
    Evicted { hash: u64, from: Location, to: Location },
    /// A slice was accessed; `from == L1` means residency bookkeeping only.
    PagedIn { hash: u64, from: Location, latency: u64 },
}

/// The memory manager: page table, slice store, and the L1/L2 budgets.
/// Single-owner mutable state; operations are serialized by the caller.
#[derive(Debug, Clone)]
pub struct Smmu {
    config: MemoryConfig,
    spt: SemanticPageTable,
    store: BTreeMap<u64, SemanticSlice>,
    l1_tokens: u64,
    l2_tokens: u64,
    gain_counted: BTreeSet<u64>,
    ledger: UtilizationLedger,
}

impl Smmu {
    pub fn new(config: MemoryConfig) -> Self {
        Self {
            config,
            spt: SemanticPageTable::default(),
            store: BTreeMap::new(),
            l1_tokens: 0,
            l2_tokens: 0,
            gain_counted: BTreeSet::new(),
            ledger: UtilizationLedger::default(),
        }
    }

    pub fn config(&self) -> &MemoryConfig {
        &self.config
    }

    pub fn page_table(&self) -> &SemanticPageTable {
        &self.spt
    }

    pub fn ledger(&self) -> &UtilizationLedger {
        &self.ledger
    }

    pub fn slice(&self, hash: u64) -> Option<&SemanticSlice> {
        self.store.get(&hash)
    }

    /// Total tokens currently resident in L1.
    pub fn active_tokens(&self) -> u64 {
        self.l1_tokens
    }

    /// Schema vector of a stored slice, if known.
    pub fn schema_of(&self, hash: u64) -> Option<&[f64]> {
        self.store.get(&hash).map(|s| s.schema.as_slice())
    }

    fn eviction_victim(&self, now: u64) -> Option<u64> {
        let mut best: Option<(f64, u64, u64)> = None;
        for (&hash, entry) in self.spt.entries.iter() {
            if entry.status != SliceStatus::Active {
                continue;
            }
            let importance = self.store[&hash].importance;
            let score = effective_importance(importance, entry.last_access, now, &self.config);
            let candidate = (score, entry.slice_id, hash);
            best = match best {
                None => Some(candidate),
                Some(current) => {
                    // Lower score wins; ties go to the oldest slice id.
                    if (candidate.0, candidate.1) < (current.0, current.1) {
                        Some(candidate)
                    } else {
                        Some(current)
                    }
                }
            };
        }
        best.map(|(_, _, hash)| hash)
    }

    fn move_to_l2(&mut self, hash: u64, effects: &mut Vec<SmmuEffect>) {
        let size = self.store[&hash].size();
        let entry = self.spt.entries.get_mut(&hash).expect("entry exists");
        debug_assert_eq!(entry.location, Location::L1);
        entry.location = Location::L2;
        entry.status = SliceStatus::PagedOut;
        self.store.get_mut(&hash).expect("slice exists").status = SliceStatus::PagedOut;
        self.l1_tokens -= size;
        self.l2_tokens += size;
        effects.push(SmmuEffect::Evicted {
            hash,
            from: Location::L1,
            to: Location::L2,
        });
        self.spill_l2(effects);
    }

    /// Demotes the stalest L2 entries to the cold store while L2 is over
    /// its optional budget.
    fn spill_l2(&mut self, effects: &mut Vec<SmmuEffect>) {
        let Some(cap) = self.config.l2_capacity_tokens else {
            return;
        };
        while self.l2_tokens > cap {
            let victim = self
                .spt
                .entries
                .iter()
                .filter(|(_, e)| e.location == Location::L2)
                .map(|(&h, e)| (e.last_access, e.slice_id, h))
                .min()
                .map(|(_, _, h)| h)
                .expect("l2_tokens > 0 implies an L2 entry");
            let size = self.store[&victim].size();
            let entry = self.spt.entries.get_mut(&victim).expect("entry exists");
            entry.location = Location::L3;
            entry.status = SliceStatus::Cold;
            self.store.get_mut(&victim).expect("slice exists").status = SliceStatus::Cold;
            self.l2_tokens -= size;
            effects.push(SmmuEffect::Evicted {
                hash: victim,
                from: Location::L2,
                to: Location::L3,
            });
        }
    }

    fn make_room(&mut self, incoming_size: u64, now: u64, effects: &mut Vec<SmmuEffect>) {
        while self.l1_tokens + incoming_size > self.config.l1_capacity_tokens {
            let victim = self
                .eviction_victim(now)
                .expect("size guard keeps the loop finite");
            self.move_to_l2(victim, effects);
        }
    }

    /// Admits a slice into L1, evicting minimum-effective-importance victims
    /// to L2 until it fits. New hashes are registered in the page table and
    /// counted as processed tokens; a known hash is re-admitted in place.
    pub fn manage_memory(
        &mut self,
        mut incoming: SemanticSlice,
        now: u64,
    ) -> Result<Vec<SmmuEffect>, SmmuError> {
        let size = incoming.size();
        if size > self.config.l1_capacity_tokens {
            return Err(SmmuError::SliceTooLarge {
                size,
                capacity: self.config.l1_capacity_tokens,
            });
        }
        let mut effects = Vec::new();
        self.make_room(size, now, &mut effects);
        let hash = incoming.semantic_hash;
        incoming.status = SliceStatus::Active;
        match self.spt.entries.get_mut(&hash) {
            Some(entry) => {
                if entry.location == Location::L2 {
                    self.l2_tokens -= size;
                }
                if entry.location != Location::L1 {
                    self.l1_tokens += size;
                }
                entry.location = Location::L1;
                entry.status = SliceStatus::Active;
                entry.last_access = now;
            }
            None => {
                self.spt.entries.insert(
                    hash,
                    SptEntry {
                        slice_id: incoming.slice_id,
                        location: Location::L1,
                        status: SliceStatus::Active,
                        last_access: now,
                        access_count: 0,
                    },
                );
                self.ledger.tokens_processed += size;
                self.l1_tokens += size;
                effects.push(SmmuEffect::Registered {
                    hash,
                    slice_id: incoming.slice_id,
                    tokens: size,
                });
            }
        }
        self.store.insert(hash, incoming);
        Ok(effects)
    }

    /// Accesses a slice by hash. Resident slices get bookkeeping only;
    /// paged-out or cold slices are promoted back into L1, evicting victims
    /// as needed, and the page-in latency for the source level is returned.
    /// Any post-finalization access marks the slice's tokens as gain.
    pub fn page_in(&mut self, hash: u64, now: u64) -> Result<(Vec<SmmuEffect>, u64), SmmuError> {
        let from = self
            .spt
            .get(hash)
            .ok_or(SmmuError::UnknownHash(hash))?
            .location;
        let size = self.store[&hash].size();
        if size > self.config.l1_capacity_tokens {
            return Err(SmmuError::SliceTooLarge {
                size,
                capacity: self.config.l1_capacity_tokens,
            });
        }
        if self.gain_counted.insert(hash) {
            self.ledger.gain_tokens += size;
        }
        let mut effects = Vec::new();
        let latency = match from {
            Location::L1 => 0,
            Location::L2 => self.config.l2_latency,
            Location::L3 => self.config.l3_latency,
        };
        if from != Location::L1 {
            self.make_room(size, now, &mut effects);
            if from == Location::L2 {
                self.l2_tokens -= size;
            }
            self.l1_tokens += size;
            self.store.get_mut(&hash).expect("slice exists").status = SliceStatus::Active;
        }
        let entry = self.spt.entries.get_mut(&hash).expect("checked above");
        entry.location = Location::L1;
        entry.status = SliceStatus::Active;
        entry.last_access = now;
        entry.access_count += 1;
        effects.push(SmmuEffect::PagedIn {
            hash,
            from,
            latency,
        });
        Ok((effects, latency))
    }

    /// Forces an active slice out to L2 (the interrupt cycle's STORE step).
    /// Already-demoted slices are left where they are.
    pub fn page_out(&mut self, hash: u64) -> Result<Vec<SmmuEffect>, SmmuError> {
        if !self.spt.entries.contains_key(&hash) {
            return Err(SmmuError::UnknownHash(hash));
        }
        let mut effects = Vec::new();
        if self.spt.entries[&hash].location == Location::L1 {
            self.move_to_l2(hash, &mut effects);
        }
        Ok(effects)
    }

    /// Demotes a paged-out slice to the cold store.
    pub fn demote_to_cold(&mut self, hash: u64) -> Result<Vec<SmmuEffect>, SmmuError> {
        let entry = self
            .spt
            .entries
            .get_mut(&hash)
            .ok_or(SmmuError::UnknownHash(hash))?;
        let mut effects = Vec::new();
        if entry.location == Location::L2 {
            entry.location = Location::L3;
            entry.status = SliceStatus::Cold;
            let size = self.store[&hash].size();
            self.store.get_mut(&hash).expect("slice exists").status = SliceStatus::Cold;
            self.l2_tokens -= size;
            effects.push(SmmuEffect::Evicted {
                hash,
                from: Location::L2,
                to: Location::L3,
            });
        }
        Ok(effects)
    }

    /// Checks the structural invariants; test support.
    #[doc(hidden)]
    pub fn check_invariants(&self) {
        let mut l1 = 0;
        for (hash, entry) in self.spt.entries.iter() {
            assert_eq!(
                entry.location == Location::L1,
                entry.status == SliceStatus::Active,
                "L1 residency must coincide with Active status"
            );
            assert_eq!(entry.location.status(), entry.status);
            let slice = &self.store[hash];
            assert_eq!(slice.status, entry.status);
            if entry.location == Location::L1 {
                l1 += slice.size();
            }
        }
        assert_eq!(l1, self.l1_tokens);
        assert!(self.l1_tokens <= self.config.l1_capacity_tokens);
    }
}

/// Rebuilds a page table from the memory events of a trace. Replaying the
/// same trace always reproduces the identical final table.
pub fn replay_page_table(events: &[crate::trace::TraceEvent]) -> SemanticPageTable {
    use crate::trace::TraceEvent;
    let mut spt = SemanticPageTable::default();
    for event in events {
        match event {
            TraceEvent::Slice { hash, tick, id, .. } => {
                spt.entries.insert(
                    *hash,
                    SptEntry {
                        slice_id: *id,
                        location: Location::L1,
                        status: SliceStatus::Active,
                        last_access: *tick,
                        access_count: 0,
                    },
                );
            }
            TraceEvent::Evict { hash, to, .. } => {
                if let Some(entry) = spt.entries.get_mut(hash) {
                    entry.location = *to;
                    entry.status = to.status();
                }
            }
            TraceEvent::PageIn { hash, tick, .. } => {
                if let Some(entry) = spt.entries.get_mut(hash) {
                    entry.location = Location::L1;
                    entry.status = SliceStatus::Active;
                    entry.last_access = *tick;
                    entry.access_count += 1;
                }
            }
            _ => {}
        }
    }
    spt
}
