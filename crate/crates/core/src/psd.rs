//! Prefix and suffix deletions.
//!
//! A prefix deletion `PD t i` removes the inserts of `i` made at or before
//! time `t`; a suffix deletion `SD t i` removes those made at or after `t`.
//! Heavy coordinates keep exact counters plus the stream time of every
//! `g`-th unit, so a deletion request is resolved to within `g` by counting
//! marks. The granularity `g` is the largest power of two at most
//! `eps' ||f~||_2`; when it doubles, every other mark is dropped.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::forget_f1::{F1Config, F1Estimate, NearUniformReservoir};
use crate::genops::{Chunk, GenOpsConfig, HeavyWatch, LevelSetEstimator, LevelTracker};
use crate::rng::SeededRng;
use crate::stream::{Step, Update, UpdateKind};

/// Counter of a heavy coordinate with time marks at multiples of the
/// granularity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckpointedCounter {
    /// Stream time of the first counted unit.
    pub init: u64,
    value: u64,
    /// Units counted since activation, deletions aside; marks sit at
    /// multiples of the granularity of this count.
    seen: u64,
    /// `(k, t)`: unit `k g` arrived at time `t`.
    marks: Vec<(u64, u64)>,
}

impl CheckpointedCounter {
    pub fn new(init: u64) -> Self {
        Self { init, value: 0, seen: 0, marks: Vec::new() }
    }

    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn marks(&self) -> &[(u64, u64)] {
        &self.marks
    }

    /// `n` units at consecutive times from `first`.
    pub fn count(&mut self, n: u64, first: u64, g: u64) {
        for k in (self.seen / g + 1)..=((self.seen + n) / g) {
            self.marks.push((k, first + (k * g - self.seen) - 1));
        }
        self.seen += n;
        self.value += n;
    }

    /// Drops every other mark as the granularity doubles.
    pub fn coarsen(&mut self) {
        self.marks.retain(|&(k, _)| k % 2 == 0);
        for m in &mut self.marks {
            m.0 /= 2;
        }
    }

    /// Estimate after deleting the inserts at or before `t`.
    pub fn after_prefix_delete(&self, t: u64, g: u64) -> u64 {
        let gone = self.marks.iter().filter(|m| m.1 <= t).count() as u64;
        self.value.saturating_sub(g * gone)
    }

    /// Estimate after deleting the inserts at or after `t`.
    pub fn after_suffix_delete(&self, t: u64, g: u64) -> u64 {
        let kept = self.marks.iter().filter(|m| m.1 < t).count() as u64;
        (g * kept).min(self.value)
    }

    pub fn prefix_delete(&mut self, t: u64, g: u64) {
        self.value = self.after_prefix_delete(t, g);
        self.marks.retain(|m| m.1 > t);
    }

    pub fn suffix_delete(&mut self, t: u64, g: u64) {
        self.value = self.after_suffix_delete(t, g);
        self.marks.retain(|m| m.1 < t);
    }
}

/// `l_2` heavy hitters under prefix and suffix deletions.
#[derive(Clone, Debug)]
pub struct PsdHH {
    cfg: GenOpsConfig,
    watch: HeavyWatch,
    counters: BTreeMap<u64, CheckpointedCounter>,
    /// Granularity is `2^level`.
    level: u32,
}

impl PsdHH {
    pub fn new(cfg: GenOpsConfig, rng: &SeededRng) -> Self {
        Self { watch: HeavyWatch::new(&cfg, rng), cfg, counters: BTreeMap::new(), level: 0 }
    }

    pub fn granularity(&self) -> u64 {
        1 << self.level
    }

    /// `count` inserts of `index` at consecutive times from `start`.
    pub fn insert(&mut self, index: u64, count: u64, start: u64) {
        let eps = self.cfg.eps_prime;
        let counters = &mut self.counters;
        let level = &mut self.level;
        let mut next = start;
        self.watch.insert(index, count, |chunk| match chunk {
            Chunk::Units(n) => {
                if let Some(c) = counters.get_mut(&index) {
                    c.count(n, next, 1 << *level);
                }
                next += n;
            }
            Chunk::Checkpoint { heavy, f2, .. } => {
                counters.retain(|k, _| heavy.contains(k));
                let target = (eps * f2.sqrt()).log2().floor().max(0.0) as u32;
                while *level < target {
                    counters.values_mut().for_each(CheckpointedCounter::coarsen);
                    *level += 1;
                }
                for k in heavy {
                    counters.entry(k).or_insert_with(|| CheckpointedCounter::new(next));
                }
            }
        });
    }

    pub fn update(&mut self, u: &Update) -> Result<()> {
        let g = self.granularity();
        match u.kind {
            UpdateKind::Insert => self.insert(u.index, 1, u.time),
            UpdateKind::PrefixDelete { cutoff } => {
                if let Some(c) = self.counters.get_mut(&u.index) {
                    c.prefix_delete(cutoff, g);
                }
            }
            UpdateKind::SuffixDelete { cutoff } => {
                if let Some(c) = self.counters.get_mut(&u.index) {
                    c.suffix_delete(cutoff, g);
                }
            }
            _ => return Err(Error::UnsupportedOp("only inserts and prefix or suffix deletions are allowed".into())),
        }
        Ok(())
    }

    pub fn apply_step(&mut self, step: &Step) -> Result<()> {
        match step {
            Step::Inserts(run) => {
                self.insert(run.index, run.count, run.start);
                Ok(())
            }
            Step::Other(u) => self.update(u),
        }
    }

    /// Estimate of `f_index`, or 0 without a counter.
    pub fn query(&self, index: u64) -> u64 {
        self.counters.get(&index).map_or(0, CheckpointedCounter::value)
    }

    pub fn counter(&self, index: u64) -> Option<&CheckpointedCounter> {
        self.counters.get(&index)
    }

    /// Marks stored across all counters.
    pub fn stored_marks(&self) -> usize {
        self.counters.values().map(|c| c.marks.len()).sum()
    }

    /// The mark budget `4 / eps'^2`.
    pub fn mark_budget(&self) -> f64 {
        4.0 / (self.cfg.eps_prime * self.cfg.eps_prime)
    }

    pub fn size_bytes(&self) -> usize {
        self.watch.size_bytes() + self.counters.len() * 40 + self.stored_marks() * 16
    }
}

impl LevelTracker for PsdHH {
    fn build(cfg: GenOpsConfig, rng: &SeededRng) -> Self {
        Self::new(cfg, rng)
    }

    fn apply_step(&mut self, step: &Step) -> Result<()> {
        PsdHH::apply_step(self, step)
    }

    fn values(&self) -> Vec<f64> {
        self.counters.values().filter(|c| c.value > 0).map(|c| c.value as f64).collect()
    }

    fn size_bytes(&self) -> usize {
        PsdHH::size_bytes(self)
    }
}

/// Level-set `F_p` over prefix and suffix deletions.
pub type PsdLevelSet = LevelSetEstimator<PsdHH>;

/// `F_1` under prefix and suffix deletions: sampled inserts carry their
/// times, so each request decides directly which of them survive.
#[derive(Clone, Debug)]
pub struct PsdF1 {
    reservoir: NearUniformReservoir,
}

impl PsdF1 {
    pub fn new(cfg: &F1Config, rng: &SeededRng) -> Self {
        Self { reservoir: NearUniformReservoir::new(cfg, rng) }
    }

    pub fn reservoir(&self) -> &NearUniformReservoir {
        &self.reservoir
    }

    pub fn update(&mut self, u: &Update) -> Result<()> {
        match u.kind {
            UpdateKind::Insert => self.reservoir.insert_run(u.index, 1, u.time),
            UpdateKind::PrefixDelete { cutoff } => self.reservoir.mark(u.index, |t| t <= cutoff),
            UpdateKind::SuffixDelete { cutoff } => self.reservoir.mark(u.index, |t| t >= cutoff),
            _ => return Err(Error::UnsupportedOp("only inserts and prefix or suffix deletions are allowed".into())),
        }
        Ok(())
    }

    pub fn apply_step(&mut self, step: &Step) -> Result<()> {
        match step {
            Step::Inserts(run) => {
                self.reservoir.insert_run(run.index, run.count, run.start);
                Ok(())
            }
            Step::Other(u) => self.update(u),
        }
    }

    pub fn estimate(&self) -> F1Estimate {
        self.reservoir.estimate()
    }
}
