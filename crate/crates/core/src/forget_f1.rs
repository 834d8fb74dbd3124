//! `F_1` under forgets: a Morris count of all inserts times the fraction of
//! near-uniformly sampled inserts that were never forgotten.
//!
//! Every slot is replaced at the `i`-th insert with probability
//! `1 / max(1, C(i))`, where `C(i)` is the Morris read after that insert.
//! Rather than flipping `k` coins per insert, each slot draws the time of
//! its next candidate replacement from a geometric law at the current
//! rate, and a candidate at time `t` is kept with probability
//! `(1/C(t)) / rate`. `C` never decreases, so this thinning is exact.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::rng::{geometric_trials, LaneStream, SeededRng};
use crate::sketches::MorrisCounter;
use crate::stream::{Step, StreamParams, Update, UpdateKind};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct F1Config {
    /// Number of sampled inserts.
    pub slots: usize,
    pub morris_eps: f64,
    pub delta: f64,
}

impl F1Config {
    /// `k = ceil(ln(1/delta) / ((1 - alpha) eps^2))` slots, and a Morris
    /// counter at `eps / ceil(log2 m)`.
    pub fn new(params: &StreamParams) -> Result<Self> {
        params.validate()?;
        let slots = ((1.0 / params.delta).ln() / ((1.0 - params.alpha) * params.eps * params.eps)).ceil() as usize;
        let log_m = (params.m_bound.max(2) as f64).log2().ceil();
        Ok(Self { slots: slots.max(1), morris_eps: params.eps / log_m, delta: params.delta })
    }

    pub fn with_slots(mut self, slots: usize) -> Self {
        self.slots = slots.max(1);
        self
    }
}

/// A sampled insert.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    pub index: u64,
    pub time: u64,
    /// Set once a later forget on `index` arrives.
    pub deleted: bool,
}

#[derive(Clone, Debug)]
pub struct NearUniformReservoir {
    slots: Vec<Option<Slot>>,
    /// Rate at which each slot's pending candidate was drawn.
    rates: Vec<f64>,
    /// `(insert ordinal, slot)` of pending candidates.
    pending: BinaryHeap<Reverse<(u64, usize)>>,
    morris: MorrisCounter,
    inserts: u64,
    coins: LaneStream,
}

impl NearUniformReservoir {
    pub fn new(cfg: &F1Config, rng: &SeededRng) -> Self {
        Self {
            slots: vec![None; cfg.slots],
            rates: vec![1.0; cfg.slots],
            pending: (0..cfg.slots).map(|s| Reverse((1, s))).collect(),
            morris: MorrisCounter::new(cfg.morris_eps, cfg.delta, &rng.fork(0)),
            inserts: 0,
            coins: rng.fork(1).stream(),
        }
    }

    pub fn slots(&self) -> &[Option<Slot>] {
        &self.slots
    }

    pub fn morris(&self) -> &MorrisCounter {
        &self.morris
    }

    /// Inserts seen so far (exact; kept for diagnostics, not by the sketch).
    pub fn inserts(&self) -> u64 {
        self.inserts
    }

    fn read(&self) -> f64 {
        self.morris.read().max(1.0)
    }

    /// `count` consecutive inserts of `index`, the first at time `start`.
    pub fn insert_run(&mut self, index: u64, count: u64, start: u64) {
        let first = self.inserts + 1;
        let end = self.inserts + count;
        while let Some(&Reverse((t, _))) = self.pending.peek() {
            if t > end {
                break;
            }
            self.morris.increment_by(t - self.inserts);
            self.inserts = t;
            let rate = 1.0 / self.read();
            while let Some(&Reverse((t2, s))) = self.pending.peek() {
                if t2 != t {
                    break;
                }
                self.pending.pop();
                if self.coins.uniform() <= rate / self.rates[s] {
                    self.slots[s] = Some(Slot { index, time: start + (t - first), deleted: false });
                }
                self.rates[s] = rate;
                let next = t.saturating_add(geometric_trials(rate, self.coins.uniform()));
                self.pending.push(Reverse((next, s)));
            }
        }
        self.morris.increment_by(end - self.inserts);
        self.inserts = end;
    }

    pub fn forget(&mut self, index: u64) {
        self.mark(index, |_| true);
    }

    /// Flags the sampled inserts of `index` whose time satisfies `hit`.
    pub fn mark(&mut self, index: u64, hit: impl Fn(u64) -> bool) {
        for slot in self.slots.iter_mut().flatten() {
            if slot.index == index && hit(slot.time) {
                slot.deleted = true;
            }
        }
    }

    pub fn update(&mut self, u: &Update) -> Result<()> {
        match u.kind {
            UpdateKind::Insert => self.insert_run(u.index, 1, u.time),
            UpdateKind::Forget => self.forget(u.index),
            _ => return Err(Error::UnsupportedOp("only inserts and forgets are allowed in this model".into())),
        }
        Ok(())
    }

    pub fn apply_step(&mut self, step: &Step) -> Result<()> {
        match step {
            Step::Inserts(run) => {
                self.insert_run(run.index, run.count, run.start);
                Ok(())
            }
            Step::Other(u) => self.update(u),
        }
    }

    /// Fraction of slots holding an insert that was not forgotten.
    pub fn survival(&self) -> f64 {
        let alive = self.slots.iter().flatten().filter(|s| !s.deleted).count();
        alive as f64 / self.slots.len() as f64
    }

    pub fn estimate(&self) -> F1Estimate {
        if self.inserts == 0 {
            return F1Estimate { value: 0.0, survival: 0.0, inserted: 0.0, flagged: false };
        }
        let survival = self.survival();
        let inserted = self.morris.read();
        F1Estimate { value: inserted * survival, survival, inserted, flagged: survival == 0.0 }
    }

    /// Bits of slot storage: index, timestamp and flag per slot.
    pub fn slot_bits(&self, n: u64, m_bound: u64) -> usize {
        let bits = |x: u64| (64 - x.leading_zeros()) as usize;
        self.slots.len() * (bits(n) + bits(m_bound) + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct F1Estimate {
    pub value: f64,
    pub survival: f64,
    /// Morris estimate of the number of inserts.
    pub inserted: f64,
    /// No sampled insert survived, so the stream lost more than the
    /// promised fraction or the sample was unlucky.
    pub flagged: bool,
}

/// Runs a fresh reservoir over `steps`.
pub fn estimate_steps(cfg: &F1Config, rng: &SeededRng, steps: &[Step]) -> Result<F1Estimate> {
    let mut r = NearUniformReservoir::new(cfg, rng);
    for s in steps {
        r.apply_step(s)?;
    }
    Ok(r.estimate())
}
