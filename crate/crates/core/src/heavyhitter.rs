//! Insertion-only `(eps, l_2)` heavy hitters.
//!
//! Two mechanisms feed one candidate set. A CountSketch-driven pool admits
//! any key whose estimate reaches `eps/2 * ||f||_2` when it is updated. In
//! parallel, the universe is split into groups and each group runs adaptive
//! sparse recovery: a few rounds of three signed linear measurements whose
//! boundaries are set by the `F_2` tracker, each round restricting attention
//! to keys consistent with the buckets decoded so far. Reported keys are
//! filtered by their CountSketch estimate.

use std::collections::BTreeMap;

use crate::hash::{mix64, KeyMap};
use crate::rng::SeededRng;
use crate::sketches::{CountSketch, CsBatch, F2Tracker, PreparedBatch};

/// Measurement-round sizes `B_0 = 2, B_{i+1} = B_i^{3/2}`, stopping at the
/// first `B_r >= n`.
pub fn round_schedule(n: u64) -> Vec<f64> {
    let mut b = vec![2.0f64];
    while *b.last().unwrap() < n as f64 {
        let next = b.last().unwrap().powf(1.5);
        b.push(next);
    }
    b
}

/// Number of universe groups: `10 * ceil(log2 log2 n)^2`, at least 4.
pub fn group_count(n: u64) -> usize {
    let ll = (n.max(2) as f64).log2().max(1.0).log2().ceil().max(0.0);
    ((10.0 * ll * ll) as usize).max(4)
}

#[derive(Clone, Debug)]
pub struct HhConfig {
    /// Keys with `f_i >= eps * ||f||_2` must be reported.
    pub eps: f64,
    /// Keys lie in `[0, universe)`.
    pub universe: u64,
    pub cs_rows: usize,
    pub cs_buckets: usize,
    pub f2_rows: usize,
    pub f2_buckets: usize,
    /// Run sparse recovery alongside the pool.
    pub recovery: bool,
    pub groups: usize,
    pub reps: usize,
}

impl HhConfig {
    /// Sparse recovery is enabled only when the universe is much larger than
    /// the pool; otherwise the pool already holds every key that can be
    /// heavy.
    pub fn new(eps: f64, universe: u64) -> Self {
        let pool = (4.0 / (eps * eps)).ceil() as u64;
        Self {
            eps,
            universe,
            cs_rows: 5,
            cs_buckets: ((16.0 / (eps * eps)).ceil() as usize).clamp(16, 4096),
            f2_rows: 9,
            f2_buckets: 128,
            recovery: universe > 16 * pool,
            groups: group_count(universe),
            reps: 6,
        }
    }

    fn pool_capacity(&self) -> usize {
        (4.0 / (self.eps * self.eps)).ceil() as usize
    }
}

#[derive(Clone, Debug)]
struct RepState {
    round: usize,
    failed: bool,
    constraints: Vec<u64>,
    /// Decoded index of each completed round, when the decode was clean.
    decoded: Vec<Option<u64>>,
    /// `sum s x`, `sum s x h(i)`, `sum s x i` over the current round.
    acc: [f64; 3],
}

impl RepState {
    fn new() -> Self {
        Self { round: 0, failed: false, constraints: Vec::new(), decoded: Vec::new(), acc: [0.0; 3] }
    }
}

/// Recovery state of one guess of `F_2` across all groups.
#[derive(Clone, Debug)]
struct Bank {
    seed: u64,
    start: f64,
    target: f64,
    /// Index of the next round boundary; equals the round count when done.
    next_checkpoint: usize,
    groups: KeyMap<usize, Vec<RepState>>,
}

/// A batch hashed against one tracker, reusable across `apply_prepared`
/// calls. Recovery coefficients are recomputed whenever a round closes.
#[derive(Clone, Debug)]
pub struct HhBatch {
    keys: Vec<(u64, f64)>,
    f2: PreparedBatch,
    cs: CsBatch,
    /// `(bank, group, rep, key position, sign, bucket)` for every
    /// consistent repetition in the current rounds.
    plan: Vec<(usize, usize, usize, usize, f64, u64)>,
    epoch: Option<u64>,
}

impl HhBatch {
    pub fn keys(&self) -> &[(u64, f64)] {
        &self.keys
    }

    pub fn count_sketch_cells(&self) -> &CsBatch {
        &self.cs
    }
}

#[derive(Clone, Debug)]
pub struct HeavyHitterTracker {
    cfg: HhConfig,
    ranges: Vec<u64>,
    cs: CountSketch,
    f2: F2Tracker,
    pool: KeyMap<u64, f64>,
    banks: Vec<Bank>,
    spawned: u64,
    /// Bumped whenever a round closes or a bank spawns.
    epoch: u64,
    rng: SeededRng,
}

impl HeavyHitterTracker {
    pub fn new(cfg: HhConfig, rng: &SeededRng) -> Self {
        let n = cfg.universe.max(2);
        // Ranged rounds use (4 B_i)^2 buckets; the last round decodes the
        // index itself.
        let mut ranges: Vec<u64> = round_schedule(n)
            .iter()
            .map(|b| ((4.0 * b).powi(2).min(n as f64)) as u64)
            .collect();
        ranges.pop();
        ranges.push(n);
        Self {
            cs: CountSketch::new(cfg.cs_rows, cfg.cs_buckets, &rng.fork(1)),
            f2: F2Tracker::new(cfg.f2_rows, cfg.f2_buckets, &rng.fork(2)),
            cfg,
            ranges,
            pool: KeyMap::default(),
            banks: Vec::new(),
            spawned: 0,
            epoch: 0,
            rng: *rng,
        }
    }

    pub fn config(&self) -> &HhConfig {
        &self.cfg
    }

    pub fn count_sketch(&self) -> &CountSketch {
        &self.cs
    }

    pub fn f2(&self) -> &F2Tracker {
        &self.f2
    }

    /// Number of measurement rounds per recovery instance.
    pub fn rounds(&self) -> usize {
        self.ranges.len()
    }

    pub fn update(&mut self, key: u64, weight: f64) {
        self.apply(&[(key, weight)], 1, None);
    }

    pub fn prepare(&self, batch: &[(u64, f64)]) -> HhBatch {
        HhBatch {
            keys: batch.to_vec(),
            f2: self.f2.prepare(batch),
            cs: self.cs.prepare(batch),
            plan: Vec::new(),
            epoch: None,
        }
    }

    /// Applies `units` copies of `batch`, one copy at a time in effect.
    /// Stops early, after the first copy at which the `F_2` estimate reaches
    /// `stop_at`, and returns the number of copies applied.
    pub fn apply(&mut self, batch: &[(u64, f64)], units: u64, stop_at: Option<f64>) -> u64 {
        let mut pb = self.prepare(batch);
        self.apply_prepared(&mut pb, units, stop_at)
    }

    pub fn apply_prepared(&mut self, pb: &mut HhBatch, units: u64, stop_at: Option<f64>) -> u64 {
        let mut done = 0;
        while done < units {
            let left = units - done;
            let step = if left == 1 || (self.cfg.recovery && self.banks.is_empty()) {
                1
            } else {
                let thr = self.next_threshold(stop_at);
                thr.and_then(|t| self.f2.units_until(&pb.f2, left, t)).unwrap_or(left)
            };
            self.f2.apply(&pb.f2, step);
            self.cs.apply_prepared(&pb.cs, step);
            if self.cfg.recovery {
                if pb.epoch != Some(self.epoch) {
                    self.plan(pb);
                }
                self.measure(pb, step);
                self.fire_checkpoints();
            }
            done += step;
            if stop_at.is_some_and(|t| self.f2.estimate() >= t) {
                break;
            }
        }
        self.admit(pb);
        done
    }

    fn next_threshold(&self, stop_at: Option<f64>) -> Option<f64> {
        let mut thr = stop_at;
        let mut consider = |t: f64| thr = Some(thr.map_or(t, |x: f64| x.min(t)));
        if self.cfg.recovery {
            for bank in &self.banks {
                if bank.next_checkpoint < self.ranges.len() {
                    consider(self.checkpoint_value(bank, bank.next_checkpoint));
                }
            }
            if let Some(newest) = self.banks.last() {
                consider(newest.target);
            }
        }
        thr
    }

    fn checkpoint_value(&self, bank: &Bank, i: usize) -> f64 {
        let r = self.ranges.len() as f64;
        bank.start + (i + 1) as f64 * (bank.target - bank.start) / r
    }

    #[inline]
    fn round_hash(bank_seed: u64, group: usize, rep: usize, round: usize, key: u64) -> u64 {
        let tag = ((group as u64) << 24) | ((rep as u64) << 8) | round as u64;
        mix64(key ^ mix64(bank_seed ^ tag))
    }

    fn group_of(&self, key: u64) -> usize {
        (mix64(key ^ self.rng.word(0)) % self.cfg.groups as u64) as usize
    }

    fn bucket(&self, h: u64, round: usize, key: u64) -> u64 {
        if round + 1 == self.ranges.len() {
            key
        } else {
            (h >> 1) % self.ranges[round]
        }
    }

    fn plan(&mut self, pb: &mut HhBatch) {
        pb.plan.clear();
        pb.epoch = Some(self.epoch);
        let reps = self.cfg.reps;
        for (pos, &(key, _)) in pb.keys.iter().enumerate() {
            let g = self.group_of(key);
            for b in 0..self.banks.len() {
                let seed = self.banks[b].seed;
                let ranges = &self.ranges;
                let states = self.banks[b].groups.entry(g).or_insert_with(|| vec![RepState::new(); reps]);
                for (rep, st) in states.iter().enumerate() {
                    if st.failed || st.round >= ranges.len() {
                        continue;
                    }
                    let consistent = st.constraints.iter().enumerate().all(|(k, &c)| {
                        let h = Self::round_hash(seed, g, rep, k, key);
                        (h >> 1) % ranges[k] == c
                    });
                    if !consistent {
                        continue;
                    }
                    let h = Self::round_hash(seed, g, rep, st.round, key);
                    let s = if h & 1 == 0 { 1.0 } else { -1.0 };
                    let bucket = if st.round + 1 == ranges.len() { key } else { (h >> 1) % ranges[st.round] };
                    pb.plan.push((b, g, rep, pos, s, bucket));
                }
            }
        }
    }

    fn measure(&mut self, pb: &HhBatch, units: u64) {
        let u = units as f64;
        for &(b, g, rep, pos, s, bucket) in &pb.plan {
            let (key, w) = pb.keys[pos];
            let x = s * w * u;
            let st = &mut self.banks[b].groups.get_mut(&g).expect("planned group")[rep];
            st.acc[0] += x;
            st.acc[1] += x * bucket as f64;
            st.acc[2] += x * key as f64;
        }
    }

    fn fire_checkpoints(&mut self) {
        let f = self.f2.estimate();
        let rounds = self.ranges.len();
        for b in 0..self.banks.len() {
            while self.banks[b].next_checkpoint < rounds
                && f >= self.checkpoint_value(&self.banks[b], self.banks[b].next_checkpoint)
            {
                let ranges = self.ranges.clone();
                for states in self.banks[b].groups.values_mut() {
                    for st in states.iter_mut() {
                        close_round(st, &ranges, self.cfg.universe);
                    }
                }
                self.banks[b].next_checkpoint += 1;
                self.epoch += 1;
            }
        }
        let need_spawn = match self.banks.last() {
            None => f > 0.0,
            Some(newest) => f >= newest.target,
        };
        if need_spawn {
            let target = 2f64.powi(f.log2().floor() as i32 + 1).max(f * 1.5);
            let seed = self.rng.word2(3, self.spawned);
            self.spawned += 1;
            self.epoch += 1;
            self.banks.push(Bank { seed, start: f, target, next_checkpoint: 0, groups: KeyMap::default() });
            if self.banks.len() > 2 {
                self.banks.remove(0);
            }
        }
    }

    fn admit(&mut self, pb: &HhBatch) {
        let norm = self.f2.estimate().sqrt();
        let thr = 0.5 * self.cfg.eps * norm;
        for (pos, &(key, _)) in pb.keys.iter().enumerate() {
            let est = self.cs.estimate_prepared(&pb.cs, pos);
            if est >= thr && est > 0.0 {
                self.pool.insert(key, est);
            }
        }
        let cap = self.cfg.pool_capacity();
        if self.pool.len() > cap {
            let floor = 0.25 * self.cfg.eps * norm;
            let cs = &self.cs;
            self.pool.retain(|&k, e| {
                *e = cs.estimate(k);
                *e >= floor
            });
            if self.pool.len() > cap {
                let mut v: Vec<(u64, f64)> = self.pool.drain().collect();
                v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                v.truncate(cap);
                self.pool.extend(v);
            }
        }
    }

    /// Keys decoded by sparse recovery: per group and bank, the plurality
    /// decode over repetitions when it has at least two votes.
    pub fn recovered(&self) -> Vec<u64> {
        let mut out = Vec::new();
        for bank in &self.banks {
            let mut groups: Vec<_> = bank.groups.iter().collect();
            groups.sort_by_key(|(g, _)| **g);
            for (&g, states) in groups {
                let mut votes: BTreeMap<u64, usize> = BTreeMap::new();
                for (rep, st) in states.iter().enumerate() {
                    if let Some(k) = self.decode(bank.seed, g, rep, st) {
                        *votes.entry(k).or_default() += 1;
                    }
                }
                if let Some((&k, &c)) = votes.iter().max_by_key(|(k, c)| (**c, std::cmp::Reverse(**k))) {
                    if c >= 2 {
                        out.push(k);
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    fn decode(&self, seed: u64, group: usize, rep: usize, st: &RepState) -> Option<u64> {
        let consistent = |idx: u64, upto: usize| {
            (0..upto).all(|k| (Self::round_hash(seed, group, rep, k, idx) >> 1) % self.ranges[k] == st.constraints[k])
        };
        if st.round < self.ranges.len() && !st.failed && st.acc[0].abs() > 0.0 {
            let idx = (st.acc[2] / st.acc[0]).round();
            let bucket = (st.acc[1] / st.acc[0]).round();
            if idx >= 0.0 && idx < self.cfg.universe as f64 {
                let idx = idx as u64;
                let h = Self::round_hash(seed, group, rep, st.round, idx);
                if self.bucket(h, st.round, idx) as f64 == bucket && consistent(idx, st.round) {
                    return Some(idx);
                }
            }
        }
        st.decoded
            .iter()
            .enumerate()
            .rev()
            .find_map(|(r, d)| d.filter(|&idx| consistent(idx, r)))
    }

    /// Every tracked candidate with its CountSketch estimate, largest first.
    pub fn candidates(&self) -> Vec<(u64, f64)> {
        let mut keys: Vec<u64> = self.pool.keys().copied().collect();
        if self.cfg.recovery {
            keys.extend(self.recovered());
        }
        keys.sort_unstable();
        keys.dedup();
        let mut v: Vec<(u64, f64)> = keys.into_iter().map(|k| (k, self.cs.estimate(k))).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }

    /// Pool keys whose estimate, as of their last update, is at least
    /// `0.75 * eps * ||f||_2`. Skips recovery decoding and fresh estimates,
    /// so it is cheap enough to call after every few units.
    pub fn pool_query(&self, eps: f64) -> impl Iterator<Item = u64> + '_ {
        let thr = 0.75 * eps * self.f2.estimate().sqrt();
        self.pool.iter().filter(move |&(_, &e)| e >= thr && e > 0.0).map(|(&k, _)| k)
    }

    /// Keys whose estimate is at least `0.75 * eps * ||f||_2`.
    pub fn query(&self, eps: f64) -> Vec<(u64, f64)> {
        let thr = 0.75 * eps * self.f2.estimate().sqrt();
        self.candidates().into_iter().filter(|&(_, e)| e >= thr && e > 0.0).collect()
    }

    /// Bytes of sketch state.
    pub fn size_bytes(&self) -> usize {
        let rep = std::mem::size_of::<RepState>();
        let recovery: usize = self
            .banks
            .iter()
            .map(|b| b.groups.values().map(|s| s.len() * (rep + 16 * s[0].constraints.capacity())).sum::<usize>())
            .sum();
        self.cs.size_bytes() + self.f2.size_bytes() + self.pool.len() * 16 + recovery
    }
}

fn close_round(st: &mut RepState, ranges: &[u64], universe: u64) {
    if st.failed || st.round >= ranges.len() {
        return;
    }
    let [u, v, w] = st.acc;
    let idx = (w / u).round();
    st.decoded.push((u != 0.0 && idx >= 0.0 && idx < universe as f64).then_some(idx as u64));
    if st.round + 1 < ranges.len() {
        let bucket = (v / u).round();
        if u == 0.0 || !(bucket >= 0.0 && bucket < ranges[st.round] as f64) {
            st.failed = true;
            return;
        }
        st.constraints.push(bucket as u64);
    }
    st.round += 1;
    st.acc = [0.0; 3];
}
