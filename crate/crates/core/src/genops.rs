//! Heavy hitters and `F_p` when updates may apply contractions.
//!
//! [`GenOpsHH`] tracks the insert-only vector with a heavy-hitter sketch and
//! keeps exact counters for coordinates that were heavy at the last
//! checkpoint. A contraction is applied to the counter directly; since it
//! shrinks distances, a counter's error never grows after activation.
//! [`LevelSetEstimator`] builds `F_p` from per-level heavy-hitter sets on
//! nested subsamples, resolving each value band at the sampling level where
//! it has the right number of members.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::hash::{KeyMap, PolyHash};
use crate::heavyhitter::{HeavyHitterTracker, HhBatch, HhConfig};
use crate::rng::SeededRng;
use crate::stream::{ContractionOp, Step, Update, UpdateKind};

/// Coordinates whose hashed batches a tracker keeps.
const CACHE_LIMIT: usize = 4096;

/// Threshold `eps'` of a [`GenOpsHH`], relative to the insert-only `l_2` norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenOpsConfig {
    pub eps_prime: f64,
    /// Keys lie in `[0, universe)`.
    pub universe: u64,
}

impl GenOpsConfig {
    /// Additive `eps ||f||_2` on every coordinate: `eps' = eps sqrt(1 - alpha)`.
    pub fn l2(eps: f64, alpha: f64, n: u64) -> Result<Self> {
        check(eps, alpha)?;
        Ok(Self { eps_prime: eps * (1.0 - alpha).sqrt(), universe: n + 1 })
    }

    /// Additive `eps ||f||_p` on heavy coordinates:
    /// `eps' = eps (1 - alpha)^{1/p} n^{1/p - 1/2}` for `p >= 2`, and
    /// `eps (1 - alpha)^{1/p}` below.
    pub fn lp(eps: f64, alpha: f64, p: f64, n: u64) -> Result<Self> {
        check(eps, alpha)?;
        if !(p > 0.0) {
            return Err(Error::Config(format!("p = {p} must be positive")));
        }
        let mut eps_prime = eps * (1.0 - alpha).powf(1.0 / p);
        if p >= 2.0 {
            eps_prime *= (n as f64).powf(1.0 / p - 0.5);
        }
        Ok(Self { eps_prime, universe: n + 1 })
    }

    /// Checkpoints fire when the `l_2` estimate grows by `1 + eps'/4`.
    pub fn checkpoint_factor(&self) -> f64 {
        1.0 + self.eps_prime / 4.0
    }
}

fn check(eps: f64, alpha: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) || !(0.0..1.0).contains(&alpha) {
        return Err(Error::Config("eps must lie in (0, 1) and alpha in [0, 1)".into()));
    }
    Ok(())
}

/// Insert-only heavy-hitter sketch that re-reads its heavy set whenever the
/// `F_2` estimate has grown by the checkpoint factor.
#[derive(Clone, Debug)]
pub(crate) struct HeavyWatch {
    hh: HeavyHitterTracker,
    cache: KeyMap<u64, HhBatch>,
    factor: f64,
    heavy_eps: f64,
    /// `F_2` estimate at the last checkpoint.
    last: f64,
    inserts: u64,
    checkpoints: u64,
}

/// What a run of inserts did, in order.
pub(crate) enum Chunk {
    /// Units counted under the current heavy set.
    Units(u64),
    /// A checkpoint after `at` inserts, with the new heavy set and `F_2`
    /// estimate.
    Checkpoint { heavy: Vec<u64>, at: u64, f2: f64 },
}

impl HeavyWatch {
    pub(crate) fn new(cfg: &GenOpsConfig, rng: &SeededRng) -> Self {
        let heavy_eps = cfg.eps_prime / 10.0;
        Self {
            hh: HeavyHitterTracker::new(HhConfig::new(heavy_eps, cfg.universe), rng),
            cache: KeyMap::default(),
            factor: cfg.checkpoint_factor().powi(2),
            heavy_eps,
            last: 0.0,
            inserts: 0,
            checkpoints: 0,
        }
    }

    fn next_checkpoint(&self) -> f64 {
        if self.last > 0.0 {
            self.last * self.factor
        } else {
            f64::MIN_POSITIVE
        }
    }

    pub(crate) fn insert(&mut self, index: u64, count: u64, mut sink: impl FnMut(Chunk)) {
        if !self.cache.contains_key(&index) {
            if self.cache.len() >= CACHE_LIMIT {
                self.cache.clear();
            }
            self.cache.insert(index, self.hh.prepare(&[(index, 1.0)]));
        }
        let mut left = count;
        while left > 0 {
            let at = self.next_checkpoint();
            let pb = self.cache.get_mut(&index).expect("batch cached above");
            let done = self.hh.apply_prepared(pb, left, Some(at));
            left -= done;
            if self.hh.f2().estimate() >= at {
                // The crossing happens on the last unit: the earlier ones
                // count under the old heavy set, the last under the new.
                if done > 1 {
                    sink(Chunk::Units(done - 1));
                }
                self.inserts += done;
                self.last = self.hh.f2().estimate();
                self.checkpoints += 1;
                let heavy = self.hh.query(self.heavy_eps).into_iter().map(|(k, _)| k).collect();
                sink(Chunk::Checkpoint { heavy, at: self.inserts, f2: self.last });
                sink(Chunk::Units(1));
            } else {
                self.inserts += done;
                sink(Chunk::Units(done));
            }
        }
    }

    pub(crate) fn f2(&self) -> f64 {
        self.hh.f2().estimate()
    }

    pub(crate) fn checkpoints(&self) -> u64 {
        self.checkpoints
    }

    pub(crate) fn size_bytes(&self) -> usize {
        self.hh.size_bytes()
    }
}

/// An active counter and the insert ordinal at which it was last activated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActiveCounter {
    pub value: u64,
    pub since: u64,
}

#[derive(Clone, Debug)]
pub struct GenOpsHH {
    cfg: GenOpsConfig,
    watch: HeavyWatch,
    counters: BTreeMap<u64, ActiveCounter>,
}

impl GenOpsHH {
    pub fn new(cfg: GenOpsConfig, rng: &SeededRng) -> Self {
        Self { watch: HeavyWatch::new(&cfg, rng), cfg, counters: BTreeMap::new() }
    }

    pub fn config(&self) -> &GenOpsConfig {
        &self.cfg
    }

    pub fn insert(&mut self, index: u64, count: u64) {
        let counters = &mut self.counters;
        self.watch.insert(index, count, |chunk| match chunk {
            Chunk::Units(n) => {
                if let Some(c) = counters.get_mut(&index) {
                    c.value += n;
                }
            }
            Chunk::Checkpoint { heavy, at, .. } => {
                counters.retain(|k, _| heavy.contains(k));
                for k in heavy {
                    counters.entry(k).or_insert(ActiveCounter { value: 0, since: at });
                }
            }
        });
    }

    pub fn apply_op(&mut self, index: u64, op: ContractionOp) {
        if let Some(c) = self.counters.get_mut(&index) {
            c.value = op.apply(c.value);
        }
    }

    /// Accepts inserts, contractions, and forgets (the zero contraction).
    pub fn update(&mut self, u: &Update) -> Result<()> {
        match u.kind {
            UpdateKind::Insert => self.insert(u.index, 1),
            UpdateKind::Apply(op) => self.apply_op(u.index, op),
            UpdateKind::Forget => self.apply_op(u.index, ContractionOp::Zero),
            _ => return Err(Error::UnsupportedOp("prefix and suffix deletions are not contractions".into())),
        }
        Ok(())
    }

    pub fn apply_step(&mut self, step: &Step) -> Result<()> {
        match step {
            Step::Inserts(run) => {
                self.insert(run.index, run.count);
                Ok(())
            }
            Step::Other(u) => self.update(u),
        }
    }

    /// The counter of `index`, or 0 when inactive.
    pub fn query(&self, index: u64) -> u64 {
        self.counters.get(&index).map_or(0, |c| c.value)
    }

    pub fn counter(&self, index: u64) -> Option<ActiveCounter> {
        self.counters.get(&index).copied()
    }

    /// Active counters with a nonzero value.
    pub fn reported(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.counters.iter().filter(|(_, c)| c.value > 0).map(|(&k, c)| (k, c.value))
    }

    pub fn checkpoints(&self) -> u64 {
        self.watch.checkpoints()
    }

    /// Estimate of the insert-only `l_2` norm.
    pub fn inserted_norm(&self) -> f64 {
        self.watch.f2().sqrt()
    }

    pub fn size_bytes(&self) -> usize {
        self.watch.size_bytes() + self.counters.len() * 24
    }
}

/// Constants of the level-set estimator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelSetConfig {
    pub p: f64,
    pub eps: f64,
    pub alpha: f64,
    pub n: u64,
    /// Upper bound `M` on the stream length.
    pub m_bound: u64,
    /// `K` in the first-phase cutoff `j0 = K log2(L^2 / eps^2)`.
    pub k: f64,
}

impl LevelSetConfig {
    pub fn new(p: f64, eps: f64, alpha: f64, n: u64, m_bound: u64) -> Self {
        Self { p, eps, alpha, n, m_bound, k: 4.0 }
    }

    /// `L = ceil(log2 M)`; levels run `0..=L`.
    pub fn levels(&self) -> usize {
        (self.m_bound.max(2) as f64).log2().ceil() as usize
    }

    /// `theta = eps^2 / L^2`.
    pub fn theta(&self) -> f64 {
        let l = self.levels() as f64;
        self.eps * self.eps / (l * l)
    }

    pub fn j0(&self) -> usize {
        (self.k * (1.0 / self.theta()).log2()).floor().max(0.0) as usize
    }

    /// Per-level tracker: heavy at `theta^{1/p} eps` in `l_p`.
    pub fn level_config(&self) -> Result<GenOpsConfig> {
        GenOpsConfig::lp(self.theta().powf(1.0 / self.p) * self.eps, self.alpha, self.p, self.n)
    }
}

/// Band `j` holds values in `[zeta M / 2^j, 2 zeta M / 2^j)`; its margins are
/// the parts outside `[(1 + eps), (2 - eps)] zeta M / 2^j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bands {
    pub top: f64,
    pub eps: f64,
}

impl Bands {
    pub fn new(zeta: f64, m_bound: u64, eps: f64) -> Self {
        Self { top: 2.0 * zeta * m_bound as f64, eps }
    }

    /// Band of a positive value; values at or above `2 zeta M` land in band 0.
    pub fn band(&self, v: f64) -> usize {
        if v >= self.top / 2.0 {
            return 0;
        }
        let j = (self.top / v).log2().floor() as usize - 1;
        // Guard the floor against rounding at band edges.
        if v >= self.top / 2f64.powi(j as i32 + 1) {
            j
        } else {
            j + 1
        }
    }

    /// Whether `v` lies within the `eps` margins at the edges of its band.
    pub fn near_edge(&self, v: f64) -> bool {
        let unit = self.top / 2f64.powi(self.band(v) as i32 + 1);
        v < (1.0 + self.eps) * unit || v > (2.0 - self.eps) * unit
    }
}

/// Per-level heavy-hitter structure of a [`LevelSetEstimator`].
pub trait LevelTracker: Sized {
    fn build(cfg: GenOpsConfig, rng: &SeededRng) -> Self;
    fn apply_step(&mut self, step: &Step) -> Result<()>;
    /// Nonzero estimates of the reported coordinates.
    fn values(&self) -> Vec<f64>;
    fn size_bytes(&self) -> usize;
}

impl LevelTracker for GenOpsHH {
    fn build(cfg: GenOpsConfig, rng: &SeededRng) -> Self {
        Self::new(cfg, rng)
    }

    fn apply_step(&mut self, step: &Step) -> Result<()> {
        GenOpsHH::apply_step(self, step)
    }

    fn values(&self) -> Vec<f64> {
        self.reported().map(|(_, v)| v as f64).collect()
    }

    fn size_bytes(&self) -> usize {
        GenOpsHH::size_bytes(self)
    }
}

/// Level-set `F_p` estimator over nested subsamples.
#[derive(Clone, Debug)]
pub struct LevelSetEstimator<T = GenOpsHH> {
    cfg: LevelSetConfig,
    level_hash: PolyHash,
    levels: Vec<T>,
    zeta: f64,
}

impl<T: LevelTracker> LevelSetEstimator<T> {
    pub fn new(cfg: LevelSetConfig, rng: &SeededRng) -> Result<Self> {
        let hh = cfg.level_config()?;
        let levels = (0..=cfg.levels()).map(|l| T::build(hh, &rng.fork(10 + l as u64))).collect();
        Ok(Self {
            cfg,
            level_hash: PolyHash::new(2, &rng.fork(0)),
            levels,
            zeta: 0.5 + 0.5 * rng.fork(1).uniform(0),
        })
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    /// Deepest level holding `index`; level `l` keeps it with probability
    /// `2^-l`, and levels are nested.
    pub fn level_of(&self, index: u64) -> usize {
        let zeros = self.level_hash.hash(index).leading_zeros() as usize - 3;
        zeros.min(self.cfg.levels())
    }

    pub fn apply_step(&mut self, step: &Step) -> Result<()> {
        let index = match step {
            Step::Inserts(run) => run.index,
            Step::Other(u) => u.index,
        };
        for l in 0..=self.level_of(index) {
            self.levels[l].apply_step(step)?;
        }
        Ok(())
    }

    pub fn level(&self, l: usize) -> &T {
        &self.levels[l]
    }

    /// Reported values of level `l` in band `j`.
    fn band_members(&self, bands: &Bands, l: usize, j: usize) -> Vec<f64> {
        self.levels[l].values().into_iter().filter(|&v| bands.band(v) == j).collect()
    }

    /// Share of the level-0 reported `F_p` lying within the band margins,
    /// where a small error in a value can move it to the next band.
    pub fn edge_share(&self) -> f64 {
        let bands = Bands::new(self.zeta, self.cfg.m_bound, self.cfg.eps);
        let (mut edge, mut all) = (0.0, 0.0);
        for v in self.levels[0].values() {
            let w = v.powf(self.cfg.p);
            all += w;
            if bands.near_edge(v) {
                edge += w;
            }
        }
        if all > 0.0 { edge / all } else { 0.0 }
    }

    fn band_sum(&self, members: &[f64]) -> f64 {
        members.iter().map(|v| v.powf(self.cfg.p)).sum()
    }

    /// Deepest level whose count of band `j` lies in `[lo, hi]`, or
    /// else the level whose count is nearest that range.
    fn resolve(&self, bands: &Bands, j: usize, lo: f64, hi: f64) -> Option<(usize, Vec<f64>)> {
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for l in (0..self.levels.len()).rev() {
            let members = self.band_members(bands, l, j);
            let c = members.len() as f64;
            if c >= lo && c <= hi {
                return Some((l, members));
            }
            if members.is_empty() {
                continue;
            }
            let miss = if c < lo { lo / c } else { c / hi };
            if best.as_ref().is_none_or(|b| miss < b.0) {
                best = Some((miss, l, members));
            }
        }
        best.map(|(_, l, m)| (l, m))
    }

    pub fn estimate(&self) -> f64 {
        let bands = Bands::new(self.zeta, self.cfg.m_bound, self.cfg.eps);
        let j0 = self.cfg.j0();
        let last = self.cfg.levels() + 1;
        let mut sums = vec![0.0; last + 1];
        for (j, s) in sums.iter_mut().enumerate() {
            if j <= j0 {
                *s = self.band_sum(&self.band_members(&bands, 0, j));
            } else if let Some((l, m)) = self.resolve(&bands, j, 1.0, 8.0) {
                *s = self.band_sum(&m) * 2f64.powi(l as i32);
            }
        }
        let rough: f64 = sums.iter().sum();
        if rough == 0.0 {
            return 0.0;
        }
        let log_m = (self.cfg.m_bound.max(2) as f64).log2();
        let eps2 = self.cfg.eps * self.cfg.eps;
        for j in (j0 + 1)..=last {
            if sums[j] == 0.0 {
                continue;
            }
            let eps_j = sums[j] * log_m / rough;
            let lo = (eps_j * eps_j / (2.0 * eps2)).max(1.0);
            let hi = (8.0 * eps_j * eps_j / eps2).max(lo);
            if let Some((l, m)) = self.resolve(&bands, j, lo, hi) {
                sums[j] = self.band_sum(&m) * 2f64.powi(l as i32);
            }
        }
        sums.iter().sum()
    }

    pub fn size_bytes(&self) -> usize {
        self.levels.iter().map(T::size_bytes).sum()
    }
}
