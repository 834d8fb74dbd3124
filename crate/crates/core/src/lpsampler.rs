//! Insertion-only `l_p` sampling for `p` in `(0, 2]`.
//!
//! Every coordinate is fanned out to `dup` copies, and copy `(i, c)` is
//! scaled by `1 / e_{(i,c)}^{1/p}` for a standard exponential `e`. The copy
//! holding the largest scaled value belongs to coordinate `i` with
//! probability exactly `f_i^p / F_p`. A trial tracks the scaled vector with
//! a heavy-hitter sketch and reports its top candidate when the top two
//! estimates are separated relative to the scaled `F_2`.


use crate::error::{Error, Result};
use crate::hash::KeyMap;
use crate::heavyhitter::{HeavyHitterTracker, HhBatch, HhConfig};
use crate::rng::{exp_variate, SeededRng};
use crate::stream::{Step, Update, UpdateKind};

/// Trials per sampler: `ceil(4 (log2 log2 n + log2 1/delta))` below `p = 2`
/// and `ceil(4 log2 n log2 1/delta)` at `p = 2`.
pub fn trial_count(p: f64, n: u64, delta: f64) -> usize {
    let log_n = (n.max(4) as f64).log2();
    let log_inv_delta = (1.0 / delta).log2().max(1.0);
    let k = if p < 2.0 { 4.0 * (log_n.log2() + log_inv_delta) } else { 4.0 * log_n * log_inv_delta };
    k.ceil() as usize
}

/// The copy of `(index, exponential)` pairs with the largest scaled value.
pub fn anti_rank_argmax(freqs: &[(u64, f64)], exps: &[f64], p: f64) -> Option<u64> {
    freqs
        .iter()
        .zip(exps)
        .map(|(&(i, f), &e)| (i, f / e.powf(1.0 / p)))
        .filter(|&(_, z)| z > 0.0)
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub p: f64,
    /// Coordinates lie in `[0, n]`.
    pub n: u64,
    /// Copies per coordinate; a power of two.
    pub dup: u64,
    pub trials: usize,
    /// Gap-test constant.
    pub c1: f64,
    /// Heavy-hitter threshold of each trial.
    pub hh_eps: f64,
}

impl SamplerConfig {
    pub fn new(p: f64, n: u64, delta: f64) -> Result<Self> {
        let cfg = Self { p, n, dup: 4, trials: trial_count(p, n, delta), c1: 0.5, hh_eps: 0.1 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_dup(mut self, dup: u64) -> Self {
        self.dup = dup;
        self
    }

    pub fn with_trials(mut self, trials: usize) -> Self {
        self.trials = trials;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 2.0) {
            return Err(Error::Domain(format!("sampling order {} outside (0, 2]", self.p)));
        }
        if !self.dup.is_power_of_two() {
            return Err(Error::Config(format!("duplication factor {} is not a power of two", self.dup)));
        }
        if self.trials == 0 || !(self.c1 > 0.0) || !(self.hh_eps > 0.0 && self.hh_eps < 1.0) {
            return Err(Error::Config("sampler needs trials > 0, c1 > 0 and hh_eps in (0, 1)".into()));
        }
        let shift = self.dup.trailing_zeros();
        if self.n.checked_add(1).and_then(|n| n.checked_shl(shift)).is_none_or(|u| u >> shift != self.n + 1) {
            return Err(Error::Config("universe too large for the duplication factor".into()));
        }
        Ok(())
    }
}

/// Outcome of a trial's gap test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub index: u64,
    pub copy: u64,
    pub trial: usize,
    /// CountSketch estimate of the winning scaled copy.
    pub top: f64,
    pub runner_up: f64,
    pub f2: f64,
    pub passed: bool,
}

/// One independent scaled view of the stream and its heavy-hitter sketch.
#[derive(Clone, Debug)]
pub struct SamplerTrial {
    p: f64,
    shift: u32,
    id: usize,
    exps: SeededRng,
    hh: HeavyHitterTracker,
    /// Hashed batches of recently inserted coordinates.
    cache: KeyMap<u64, HhBatch>,
}

/// Coordinates whose hashed batches a trial keeps.
const CACHE_LIMIT: usize = 4096;

impl SamplerTrial {
    /// Trial `id` of a sampler seeded with `rng`; `hh_eps` overrides the
    /// configured heavy-hitter threshold.
    pub fn new(cfg: &SamplerConfig, id: usize, hh_eps: f64, rng: &SeededRng) -> Self {
        let lane = rng.fork(id as u64);
        let shift = cfg.dup.trailing_zeros();
        let universe = (cfg.n + 1) << shift;
        Self {
            p: cfg.p,
            shift,
            id,
            exps: lane.fork(0),
            hh: HeavyHitterTracker::new(HhConfig::new(hh_eps, universe), &lane.fork(1)),
            cache: KeyMap::default(),
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn dup(&self) -> u64 {
        1 << self.shift
    }

    pub fn key(&self, index: u64, copy: u64) -> u64 {
        (index << self.shift) | copy
    }

    pub fn split_key(&self, key: u64) -> (u64, u64) {
        (key >> self.shift, key & ((1 << self.shift) - 1))
    }

    /// `e^{1/p}` of a copy: multiplies a scaled estimate back to the
    /// original scale.
    pub fn unscale(&self, index: u64, copy: u64) -> f64 {
        exp_variate(&self.exps, index, copy).powf(1.0 / self.p)
    }

    /// The scaled updates one insert of `index` produces.
    pub fn batch(&self, index: u64) -> Vec<(u64, f64)> {
        (0..self.dup()).map(|c| (self.key(index, c), 1.0 / self.unscale(index, c))).collect()
    }

    pub fn prepare(&self, index: u64) -> HhBatch {
        self.hh.prepare(&self.batch(index))
    }

    pub fn heavy_hitters(&self) -> &HeavyHitterTracker {
        &self.hh
    }

    pub fn heavy_hitters_mut(&mut self) -> &mut HeavyHitterTracker {
        &mut self.hh
    }

    pub fn insert(&mut self, index: u64, count: u64) {
        self.insert_until(index, count, None);
    }

    /// Inserts up to `count` copies of `index`, stopping early once the
    /// tracker's `F_2` estimate reaches `stop_at`. Returns the copies taken.
    pub fn insert_until(&mut self, index: u64, count: u64, stop_at: Option<f64>) -> u64 {
        if !self.cache.contains_key(&index) {
            let pb = self.prepare(index);
            if self.cache.len() >= CACHE_LIMIT {
                self.cache.clear();
            }
            self.cache.insert(index, pb);
        }
        let pb = self.cache.get_mut(&index).expect("batch cached above");
        self.hh.apply_prepared(pb, count, stop_at)
    }

    /// Gap test: the top two candidate estimates `v1, v2` must satisfy
    /// `v1^2 - v2^2 >= c1 * F2`. `None` before any insert.
    pub fn test(&self, c1: f64) -> Option<Sample> {
        let cands = self.hh.candidates();
        let &(key, top) = cands.first()?;
        if top <= 0.0 {
            return None;
        }
        let runner_up = cands.get(1).map_or(0.0, |c| c.1.max(0.0));
        let f2 = self.hh.f2().estimate();
        let (index, copy) = self.split_key(key);
        Some(Sample {
            index,
            copy,
            trial: self.id,
            top,
            runner_up,
            f2,
            passed: top * top - runner_up * runner_up >= c1 * f2,
        })
    }
}

fn insert_only(update: &Update) -> Result<()> {
    match update.kind {
        UpdateKind::Insert => Ok(()),
        _ => Err(Error::UnsupportedOp("the sampler accepts inserts only".into())),
    }
}

/// A bank of trials queried in a fixed order.
#[derive(Clone, Debug)]
pub struct LpSampler {
    cfg: SamplerConfig,
    trials: Vec<SamplerTrial>,
}

impl LpSampler {
    pub fn new(cfg: SamplerConfig, rng: &SeededRng) -> Result<Self> {
        cfg.validate()?;
        let trials = (0..cfg.trials).map(|t| SamplerTrial::new(&cfg, t, cfg.hh_eps, rng)).collect();
        Ok(Self { cfg, trials })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn trials(&self) -> &[SamplerTrial] {
        &self.trials
    }

    pub fn update(&mut self, index: u64) {
        self.insert(index, 1);
    }

    pub fn insert(&mut self, index: u64, count: u64) {
        for t in &mut self.trials {
            t.insert(index, count);
        }
    }

    pub fn apply_step(&mut self, step: &Step) -> Result<()> {
        match step {
            Step::Inserts(run) => {
                self.insert(run.index, run.count);
                Ok(())
            }
            Step::Other(u) => insert_only(u),
        }
    }

    /// Sample of the first passing trial.
    pub fn sample(&self) -> Option<Sample> {
        self.trials.iter().find_map(|t| t.test(self.cfg.c1).filter(|s| s.passed))
    }

    /// Never fails on a nonempty stream: falls back to the candidate with
    /// the widest gap, marked `passed = false`.
    pub fn sample_or_best(&self) -> Option<Sample> {
        self.sample().or_else(|| {
            self.trials
                .iter()
                .filter_map(|t| t.test(self.cfg.c1))
                .max_by(|a, b| (a.top.powi(2) - a.runner_up.powi(2)).total_cmp(&(b.top.powi(2) - b.runner_up.powi(2))))
        })
    }
}

/// Same output as building an [`LpSampler`] over `steps` and calling
/// `sample`, but trials are built one at a time and evaluation stops at the
/// first that passes.
pub fn sample_steps(cfg: &SamplerConfig, rng: &SeededRng, steps: &[Step]) -> Result<Option<Sample>> {
    cfg.validate()?;
    for t in 0..cfg.trials {
        let mut trial = SamplerTrial::new(cfg, t, cfg.hh_eps, rng);
        for step in steps {
            match step {
                Step::Inserts(run) => trial.insert(run.index, run.count),
                Step::Other(u) => insert_only(u)?,
            }
        }
        if let Some(s) = trial.test(cfg.c1).filter(|s| s.passed) {
            return Ok(Some(s));
        }
    }
    Ok(None)
}

/// A sampler queried after every step. It keeps reporting from the same
/// trial while that trial passes and otherwise moves to the first passing
/// trial.
#[derive(Clone, Debug)]
pub struct ContinuousSampler {
    bank: LpSampler,
    current: Option<Sample>,
    switches: usize,
}

impl ContinuousSampler {
    pub fn new(cfg: SamplerConfig, rng: &SeededRng) -> Result<Self> {
        Ok(Self { bank: LpSampler::new(cfg, rng)?, current: None, switches: 0 })
    }

    /// Applies one step and returns the output after it.
    pub fn apply_step(&mut self, step: &Step) -> Result<Option<u64>> {
        self.bank.apply_step(step)?;
        let c1 = self.bank.cfg.c1;
        let sticky = self
            .current
            .and_then(|cur| self.bank.trials[cur.trial].test(c1))
            .filter(|s| s.passed);
        let next = sticky.or_else(|| self.bank.sample());
        if next.map(|s| s.index) != self.current.map(|s| s.index) && next.is_some() && self.current.is_some() {
            self.switches += 1;
        }
        if next.is_some() {
            self.current = next;
        }
        Ok(self.output())
    }

    /// Current output; `None` until some trial has passed.
    pub fn output(&self) -> Option<u64> {
        self.current.map(|s| s.index)
    }

    /// The underlying trial bank.
    pub fn bank(&self) -> &LpSampler {
        &self.bank
    }

    /// Number of times the output changed.
    pub fn switches(&self) -> usize {
        self.switches
    }
}
