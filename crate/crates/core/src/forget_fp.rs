//! `F_p` of the live frequency vector `g` when updates may forget a
//! coordinate, under the promise that forgets remove at most an `alpha`
//! fraction of the statistic.
//!
//! Each unit draws a threshold `w` and runs an `l_p` sampler over the
//! insert-only vector. Alongside, it keeps exact counters for coordinates
//! that are `w/10`-heavy in the sampler's scaled view, refreshed whenever the
//! scaled `F_2` grows by a `1 + w/8` factor. After the stream the sampled
//! coordinate's live value is read from its counter when a forget was seen,
//! or otherwise estimated through a `w`-thresholded indicator, raised to the
//! target power by a Taylor estimator, and divided by an estimate of its
//! sampling probability. Units are subsampled by threshold level and
//! reweighted, so small thresholds are rare but still counted.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::hash::KeyMap;
use crate::estimators::{
    inputs_needed, inverse_probability, inverse_probability_inputs, pow_degree, taylor_degree, taylor_pow,
    PowerSumEstimator, TaylorConfig,
};
use crate::heavyhitter::HhConfig;
use crate::lpsampler::{Sample, SamplerConfig, SamplerTrial};
use crate::rng::SeededRng;
use crate::sketches::{CountSketch, CsBatch};
use crate::stream::{Step, StreamParams, Update, UpdateKind};

/// Buckets of the per-trial coordinate-estimate rows.
const ESTIMATE_BUCKETS: usize = 32;
/// Coordinates whose hashed estimate cells a trial keeps.
const CACHE_LIMIT: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct ForgetFpConfig {
    /// Order of the sampler inside each unit: `p` up to 2, then 2.
    pub sample_p: f64,
    pub n: u64,
    pub eps: f64,
    pub delta: f64,
    pub alpha: f64,
    pub dup: u64,
    /// `c` in the logical unit count `c / (eps^2 (1 - alpha))` and the
    /// per-level retained count `c 4^l / (1 - alpha)`.
    pub unit_constant: f64,
    pub c1: f64,
    /// Relative standard deviation of the shared `F_p(f~)` estimate.
    pub norm_rel_std: f64,
    /// Extra factor on unit counts; `n^{1 - 2/p}` above `p = 2`.
    pub unit_scale: f64,
    /// Exponent applied to `1 - alpha`; `2/p` above `p = 2`.
    pub alpha_power: f64,
}

impl ForgetFpConfig {
    /// Configuration for target order `params.p`; orders above 2 sample
    /// with `p = 2`.
    pub fn new(params: &StreamParams) -> Result<Self> {
        params.validate()?;
        let p = params.p;
        let (sample_p, unit_scale, alpha_power) = if p > 2.0 {
            (2.0, (params.n as f64).powf(1.0 - 2.0 / p), 2.0 / p)
        } else {
            (p, 1.0, 1.0)
        };
        Ok(Self {
            sample_p,
            n: params.n,
            eps: params.eps,
            delta: params.delta,
            alpha: params.alpha,
            dup: 4,
            unit_constant: 12.0,
            c1: 0.5,
            norm_rel_std: 0.04,
            unit_scale,
            alpha_power,
        })
    }

    fn keep(&self) -> f64 {
        (1.0 - self.alpha).powf(self.alpha_power)
    }

    /// Number of logical units.
    pub fn logical_units(&self) -> usize {
        (self.unit_constant * self.unit_scale / (self.eps * self.eps * self.keep())).ceil() as usize
    }

    /// Number of threshold levels, `ceil(log2 1/eps)`.
    pub fn levels(&self) -> usize {
        ((1.0 / self.eps).log2().ceil() as usize).max(1)
    }

    /// Units kept at level `l`, before capping by the logical count.
    pub fn level_target(&self, level: usize) -> usize {
        (self.unit_constant * 4f64.powi(level as i32) * self.unit_scale / self.keep()).ceil() as usize
    }

    fn sampler(&self) -> Result<SamplerConfig> {
        let mut cfg = SamplerConfig::new(self.sample_p, self.n, self.delta)?.with_dup(self.dup);
        cfg.c1 = self.c1;
        Ok(cfg)
    }

    /// Coordinate-estimate rows per trial for the given target orders.
    fn estimate_rows(&self, targets: &[f64]) -> usize {
        let k = taylor_degree(self.eps);
        let copies = targets.iter().map(|&q| inputs_needed(pow_degree(q, k))).max().unwrap_or(1);
        copies + inverse_probability_inputs(self.sample_p, self.eps)
    }
}

/// A retained unit: its logical id, threshold, level and weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitSlot {
    pub id: usize,
    pub w: f64,
    pub level: usize,
    pub weight: f64,
}

/// Logical units grouped by threshold level; level `l` holds thresholds
/// in `[2^l eps, 2^{l+1} eps)` (the lowest level also holds everything
/// below `eps`). Each level keeps its first `level_target(l)` units and
/// weights them by `N_l / N'_l`.
#[derive(Clone, Debug)]
pub struct LevelBank {
    slots: Vec<UnitSlot>,
    logical: usize,
}

impl LevelBank {
    pub fn new(cfg: &ForgetFpConfig, rng: &SeededRng) -> Self {
        let logical = cfg.logical_units();
        let levels = cfg.levels();
        let mut by_level: Vec<Vec<(usize, f64)>> = vec![Vec::new(); levels];
        for id in 0..logical {
            let w = rng.uniform(id as u64);
            let level = ((w.max(cfg.eps) / cfg.eps).log2().floor().max(0.0) as usize).min(levels - 1);
            by_level[level].push((id, w));
        }
        let mut slots = Vec::new();
        for (level, units) in by_level.iter().enumerate() {
            let keep = cfg.level_target(level).min(units.len());
            let weight = units.len() as f64 / keep.max(1) as f64;
            slots.extend(units[..keep].iter().map(|&(id, w)| UnitSlot { id, w, level, weight }));
        }
        Self { slots, logical }
    }

    pub fn slots(&self) -> &[UnitSlot] {
        &self.slots
    }

    pub fn logical_units(&self) -> usize {
        self.logical
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Counter {
    value: u64,
    forget_seen: bool,
}

/// One sampler trial of a unit with its exact counters and estimate rows.
#[derive(Clone, Debug)]
pub struct ForgetTrial {
    trial: SamplerTrial,
    rows: CountSketch,
    /// Whether inserts update `rows`; otherwise [`ForgetTrial::fill_rows`]
    /// builds them after the stream.
    live_rows: bool,
    row_cells: KeyMap<u64, CsBatch>,
    copy_thresholds: SeededRng,
    counters: BTreeMap<u64, Counter>,
    last_refresh: f64,
    growth: f64,
    heavy_eps: f64,
}

impl ForgetTrial {
    fn new(cfg: &SamplerConfig, id: usize, w: f64, eps: f64, rows: usize, rng: &SeededRng) -> Self {
        let w_eff = w.max(eps);
        let heavy_eps = w_eff / 10.0;
        let lane = rng.fork(id as u64);
        Self {
            trial: SamplerTrial::new(cfg, id, heavy_eps, rng),
            rows: CountSketch::with_independence(rows, ESTIMATE_BUCKETS, 2, &lane.fork(2)),
            live_rows: true,
            row_cells: KeyMap::default(),
            copy_thresholds: lane.fork(3),
            counters: BTreeMap::new(),
            last_refresh: 0.0,
            growth: 1.0 + w_eff / 8.0,
            heavy_eps,
        }
    }

    pub fn apply_step(&mut self, step: &Step) -> Result<()> {
        match step {
            Step::Inserts(run) => {
                self.insert(run.index, run.count);
                Ok(())
            }
            Step::Other(u) => self.apply_other(u),
        }
    }

    fn apply_other(&mut self, u: &Update) -> Result<()> {
        match u.kind {
            UpdateKind::Insert => {
                self.insert(u.index, 1);
                Ok(())
            }
            UpdateKind::Forget => {
                if let Some(c) = self.counters.get_mut(&u.index) {
                    *c = Counter { value: 0, forget_seen: true };
                }
                Ok(())
            }
            _ => Err(Error::UnsupportedOp("only inserts and forgets are allowed in this model".into())),
        }
    }

    fn insert(&mut self, index: u64, count: u64) {
        if self.live_rows && !self.row_cells.contains_key(&index) {
            let rb = self.rows.prepare(&self.trial.batch(index));
            if self.row_cells.len() >= CACHE_LIMIT {
                self.row_cells.clear();
            }
            self.row_cells.insert(index, rb);
        }
        let mut left = count;
        while left > 0 {
            let threshold = if self.last_refresh > 0.0 { self.last_refresh * self.growth } else { f64::MIN_POSITIVE };
            let done = self.trial.insert_until(index, left, Some(threshold));
            if self.live_rows {
                self.rows.apply_prepared(&self.row_cells[&index], done);
            }
            if let Some(c) = self.counters.get_mut(&index) {
                c.value += done;
            }
            left -= done;
            if self.trial.heavy_hitters().f2().estimate() >= threshold {
                self.refresh();
            }
        }
    }

    /// Builds the estimate rows from per-coordinate insert totals. The rows
    /// are linear in the insert-only vector, so this matches streaming them
    /// up to summation order.
    fn fill_rows(&mut self, totals: &BTreeMap<u64, u64>) {
        for (&i, &c) in totals {
            self.rows.apply_batch(&self.trial.batch(i), c);
        }
        self.live_rows = true;
    }

    /// Keeps counters of heavy coordinates and opens zeroed ones for newly
    /// heavy coordinates.
    fn refresh(&mut self) {
        let hh = self.trial.heavy_hitters();
        let mut heavy: Vec<u64> = hh.pool_query(self.heavy_eps).map(|k| self.trial.split_key(k).0).collect();
        heavy.sort_unstable();
        heavy.dedup();
        self.counters.retain(|i, _| heavy.binary_search(i).is_ok());
        for i in heavy {
            self.counters.entry(i).or_insert(Counter { value: 0, forget_seen: false });
        }
        self.last_refresh = hh.f2().estimate();
    }

    /// Counter of `index`, as `(value, forget_seen)`, if one is live.
    pub fn counter(&self, index: u64) -> Option<(u64, bool)> {
        self.counters.get(&index).map(|c| (c.value, c.forget_seen))
    }

    pub fn sample(&self, c1: f64) -> Option<Sample> {
        self.trial.test(c1).filter(|s| s.passed)
    }

    pub fn size_bytes(&self) -> usize {
        self.trial.heavy_hitters().size_bytes() + self.rows.size_bytes() + self.counters.len() * 24
    }
}

/// Estimate of the live value of a sampled coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LiveEstimate {
    /// `f^` from the trial's heavy-hitter sketch.
    pub inserted: f64,
    /// Counter value when a forget was seen, else `inserted`.
    pub live: f64,
    pub exact: bool,
}

/// `(g^_j, exact)`: the counter when it saw a forget, else `f^_j`.
pub fn live_estimate(trial: &ForgetTrial, sample: &Sample) -> LiveEstimate {
    let key = trial.trial.key(sample.index, sample.copy);
    let inserted = trial.trial.heavy_hitters().count_sketch().estimate(key) * trial.trial.unscale(sample.index, sample.copy);
    match trial.counter(sample.index) {
        Some((value, true)) => LiveEstimate { inserted, live: value as f64, exact: true },
        _ => LiveEstimate { inserted, live: inserted, exact: false },
    }
}

/// A unit's contribution for each target order, or `None` when no trial
/// passed.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitOutcome {
    pub slot: UnitSlot,
    pub values: Option<Vec<f64>>,
}

fn unit_values(cfg: &ForgetFpConfig, w: f64, trial: &ForgetTrial, sample: &Sample, power_sum: f64, targets: &[f64]) -> Result<Vec<f64>> {
    let live = live_estimate(trial, sample);
    let scale = trial.trial.unscale(sample.index, sample.copy);
    let key = trial.trial.key(sample.index, sample.copy);
    let cells = trial.rows.prepare(&[(key, 1.0)]);
    let row = |r: usize| trial.rows.row_estimate_prepared(&cells, 0, r) * scale;
    let k = taylor_degree(cfg.eps);
    let copies = trial.rows.rows() - inverse_probability_inputs(cfg.sample_p, cfg.eps);
    let inv_rows: Vec<f64> = (copies..trial.rows.rows()).map(row).collect();
    let center = live.inserted;
    if center <= 0.0 {
        return Err(Error::EstimationFailed("non-positive coordinate estimate".into()));
    }
    let inv = inverse_probability(power_sum, &inv_rows, center, cfg.sample_p, cfg.eps)?;
    let ratio = live.live / live.inserted;
    targets
        .iter()
        .map(|&q| {
            let xq = if live.exact && ratio <= 0.5 {
                live.live.max(0.0).powf(q)
            } else {
                let degree = pow_degree(q, k);
                let xs: Vec<f64> = (0..inputs_needed(degree))
                    .map(|c| {
                        let wc = if c == 0 { w } else { trial.copy_thresholds.uniform(c as u64) };
                        if ratio >= 1.0 - wc {
                            row(c)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                taylor_pow(&xs, TaylorConfig::new(live.live, degree)?, q)?
            };
            Ok(xq * inv)
        })
        .collect()
}

/// A stream with the per-coordinate insert totals and the shared norm
/// estimate.
struct Prepared<'a> {
    steps: &'a [Step],
    totals: BTreeMap<u64, u64>,
    power_sum: f64,
}

/// Streams every trial of one unit through `steps`, stopping at the first
/// trial that passes.
fn run_unit(
    cfg: &ForgetFpConfig,
    sampler: &SamplerConfig,
    slot: UnitSlot,
    rows: usize,
    rng: &SeededRng,
    stream: &Prepared,
    targets: &[f64],
) -> Result<UnitOutcome> {
    let unit_rng = rng.fork(slot.id as u64);
    for t in 0..sampler.trials {
        let mut trial = ForgetTrial::new(sampler, t, slot.w, cfg.eps, rows, &unit_rng);
        trial.live_rows = false;
        for step in stream.steps {
            trial.apply_step(step)?;
        }
        if let Some(sample) = trial.sample(sampler.c1) {
            trial.fill_rows(&stream.totals);
            let power_sum = stream.power_sum;
            let values = unit_values(cfg, slot.w, &trial, &sample, power_sum, targets)?;
            return Ok(UnitOutcome { slot, values: Some(values) });
        }
    }
    Ok(UnitOutcome { slot, values: None })
}

/// Weighted average of unit outcomes per target; failed units are left
/// out and the weights renormalized.
pub fn combine(outcomes: &[UnitOutcome], targets: usize) -> Result<Vec<f64>> {
    let ok: Vec<&UnitOutcome> = outcomes.iter().filter(|o| o.values.is_some()).collect();
    let total: f64 = ok.iter().map(|o| o.slot.weight).sum();
    if ok.is_empty() || total <= 0.0 {
        return Err(Error::EstimationFailed("no unit produced a sample".into()));
    }
    Ok((0..targets)
        .map(|t| ok.iter().map(|o| o.slot.weight * o.values.as_ref().unwrap()[t]).sum::<f64>() / total)
        .collect())
}

/// Result of a forget-model estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct ForgetEstimate {
    /// One value per requested target order.
    pub values: Vec<f64>,
    /// Estimate of `F_{sample_p}` of the insert-only vector.
    pub inserted_power_sum: f64,
    pub units: usize,
    pub failed_units: usize,
}

/// Estimates `F_q(g)` for every `q` in `targets` from one pass over
/// `steps`. Units and their trials run one after another, and each unit
/// stops at its first passing trial.
pub fn estimate_steps(cfg: &ForgetFpConfig, rng: &SeededRng, steps: &[Step], targets: &[f64]) -> Result<ForgetEstimate> {
    if targets.is_empty() || targets.iter().any(|&q| !(q >= 0.0)) {
        return Err(Error::Config("target orders must be non-negative".into()));
    }
    let sampler = cfg.sampler()?;
    // The norm sketch is linear, so per-coordinate totals give the same state.
    let mut totals: BTreeMap<u64, u64> = BTreeMap::new();
    for step in steps {
        match step {
            Step::Inserts(run) => *totals.entry(run.index).or_default() += run.count,
            Step::Other(u) => match u.kind {
                UpdateKind::Insert => *totals.entry(u.index).or_default() += 1,
                UpdateKind::Forget => {}
                _ => return Err(Error::UnsupportedOp("only inserts and forgets are allowed in this model".into())),
            },
        }
    }
    let mut norm = PowerSumEstimator::new(cfg.sample_p, cfg.eps, cfg.norm_rel_std, &rng.fork(3))?;
    for (&i, &c) in &totals {
        norm.update(i, c as f64);
    }
    let stream = Prepared { steps, power_sum: norm.estimate(), totals };
    let bank = LevelBank::new(cfg, &rng.fork(2));
    let rows = cfg.estimate_rows(targets);
    let units_rng = rng.fork(1);
    let outcomes = bank
        .slots()
        .iter()
        .map(|&slot| run_unit(cfg, &sampler, slot, rows, &units_rng, &stream, targets))
        .collect::<Result<Vec<_>>>()?;
    let failed_units = outcomes.iter().filter(|o| o.values.is_none()).count();
    Ok(ForgetEstimate {
        values: combine(&outcomes, targets.len())?,
        inserted_power_sum: stream.power_sum,
        units: outcomes.len(),
        failed_units,
    })
}

/// Bytes of sketch state the estimator allocates when every trial of
/// every retained unit is live.
pub fn sketch_bytes(cfg: &ForgetFpConfig, targets: &[f64], rng: &SeededRng) -> Result<usize> {
    let sampler = cfg.sampler()?;
    let bank = LevelBank::new(cfg, &rng.fork(2));
    let rows = cfg.estimate_rows(targets);
    let universe = (cfg.n + 1) * cfg.dup;
    let per_unit: usize = bank
        .slots()
        .iter()
        .map(|s| {
            let hh = HhConfig::new(s.w.max(cfg.eps) / 10.0, universe);
            let cells = hh.cs_rows * hh.cs_buckets + (hh.f2_rows | 1) * hh.f2_buckets + rows * ESTIMATE_BUCKETS;
            cells * std::mem::size_of::<f64>() * sampler.trials
        })
        .sum();
    let norm = PowerSumEstimator::new(cfg.sample_p, cfg.eps, cfg.norm_rel_std, &rng.fork(3))?;
    Ok(per_unit + norm.size_bytes())
}
