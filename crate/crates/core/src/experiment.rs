//! Experiment runs: repeated seeded trials of one estimator on one stream,
//! compared against exact answers.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::entropy::{self, EntropyConfig};
use crate::error::{Error, Result};
use crate::forget_f1::{self, F1Config, NearUniformReservoir};
use crate::forget_fp::{self, ForgetFpConfig};
use crate::gen::{self, GenSpec};
use crate::genops::{GenOpsConfig, GenOpsHH, LevelSetConfig, LevelSetEstimator};
use crate::lpsampler::{sample_steps, SamplerConfig};
use crate::oracle::{empirical, entropy_of, total_variation, FrequencyOracle};
use crate::psd::{PsdF1, PsdLevelSet};
use crate::rng::SeededRng;
use crate::stream::{coalesce, Header, Step, Stream, StreamParams, UpdateKind};

pub const SCHEMA_VERSION: u32 = 1;

/// Fraction of trials that must land within tolerance for a run to pass.
pub const PASS_FRACTION: f64 = 0.8;

/// Lane of the per-trial seeds.
const TRIAL_LANE: u64 = 0x7472_6961_6c73;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Sample,
    Fp,
    F1,
    Hh,
    Levelset,
    PsdFp,
    PsdF1,
    Entropy,
}

impl Task {
    pub const ALL: [Task; 8] =
        [Task::Sample, Task::Fp, Task::F1, Task::Hh, Task::Levelset, Task::PsdFp, Task::PsdF1, Task::Entropy];

    fn name(self) -> &'static str {
        match self {
            Task::Sample => "sample",
            Task::Fp => "fp",
            Task::F1 => "f1",
            Task::Hh => "hh",
            Task::Levelset => "levelset",
            Task::PsdFp => "psd-fp",
            Task::PsdF1 => "psd-f1",
            Task::Entropy => "entropy",
        }
    }

    /// Allowed error: relative for moments, additive bits for entropy,
    /// a fraction of `||f||_2` for heavy hitters, total variation for
    /// sampling.
    pub fn tolerance(self, eps: f64) -> f64 {
        match self {
            Task::F1 | Task::PsdF1 => 3.0 * eps,
            _ => eps,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown task `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: Task,
    /// Path of the stream file, as given.
    pub stream: String,
    /// FNV-1a digest of the stream file contents.
    pub stream_digest: String,
    pub params: StreamParams,
    pub trials: usize,
    /// Sampler duplication factor.
    pub dup: u64,
}

/// 64-bit FNV-1a, hex encoded.
pub fn digest(bytes: &[u8]) -> String {
    let h = bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    format!("{h:016x}")
}

/// Exact answers for a stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleAnswers {
    pub schema_version: u32,
    pub n: u64,
    pub updates: usize,
    pub inserts: u64,
    pub p: f64,
    pub fp: f64,
    pub inserted_fp: f64,
    pub f1: f64,
    pub f2: f64,
    pub entropy: Option<f64>,
    /// Fraction of `F_p` lost to deletions.
    pub alpha: f64,
    pub frequencies: BTreeMap<u64, u64>,
    pub inserted_frequencies: BTreeMap<u64, u64>,
}

fn needs_history(stream: &Stream) -> bool {
    stream
        .updates
        .iter()
        .any(|u| matches!(u.kind, UpdateKind::PrefixDelete { .. } | UpdateKind::SuffixDelete { .. }))
}

fn replay(stream: &Stream) -> Result<FrequencyOracle> {
    FrequencyOracle::replay(&stream.updates, needs_history(stream))
}

pub fn oracle_answers(stream: &Stream, p: f64) -> Result<OracleAnswers> {
    let o = replay(stream)?;
    Ok(OracleAnswers {
        schema_version: SCHEMA_VERSION,
        n: stream.universe(),
        updates: stream.updates.len(),
        inserts: stream.insert_count(),
        p,
        fp: o.fp(p),
        inserted_fp: o.inserted_fp(p),
        f1: o.fp(1.0),
        f2: o.fp(2.0),
        entropy: o.entropy().ok(),
        alpha: o.alpha(p),
        frequencies: o.frequencies().clone(),
        inserted_frequencies: o.inserted_frequencies().clone(),
    })
}

/// Generates a stream with a header and its exact answers at order
/// `spec.p`.
pub fn gen_stream(spec: &GenSpec) -> Result<(Stream, OracleAnswers)> {
    let g = gen::generate(spec)?;
    let mut stream = Stream::new(g.updates);
    stream.header = Some(Header { n: spec.n, m: stream.updates.len() as u64 });
    let answers = oracle_answers(&stream, spec.p)?;
    Ok((stream, answers))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub estimate: Option<f64>,
    pub error: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Fraction of all trials within tolerance.
    pub within: f64,
    pub failure_rate: f64,
    pub error_q10: Option<f64>,
    pub error_q50: Option<f64>,
    pub error_q90: Option<f64>,
    pub error_max: Option<f64>,
    /// Total variation between sampled indices and the target distribution.
    pub tv: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    /// Exact value of the estimated quantity; none for sampling.
    pub oracle_value: Option<f64>,
    pub tolerance: f64,
    pub trials: Vec<TrialRow>,
    pub summary: Summary,
    /// Bytes of sketch state of the first trial.
    pub state_bytes: usize,
    pub pass: bool,
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("trial,estimate,error,failure\n");
        for r in &self.trials {
            let failure = r.failure.as_deref().unwrap_or("").replace([',', '\n'], " ");
            out.push_str(&format!("{},{},{},{}\n", r.trial, cell(r.estimate), cell(r.error), failure));
        }
        out
    }
}

/// Everything a trial reads.
struct Context<'a> {
    cfg: &'a ExperimentConfig,
    steps: Vec<Step>,
    oracle: FrequencyOracle,
}

struct Outcome {
    estimate: f64,
    error: Option<f64>,
    bytes: usize,
}

fn relative(estimate: f64, exact: f64) -> f64 {
    if exact == 0.0 {
        estimate.abs()
    } else {
        (estimate / exact - 1.0).abs()
    }
}

fn oracle_value(task: Task, params: &StreamParams, o: &FrequencyOracle) -> Result<Option<f64>> {
    Ok(Some(match task {
        Task::Sample => return Ok(None),
        Task::Fp | Task::Levelset | Task::PsdFp => o.fp(params.p),
        Task::F1 | Task::PsdF1 => o.fp(1.0),
        Task::Hh => o.fp(2.0).sqrt(),
        Task::Entropy => o.entropy()?,
    }))
}

fn run_trial(ctx: &Context, rng: &SeededRng, exact: f64) -> Result<Outcome> {
    let params = &ctx.cfg.params;
    let steps = &ctx.steps[..];
    let level_set = || LevelSetConfig::new(params.p, params.eps, params.alpha, params.n, params.m_bound);
    let outcome = |estimate: f64, bytes: usize| Outcome { estimate, error: Some(relative(estimate, exact)), bytes };
    Ok(match ctx.cfg.task {
        Task::Sample => {
            let cfg = SamplerConfig::new(params.p, params.n, params.delta)?.with_dup(ctx.cfg.dup);
            let s = sample_steps(&cfg, rng, steps)?
                .ok_or_else(|| Error::EstimationFailed("no sampler trial passed".into()))?;
            Outcome { estimate: s.index as f64, error: None, bytes: 0 }
        }
        Task::Fp => {
            let mut cfg = ForgetFpConfig::new(params)?;
            cfg.dup = ctx.cfg.dup;
            let e = forget_fp::estimate_steps(&cfg, rng, steps, &[params.p])?;
            outcome(e.values[0], forget_fp::sketch_bytes(&cfg, &[params.p], rng)?)
        }
        Task::F1 => {
            let cfg = F1Config::new(params)?;
            let e = forget_f1::estimate_steps(&cfg, rng, steps)?;
            let r = NearUniformReservoir::new(&cfg, rng);
            outcome(e.value, r.slot_bits(params.n, params.m_bound).div_ceil(8))
        }
        Task::Hh => {
            let mut hh = GenOpsHH::new(GenOpsConfig::l2(params.eps, params.alpha, params.n)?, rng);
            for s in steps {
                hh.apply_step(s)?;
            }
            let worst = (1..=params.n)
                .map(|i| (hh.query(i) as f64 - ctx.oracle.frequency(i) as f64).abs())
                .fold(0.0, f64::max);
            let error = if exact > 0.0 { worst / exact } else { worst };
            Outcome { estimate: worst, error: Some(error), bytes: hh.size_bytes() }
        }
        Task::Levelset => {
            let mut ls = LevelSetEstimator::<GenOpsHH>::new(level_set(), rng)?;
            for s in steps {
                ls.apply_step(s)?;
            }
            outcome(ls.estimate(), ls.size_bytes())
        }
        Task::PsdFp => {
            let mut ls = PsdLevelSet::new(level_set(), rng)?;
            for s in steps {
                ls.apply_step(s)?;
            }
            outcome(ls.estimate(), ls.size_bytes())
        }
        Task::PsdF1 => {
            let cfg = F1Config::new(params)?;
            let mut r = PsdF1::new(&cfg, rng);
            for s in steps {
                r.apply_step(s)?;
            }
            outcome(r.estimate().value, r.reservoir().slot_bits(params.n, params.m_bound).div_ceil(8))
        }
        Task::Entropy => {
            let cfg = EntropyConfig::new(params)?;
            let e = entropy::estimate_steps(&cfg, rng, steps)?;
            let bytes = forget_fp::sketch_bytes(&cfg.inner()?, &cfg.exponents(), rng)?;
            Outcome { estimate: e.bits, error: Some((e.bits - exact).abs()), bytes }
        }
    })
}

/// The deletion fraction a task's promise refers to.
pub fn exact_alpha(task: Task, p: f64, stream: &Stream) -> Result<f64> {
    let has_history = stream
        .updates
        .iter()
        .any(|u| matches!(u.kind, UpdateKind::PrefixDelete { .. } | UpdateKind::SuffixDelete { .. }));
    let o = FrequencyOracle::replay(&stream.updates, has_history)?;
    Ok(match task {
        Task::F1 | Task::PsdF1 => o.alpha(1.0),
        Task::Hh => o.alpha(2.0),
        Task::Entropy => {
            let h = o.entropy().unwrap_or(0.0);
            let h_tilde = entropy_of(o.inserted_frequencies().values().copied()).unwrap_or(0.0);
            let drift = if h_tilde > 0.0 { (h - h_tilde).abs() / h_tilde } else { 0.0 };
            drift.max(o.alpha(1.0))
        }
        _ => o.alpha(p),
    })
}

fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let at = ((sorted.len() - 1) as f64 * q).round() as usize;
    Some(sorted[at])
}

/// Runs `cfg.trials` seeded trials of the task on `stream`. Trials are
/// spread over worker threads and collected in trial order, so the report
/// does not depend on the number of workers.
pub fn run_experiment(cfg: &ExperimentConfig, stream: &Stream) -> Result<Report> {
    cfg.params.validate()?;
    if cfg.trials == 0 {
        return Err(Error::Config("at least one trial is needed".into()));
    }
    let oracle = replay(stream)?;
    let value = oracle_value(cfg.task, &cfg.params, &oracle)?;
    let exact = value.unwrap_or(0.0);
    let ctx = Context { cfg, steps: coalesce(&stream.updates), oracle };
    let master = SeededRng::new(cfg.params.seed, TRIAL_LANE);
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(cfg.trials);
    let mut results: Vec<Option<Result<Outcome>>> = (0..cfg.trials).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let ctx = &ctx;
                scope.spawn(move || {
                    (w..cfg.trials)
                        .step_by(workers)
                        .map(|t| (t, run_trial(ctx, &master.fork(t as u64), exact)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (t, r) in h.join().expect("trial worker panicked") {
                results[t] = Some(r);
            }
        }
    });

    let tolerance = cfg.task.tolerance(cfg.params.eps);
    let mut rows = Vec::with_capacity(cfg.trials);
    let mut state_bytes = 0;
    let mut picks: BTreeMap<u64, u64> = BTreeMap::new();
    for (trial, r) in results.into_iter().enumerate() {
        match r.expect("every trial ran") {
            Ok(o) => {
                if trial == 0 {
                    state_bytes = o.bytes;
                }
                if cfg.task == Task::Sample {
                    *picks.entry(o.estimate as u64).or_default() += 1;
                }
                rows.push(TrialRow { trial, estimate: Some(o.estimate), error: o.error, failure: None });
            }
            Err(e @ (Error::EstimationFailed(_) | Error::PromiseViolated(_))) => {
                rows.push(TrialRow { trial, estimate: None, error: None, failure: Some(e.to_string()) })
            }
            Err(e) => return Err(e),
        }
    }

    let failures = rows.iter().filter(|r| r.failure.is_some()).count();
    let failure_rate = failures as f64 / cfg.trials as f64;
    let mut errors: Vec<f64> = rows.iter().filter_map(|r| r.error).collect();
    errors.sort_by(f64::total_cmp);
    let within = errors.iter().filter(|&&e| e <= tolerance).count() as f64 / cfg.trials as f64;
    let tv = (cfg.task == Task::Sample && !picks.is_empty())
        .then(|| -> Result<f64> {
            let target = ctx.oracle.sampling_distribution(cfg.params.p)?;
            Ok(total_variation(&empirical(&picks), &target))
        })
        .transpose()?;
    let accurate = match tv {
        Some(tv) => tv <= tolerance,
        None => within >= PASS_FRACTION,
    };
    let pass = accurate && failure_rate <= 2.0 * cfg.params.delta;
    Ok(Report {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        oracle_value: value,
        tolerance,
        summary: Summary {
            within,
            failure_rate,
            error_q10: quantile(&errors, 0.1),
            error_q50: quantile(&errors, 0.5),
            error_q90: quantile(&errors, 0.9),
            error_max: errors.last().copied(),
            tv,
        },
        trials: rows,
        state_bytes,
        pass,
    })
}
