//! Synthetic stream generation with oracle-certified deletion loss.

use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{alpha_of, FrequencyOracle};
use crate::rng::{LaneStream, SeededRng};
use crate::stream::{ContractionOp, Update, UpdateKind};

/// Allowed distance between the certified and the requested loss.
pub const ALPHA_TOLERANCE: f64 = 0.05;
const ATTEMPTS: u64 = 100;

/// Shape of the insert-only frequency vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Shape {
    Uniform,
    Zipf { s: f64 },
    /// Coordinate 1 receives `frac` of the inserts; the rest are uniform.
    PlantedHeavy { frac: f64 },
}

impl Shape {
    fn weights(self, n: u64) -> Vec<f64> {
        match self {
            Shape::Uniform => vec![1.0; n as usize],
            Shape::Zipf { s } => (1..=n).map(|i| (i as f64).powf(-s)).collect(),
            Shape::PlantedHeavy { frac } => {
                let rest = if n > 1 { (1.0 - frac) / (n - 1) as f64 } else { 0.0 };
                (1..=n).map(|i| if i == 1 { frac } else { rest }).collect()
            }
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Uniform => write!(f, "uniform"),
            Shape::Zipf { s } => write!(f, "zipf:{s}"),
            Shape::PlantedHeavy { frac } => write!(f, "planted:{frac}"),
        }
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown distribution `{s}`"));
        let arg = |a: &str| a.parse::<f64>().map_err(|_| bad());
        match s.split_once(':') {
            None if s == "uniform" => Ok(Shape::Uniform),
            Some(("zipf", a)) => Ok(Shape::Zipf { s: arg(a)? }),
            Some(("planted", a)) => {
                let frac = arg(a)?;
                if !(0.0..=1.0).contains(&frac) {
                    return Err(bad());
                }
                Ok(Shape::PlantedHeavy { frac })
            }
            _ => Err(bad()),
        }
    }
}

/// Deletion events mixed into the insert stream.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Deletions {
    None,
    /// After each insert, forget a mass-weighted coordinate with probability
    /// `rate`. With a target loss, forgets are instead placed one at a time
    /// until the target is reached.
    Forget { rate: f64 },
    /// `prefix` prefix deletions at random points, then `suffix` suffix
    /// deletions closing the stream.
    Psd { prefix: usize, suffix: usize },
    /// After each insert, apply a random contraction with probability `rate`.
    Contract { rate: f64 },
}

impl fmt::Display for Deletions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Deletions::None => write!(f, "none"),
            Deletions::Forget { rate } => write!(f, "forget:{rate}"),
            Deletions::Psd { prefix, suffix } => write!(f, "psd:{prefix}:{suffix}"),
            Deletions::Contract { rate } => write!(f, "contract:{rate}"),
        }
    }
}

impl FromStr for Deletions {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown deletion pattern `{s}`"));
        let parts: Vec<&str> = s.split(':').collect();
        let rate = |a: &str| a.parse::<f64>().ok().filter(|r| (0.0..=1.0).contains(r)).ok_or_else(bad);
        match parts.as_slice() {
            ["none"] => Ok(Deletions::None),
            ["forget"] => Ok(Deletions::Forget { rate: 0.0 }),
            ["forget", r] => Ok(Deletions::Forget { rate: rate(r)? }),
            ["contract", r] => Ok(Deletions::Contract { rate: rate(r)? }),
            ["psd", a, b] => Ok(Deletions::Psd {
                prefix: a.parse().map_err(|_| bad())?,
                suffix: b.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

/// Everything needed to regenerate a stream.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub shape: Shape,
    pub n: u64,
    /// Number of inserts.
    pub m: u64,
    pub deletions: Deletions,
    /// Loss `1 - F_p(f)/F_p(f~)` the stream must certify, within
    /// [`ALPHA_TOLERANCE`].
    pub target_alpha: Option<f64>,
    /// Order used for certification.
    pub p: f64,
    pub seed: u64,
}

impl GenSpec {
    pub fn new(shape: Shape, n: u64, m: u64) -> Self {
        Self { shape, n, m, deletions: Deletions::None, target_alpha: None, p: 1.0, seed: 0 }
    }

    pub fn deletions(mut self, d: Deletions) -> Self {
        self.deletions = d;
        self
    }

    pub fn target(mut self, alpha: f64, p: f64) -> Self {
        self.target_alpha = Some(alpha);
        self.p = p;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// A generated stream and its certified loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub updates: Vec<Update>,
    pub alpha: f64,
    pub attempts: u64,
}

/// Generates a stream for `spec`, resampling until the certified loss is
/// within tolerance of the target.
pub fn generate(spec: &GenSpec) -> Result<Generated> {
    if spec.n == 0 || spec.m == 0 {
        return Err(Error::Config("n and m must be positive".into()));
    }
    if let Some(a) = spec.target_alpha {
        if !(0.0..1.0).contains(&a) {
            return Err(Error::Config(format!("target alpha {a} must lie in [0, 1)")));
        }
    }
    let weights = WeightedIndex::new(spec.shape.weights(spec.n))
        .map_err(|e| Error::Config(format!("distribution weights: {e}")))?;
    let rng = SeededRng::new(spec.seed, 0x6e6e);
    for attempt in 0..ATTEMPTS {
        let mut lane = rng.fork(attempt).stream();
        let inserts: Vec<u64> = (0..spec.m).map(|_| weights.sample(&mut lane) as u64 + 1).collect();
        let updates = match (spec.deletions, spec.target_alpha) {
            (Deletions::Forget { .. }, Some(target)) => match place_forgets(&inserts, spec.p, target, &mut lane) {
                Some(u) => u,
                None => continue,
            },
            (d, _) => interleave(&inserts, d, &weights, &mut lane),
        };
        let alpha = alpha_of(&updates, spec.p)?;
        match spec.target_alpha {
            Some(t) if (alpha - t).abs() > ALPHA_TOLERANCE => continue,
            _ => return Ok(Generated { updates, alpha, attempts: attempt + 1 }),
        }
    }
    Err(Error::Config(format!(
        "no stream within {ALPHA_TOLERANCE} of the target loss after {ATTEMPTS} attempts"
    )))
}

fn timed(events: Vec<(u64, UpdateKind)>) -> Vec<Update> {
    crate::stream::sequential(events)
}

fn interleave(inserts: &[u64], d: Deletions, weights: &WeightedIndex<f64>, lane: &mut LaneStream) -> Vec<Update> {
    let mut events: Vec<(u64, UpdateKind)> = Vec::with_capacity(inserts.len());
    for &i in inserts {
        events.push((i, UpdateKind::Insert));
        match d {
            Deletions::Forget { rate } if lane.random_bool(rate) => {
                events.push((weights.sample(lane) as u64 + 1, UpdateKind::Forget));
            }
            Deletions::Contract { rate } if lane.random_bool(rate) => {
                let op = match lane.random_range(0..5) {
                    0 => ContractionOp::Zero,
                    1 => ContractionOp::Halve,
                    2 => ContractionOp::Subtract(lane.random_range(1..=8)),
                    3 => ContractionOp::Cap(lane.random_range(1..=8)),
                    _ => ContractionOp::SqrtFloor,
                };
                events.push((weights.sample(lane) as u64 + 1, UpdateKind::Apply(op)));
            }
            _ => {}
        }
    }
    if let Deletions::Psd { prefix, suffix } = d {
        let mut slots: Vec<usize> = (0..prefix).map(|_| lane.random_range(1..=events.len())).collect();
        slots.sort_unstable_by(|a, b| b.cmp(a));
        for at in slots {
            // Times are positions; a prefix deletion at position `at` may
            // reach back to any earlier time.
            let cutoff = lane.random_range(1..=at as u64);
            events.insert(at, (weights.sample(lane) as u64 + 1, UpdateKind::PrefixDelete { cutoff }));
        }
        let end = events.len() as u64;
        for _ in 0..suffix {
            let cutoff = lane.random_range(1..=end);
            events.push((weights.sample(lane) as u64 + 1, UpdateKind::SuffixDelete { cutoff }));
        }
    }
    timed(events)
}

/// Adds forgets of mass-weighted coordinates at random points until the
/// loss reaches the target band; `None` when a forget overshoots it.
fn place_forgets(inserts: &[u64], p: f64, target: f64, lane: &mut LaneStream) -> Option<Vec<Update>> {
    let m = inserts.len();
    let oracle = FrequencyOracle::replay(&timed(inserts.iter().map(|&i| (i, UpdateKind::Insert)).collect()), false).ok()?;
    let full = oracle.inserted_fp(p);
    // Per coordinate: positions of its inserts, and the latest forget point.
    let mut positions: std::collections::BTreeMap<u64, Vec<usize>> = Default::default();
    for (pos, &i) in inserts.iter().enumerate() {
        positions.entry(i).or_default().push(pos);
    }
    let mut cut: std::collections::BTreeMap<u64, usize> = Default::default();
    let mut live = full;
    let mut forgets: Vec<(usize, u64)> = Vec::new();
    while 1.0 - live / full < target - ALPHA_TOLERANCE {
        let i = inserts[lane.random_range(0..m)];
        let at = lane.random_range(0..=m);
        let prev = cut.get(&i).copied().unwrap_or(0);
        if at <= prev {
            continue;
        }
        let pos = &positions[&i];
        let survivors = |c: usize| (pos.len() - pos.partition_point(|&q| q < c)) as f64;
        live += survivors(at).powf(p) - survivors(prev).powf(p);
        cut.insert(i, at);
        forgets.push((at, i));
        if forgets.len() > m {
            return None;
        }
    }
    if 1.0 - live / full > target + ALPHA_TOLERANCE {
        return None;
    }
    forgets.sort_unstable();
    let mut events = Vec::with_capacity(m + forgets.len());
    let mut next = forgets.iter().peekable();
    for (pos, &i) in inserts.iter().enumerate() {
        while let Some(&(_, j)) = next.next_if(|f| f.0 == pos) {
            events.push((j, UpdateKind::Forget));
        }
        events.push((i, UpdateKind::Insert));
    }
    events.extend(next.map(|&(_, j)| (j, UpdateKind::Forget)));
    Some(timed(events))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insert_only_uniform_has_no_loss() {
        let g = generate(&GenSpec::new(Shape::Uniform, 16, 1024).seed(3)).unwrap();
        assert_eq!(g.alpha, 0.0);
        assert_eq!(g.updates.len(), 1024);
        assert!(g.updates.iter().all(|u| (1..=16).contains(&u.index)));
    }

    #[test]
    fn zipf_target_is_certified() {
        for seed in 0..5 {
            let spec = GenSpec::new(Shape::Zipf { s: 1.1 }, 64, 4000)
                .deletions(Deletions::Forget { rate: 0.0 })
                .target(0.5, 1.0)
                .seed(seed);
            let g = generate(&spec).unwrap();
            assert!((0.45..=0.55).contains(&g.alpha), "{}", g.alpha);
            assert!((alpha_of(&g.updates, 1.0).unwrap() - g.alpha).abs() < 1e-12);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = GenSpec::new(Shape::PlantedHeavy { frac: 0.6 }, 16, 500)
            .deletions(Deletions::Forget { rate: 0.0 })
            .target(0.25, 1.5)
            .seed(9);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
    }

    #[test]
    fn psd_streams_are_well_formed() {
        let spec = GenSpec::new(Shape::Uniform, 8, 300).deletions(Deletions::Psd { prefix: 5, suffix: 2 }).seed(4);
        let g = generate(&spec).unwrap();
        crate::stream::Stream::new(g.updates.clone()).validate().unwrap();
        let kinds = |f: fn(&UpdateKind) -> bool| g.updates.iter().filter(|u| f(&u.kind)).count();
        assert_eq!(kinds(|k| matches!(k, UpdateKind::PrefixDelete { .. })), 5);
        assert_eq!(kinds(|k| matches!(k, UpdateKind::SuffixDelete { .. })), 2);
    }

    #[test]
    fn unreachable_target_is_an_error() {
        // A single coordinate cannot lose half its F_1 without a forget.
        let spec = GenSpec::new(Shape::Uniform, 1, 10).target(0.5, 1.0);
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn specs_parse_from_text() {
        assert_eq!("zipf:1.1".parse::<Shape>().unwrap(), Shape::Zipf { s: 1.1 });
        assert_eq!("planted:0.6".parse::<Shape>().unwrap(), Shape::PlantedHeavy { frac: 0.6 });
        assert_eq!("psd:3:1".parse::<Deletions>().unwrap(), Deletions::Psd { prefix: 3, suffix: 1 });
        assert!("planted:2".parse::<Shape>().is_err());
        assert!("forget:x".parse::<Deletions>().is_err());
    }
}
