//! Exact reference answers computed from the materialized frequency vector.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::stream::{Update, UpdateKind};

/// `Σ f_i^p` with the convention `0^0 = 0`.
pub fn exact_fp(freqs: impl IntoIterator<Item = u64>, p: f64) -> f64 {
    freqs
        .into_iter()
        .filter(|&f| f > 0)
        .map(|f| if p == 0.0 { 1.0 } else { (f as f64).powf(p) })
        .sum()
}

/// Final frequencies of a replayed stream, with and without deletions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrequencyOracle {
    live: BTreeMap<u64, u64>,
    inserted: BTreeMap<u64, u64>,
    history: Option<BTreeMap<u64, Vec<u64>>>,
}

impl FrequencyOracle {
    /// Replays `updates`. `track_history` keeps per-coordinate insertion
    /// times, which prefix and suffix deletions need.
    pub fn replay(updates: &[Update], track_history: bool) -> Result<Self> {
        let mut o = FrequencyOracle {
            history: track_history.then(BTreeMap::new),
            ..Default::default()
        };
        for u in updates {
            o.step(u)?;
        }
        Ok(o)
    }

    /// An oracle whose live and insert-only vectors both equal `freqs`.
    pub fn from_frequencies(freqs: impl IntoIterator<Item = (u64, u64)>) -> Self {
        let live: BTreeMap<u64, u64> = freqs.into_iter().filter(|&(_, f)| f > 0).collect();
        Self { inserted: live.clone(), live, history: None }
    }

    fn step(&mut self, u: &Update) -> Result<()> {
        let i = u.index;
        match u.kind {
            UpdateKind::Insert => {
                *self.live.entry(i).or_default() += 1;
                *self.inserted.entry(i).or_default() += 1;
                if let Some(h) = &mut self.history {
                    h.entry(i).or_default().push(u.time);
                }
            }
            UpdateKind::Forget => {
                self.live.remove(&i);
                if let Some(h) = &mut self.history {
                    h.remove(&i);
                }
            }
            UpdateKind::Apply(op) => {
                if self.history.is_some() {
                    return Err(Error::Semantic(
                        "contraction operations have no timestamp semantics".into(),
                    ));
                }
                let f = self.live.get(&i).copied().unwrap_or(0);
                self.set_live(i, op.apply(f));
            }
            UpdateKind::PrefixDelete { cutoff } | UpdateKind::SuffixDelete { cutoff } => {
                let prefix = matches!(u.kind, UpdateKind::PrefixDelete { .. });
                if prefix && cutoff > u.time {
                    return Err(Error::Semantic(format!(
                        "prefix cutoff {cutoff} is after its request time {}",
                        u.time
                    )));
                }
                let Some(h) = &mut self.history else {
                    return Err(Error::Semantic(
                        "prefix/suffix deletions need history tracking".into(),
                    ));
                };
                let times = h.entry(i).or_default();
                times.retain(|&t| if prefix { t > cutoff } else { t < cutoff });
                let remaining = times.len() as u64;
                self.set_live(i, remaining);
            }
        }
        Ok(())
    }

    fn set_live(&mut self, i: u64, f: u64) {
        if f == 0 {
            self.live.remove(&i);
        } else {
            self.live.insert(i, f);
        }
    }

    /// `f_i` after all operations.
    pub fn frequency(&self, i: u64) -> u64 {
        self.live.get(&i).copied().unwrap_or(0)
    }

    /// `f̃_i`, the number of inserts to `i`.
    pub fn inserted_frequency(&self, i: u64) -> u64 {
        self.inserted.get(&i).copied().unwrap_or(0)
    }

    /// Nonzero live frequencies by index.
    pub fn frequencies(&self) -> &BTreeMap<u64, u64> {
        &self.live
    }

    /// Nonzero insert-only frequencies by index.
    pub fn inserted_frequencies(&self) -> &BTreeMap<u64, u64> {
        &self.inserted
    }

    /// Surviving insertion times of `i`, when history is tracked.
    pub fn history(&self, i: u64) -> Option<&[u64]> {
        self.history.as_ref()?.get(&i).map(Vec::as_slice)
    }

    pub fn fp(&self, p: f64) -> f64 {
        exact_fp(self.live.values().copied(), p)
    }

    pub fn inserted_fp(&self, p: f64) -> f64 {
        exact_fp(self.inserted.values().copied(), p)
    }

    /// `(f_i^p / F_p)` over the nonzero coordinates.
    pub fn sampling_distribution(&self, p: f64) -> Result<BTreeMap<u64, f64>> {
        let total = self.fp(p);
        if total == 0.0 {
            return Err(Error::UndefinedDistribution);
        }
        Ok(self
            .live
            .iter()
            .map(|(&i, &f)| (i, (f as f64).powf(p) / total))
            .collect())
    }

    /// Empirical entropy of `f / ||f||_1` in bits.
    pub fn entropy(&self) -> Result<f64> {
        entropy_of(self.live.values().copied())
    }

    /// The `k` largest live coordinates, ties broken by smaller index.
    pub fn top_k(&self, k: usize) -> Vec<(u64, u64)> {
        let mut v: Vec<(u64, u64)> = self.live.iter().map(|(&i, &f)| (i, f)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        v.truncate(k);
        v
    }

    /// `1 - F_p(f) / F_p(f̃)`.
    pub fn alpha(&self, p: f64) -> f64 {
        let full = self.inserted_fp(p);
        if full == 0.0 {
            return 0.0;
        }
        (1.0 - self.fp(p) / full).clamp(0.0, 1.0)
    }
}

/// Entropy in bits of the distribution proportional to `freqs`.
pub fn entropy_of(freqs: impl IntoIterator<Item = u64>) -> Result<f64> {
    let v: Vec<f64> = freqs.into_iter().filter(|&f| f > 0).map(|f| f as f64).collect();
    let total: f64 = v.iter().sum();
    if total == 0.0 {
        return Err(Error::UndefinedEntropy);
    }
    Ok(v.iter()
        .map(|&f| {
            let q = f / total;
            -q * q.log2()
        })
        .sum::<f64>()
        .max(0.0))
}

/// The fraction of `F_p` lost to deletions, replaying with history so every
/// update kind is accepted except contractions combined with PD/SD.
pub fn alpha_of(updates: &[Update], p: f64) -> Result<f64> {
    let needs_history = updates.iter().any(|u| {
        matches!(u.kind, UpdateKind::PrefixDelete { .. } | UpdateKind::SuffixDelete { .. })
    });
    Ok(FrequencyOracle::replay(updates, needs_history)?.alpha(p))
}

/// Total variation distance between two distributions keyed by index.
pub fn total_variation(a: &BTreeMap<u64, f64>, b: &BTreeMap<u64, f64>) -> f64 {
    let keys: std::collections::BTreeSet<u64> = a.keys().chain(b.keys()).copied().collect();
    0.5 * keys
        .iter()
        .map(|k| (a.get(k).unwrap_or(&0.0) - b.get(k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}

/// Normalizes sample counts into an empirical distribution.
pub fn empirical(counts: &BTreeMap<u64, u64>) -> BTreeMap<u64, f64> {
    let total: u64 = counts.values().sum();
    counts
        .iter()
        .map(|(&k, &c)| (k, c as f64 / total.max(1) as f64))
        .collect()
}
