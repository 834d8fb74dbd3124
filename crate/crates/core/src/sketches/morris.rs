use crate::error::{Error, Result};
use crate::rng::{geometric_trials, SeededRng};
use crate::sketches::blob::{BlobReader, BlobWriter, SketchKind};

/// Averaged base-`a` Morris counters.
///
/// Each repetition holds a level `L` and advances with probability `a^-L`
/// per increment. Rather than flipping a coin per increment, a repetition
/// stores the number of increments until its next level change, drawn from
/// the matching geometric law, so bulk increments cost one draw per level.
#[derive(Clone, Debug)]
pub struct MorrisCounter {
    base: f64,
    levels: Vec<u64>,
    countdown: Vec<u64>,
    draws: Vec<u64>,
    rng: SeededRng,
}

impl MorrisCounter {
    /// A counter within `(1 ± eps)` of the truth with probability `1 - delta`.
    pub fn new(eps: f64, delta: f64, rng: &SeededRng) -> Self {
        let log_term = (2.0 / delta).ln();
        let reps = log_term.ceil().max(1.0) as usize;
        Self::with_base(1.0 + reps as f64 * eps * eps / log_term, reps, rng)
    }

    pub fn with_base(base: f64, reps: usize, rng: &SeededRng) -> Self {
        assert!(base > 1.0 && reps >= 1);
        Self {
            base,
            levels: vec![0; reps],
            countdown: vec![1; reps],
            draws: vec![0; reps],
            rng: *rng,
        }
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn repetitions(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, rep: usize) -> u64 {
        self.levels[rep]
    }

    pub fn increment(&mut self) {
        self.increment_by(1);
    }

    pub fn increment_by(&mut self, count: u64) {
        for rep in 0..self.levels.len() {
            let mut left = count;
            while left >= self.countdown[rep] {
                left -= self.countdown[rep];
                self.levels[rep] += 1;
                let q = self.base.powf(-(self.levels[rep] as f64));
                let u = self.rng.uniform2(rep as u64, self.draws[rep]);
                self.draws[rep] += 1;
                self.countdown[rep] = geometric_trials(q, u);
            }
            self.countdown[rep] -= left;
        }
    }

    /// Mean over repetitions of `(a^L - 1) / (a - 1)`.
    pub fn read(&self) -> f64 {
        let a = self.base;
        let total: f64 = self
            .levels
            .iter()
            .map(|&l| ((l as f64) * a.ln()).exp_m1() / (a - 1.0))
            .sum();
        total / self.levels.len() as f64
    }

    /// Bits needed for the levels alone.
    pub fn level_bits(&self) -> usize {
        let max = self.levels.iter().copied().max().unwrap_or(0);
        self.levels.len() * (64 - max.leading_zeros() as usize).max(1)
    }

    pub fn to_blob(&self) -> Vec<u8> {
        BlobWriter::new(SketchKind::Morris, &self.rng)
            .f64(self.base)
            .u64s(&self.levels)
            .u64s(&self.countdown)
            .u64s(&self.draws)
            .finish()
    }

    pub fn from_blob(data: &[u8]) -> Result<Self> {
        let (mut r, rng) = BlobReader::open(data, SketchKind::Morris)?;
        let base = r.f64()?;
        let levels = r.u64s()?;
        let countdown = r.u64s()?;
        let draws = r.u64s()?;
        r.finish()?;
        let reps = levels.len();
        if !(base > 1.0) || reps == 0 || countdown.len() != reps || draws.len() != reps {
            return Err(Error::Blob("inconsistent Morris state".into()));
        }
        Ok(Self { base, levels, countdown, draws, rng })
    }
}
