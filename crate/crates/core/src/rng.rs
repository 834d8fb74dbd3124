//! Counter-mode randomness.
//!
//! Every random quantity in the crate is a pure function of
//! `(seed, lane, draw index)`, so sketches can be rebuilt bit-exactly and
//! independent components never share draws.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::hash::mix64;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const SECOND: u64 = 0xd1b5_4a32_d192_ed03;

/// A seeded random oracle addressed by lane and draw index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeededRng {
    seed: u64,
    lane: u64,
    key: u64,
}

impl SeededRng {
    pub fn new(seed: u64, lane: u64) -> Self {
        let key = mix64(mix64(seed ^ GOLDEN).wrapping_add(mix64(lane.wrapping_add(SECOND))));
        Self { seed, lane, key }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn lane(&self) -> u64 {
        self.lane
    }

    /// A child lane. Distinct `tag`s give independent generators.
    pub fn fork(&self, tag: u64) -> Self {
        Self::new(self.seed, mix64(self.key ^ mix64(tag.wrapping_mul(GOLDEN) ^ SECOND)))
    }

    /// The `index`-th 64-bit word of this lane.
    #[inline]
    pub fn word(&self, index: u64) -> u64 {
        mix64(self.key.wrapping_add(index.wrapping_mul(GOLDEN)))
    }

    /// A word addressed by a pair, e.g. `(coordinate, copy)`.
    #[inline]
    pub fn word2(&self, a: u64, b: u64) -> u64 {
        mix64(self.word(a) ^ b.wrapping_mul(SECOND).wrapping_add(GOLDEN))
    }

    /// Uniform on `(0, 1]`.
    #[inline]
    pub fn uniform(&self, index: u64) -> f64 {
        unit_interval(self.word(index))
    }

    /// Uniform on `(0, 1]`, addressed by a pair.
    #[inline]
    pub fn uniform2(&self, a: u64, b: u64) -> f64 {
        unit_interval(self.word2(a, b))
    }

    /// A sequential generator over this lane, for use with `rand` adaptors.
    pub fn stream(&self) -> LaneStream {
        LaneStream { rng: *self, next: 0 }
    }
}

#[inline]
fn unit_interval(w: u64) -> f64 {
    ((w >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Sequential view of a [`SeededRng`] lane.
#[derive(Clone, Debug)]
pub struct LaneStream {
    rng: SeededRng,
    next: u64,
}

impl LaneStream {
    /// Uniform on `(0, 1]`.
    pub fn uniform(&mut self) -> f64 {
        unit_interval(self.next_u64())
    }
}

impl RngCore for LaneStream {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        let w = self.rng.word(self.next);
        self.next += 1;
        w
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

/// `-ln(u)`; the map from a uniform draw to a standard exponential.
#[inline]
pub fn exp_from_uniform(u: f64) -> f64 {
    -u.ln()
}

/// The exponential variable attached to `(index, copy)`. Repeated calls
/// return the same value.
#[inline]
pub fn exp_variate(rng: &SeededRng, index: u64, copy: u64) -> f64 {
    exp_from_uniform(rng.uniform2(index, copy))
}

/// Standard p-stable draw (characteristic function `exp(-|t|^p)`) by the
/// Chambers–Mallows–Stuck transform. `draw` addresses the variate within the
/// lane.
pub fn stable_variate(rng: &SeededRng, p: f64, draw: u64) -> Result<f64> {
    if !(p > 0.0 && p < 2.0) {
        return Err(Error::Domain(format!("stable order {p} outside (0, 2)")));
    }
    let theta = std::f64::consts::PI * (rng.uniform2(draw, 0) - 0.5);
    let w = exp_from_uniform(rng.uniform2(draw, 1));
    Ok(stable_from_parts(p, theta, w))
}

/// Chambers–Mallows–Stuck for `theta` uniform on `(-pi/2, pi/2)` and `w`
/// standard exponential.
#[inline]
pub fn stable_from_parts(p: f64, theta: f64, w: f64) -> f64 {
    if (p - 1.0).abs() < 1e-12 {
        return theta.tan();
    }
    let a = (p * theta).sin() / theta.cos().powf(1.0 / p);
    let b = (((1.0 - p) * theta).cos() / w).powf((1.0 - p) / p);
    a * b
}

/// Number of Bernoulli(`q`) trials up to and including the first success,
/// driven by a uniform `u` in `(0, 1]`.
#[inline]
pub fn geometric_trials(q: f64, u: f64) -> u64 {
    if q >= 1.0 {
        return 1;
    }
    if q <= 0.0 {
        return u64::MAX;
    }
    let t = (u.ln() / (-q).ln_1p()).ceil();
    if t < 1.0 {
        1
    } else if t >= u64::MAX as f64 {
        u64::MAX
    } else {
        t as u64
    }
}
