//! Shannon entropy under forgets.
//!
//! With `pi_i = f_i / F_1`, the quantity `T(y) = (1 - sum pi_i^{1+y}) / y`
//! tends to the natural-log entropy as `y -> 0`. `T` is read off at `k`
//! Chebyshev points `y_i < 0` close to 0 from estimates of `F_{1+y_i}` and
//! `F_1`, and the interpolating polynomial is evaluated at 0.

use std::f64::consts::{LN_2, PI};

use crate::error::{Error, Result};
use crate::forget_fp::{self, ForgetFpConfig};
use crate::rng::SeededRng;
use crate::stream::{Step, StreamParams};

/// Effective forget fraction for `F_p` with `p` near 1 when the entropy
/// loses at most an `alpha` fraction:
/// `alpha (p + (1 - p) H) + 2 (alpha^2 + (1 - p)^2 H^2)`.
pub fn rfds_margin(p: f64, alpha: f64, h_tilde: f64) -> Result<f64> {
    let q = 1.0 - p;
    let margin = alpha * (p + q * h_tilde) + 2.0 * (alpha * alpha + q * q * h_tilde * h_tilde);
    if margin >= 1.0 {
        return Err(Error::PromiseViolated(format!("effective forget fraction {margin:.3} is at least 1")));
    }
    Ok(margin)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntropyConfig {
    pub eps: f64,
    pub alpha: f64,
    pub delta: f64,
    pub n: u64,
    pub m_bound: u64,
    /// Offsets `y_i`, all negative.
    pub offsets: Vec<f64>,
    /// Accuracy of the shared moment sample, `eps / 3` by default.
    pub inner_eps: f64,
}

impl EntropyConfig {
    /// `k = ceil(log2(1/eps) + log2 log2 M)` offsets at the Chebyshev points
    /// of `[-l, 0]`, `l = 1 / (2 (k + 1) log2 M)`.
    pub fn new(params: &StreamParams) -> Result<Self> {
        params.validate()?;
        let log_m = (params.m_bound.max(4) as f64).log2();
        let k = ((1.0 / params.eps).log2() + log_m.log2()).ceil().max(2.0) as usize;
        let width = 1.0 / (2.0 * (k as f64 + 1.0) * log_m);
        let offsets = (0..k)
            .map(|i| -width / 2.0 * (1.0 + ((2 * i + 1) as f64 * PI / (2 * k) as f64).cos()))
            .collect();
        let cfg = Self {
            eps: params.eps,
            alpha: params.alpha,
            delta: params.delta,
            n: params.n,
            m_bound: params.m_bound,
            offsets,
            inner_eps: params.eps / 3.0,
        };
        cfg.inner_alpha()?;
        Ok(cfg)
    }

    pub fn exponents(&self) -> Vec<f64> {
        self.offsets.iter().map(|y| 1.0 + y).collect()
    }

    /// Largest effective forget fraction over the exponents and 1, with
    /// `log2 n` standing in for the unknown entropy of the insert vector.
    pub fn inner_alpha(&self) -> Result<f64> {
        let h = (self.n.max(2) as f64).log2();
        let mut worst = rfds_margin(1.0, self.alpha, h)?;
        for p in self.exponents() {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(format!("exponent {p} must lie in (0, 1)")));
            }
            worst = worst.max(rfds_margin(p, self.alpha, h)?);
        }
        Ok(worst)
    }

    /// Order-1 forget-model sample shared by all moments.
    pub fn inner(&self) -> Result<ForgetFpConfig> {
        ForgetFpConfig::new(&StreamParams {
            n: self.n,
            m_bound: self.m_bound,
            p: 1.0,
            eps: self.inner_eps,
            delta: self.delta,
            alpha: self.inner_alpha()?,
            seed: 0,
        })
    }

    /// Target orders: the exponents, then 1.
    fn targets(&self) -> Vec<f64> {
        let mut t = self.exponents();
        t.push(1.0);
        t
    }
}

/// Entropy in bits from `F_{1+y_i}` at `offsets` and `F_1`.
pub fn interpolate_entropy(offsets: &[f64], moments: &[f64], f1: f64) -> f64 {
    let t: Vec<f64> = offsets.iter().zip(moments).map(|(&y, &m)| (1.0 - m / f1.powf(1.0 + y)) / y).collect();
    // Lagrange form at 0.
    let at_zero: f64 = (0..offsets.len())
        .map(|i| {
            let basis: f64 = (0..offsets.len()).filter(|&j| j != i).map(|j| offsets[j] / (offsets[j] - offsets[i])).product();
            t[i] * basis
        })
        .sum();
    at_zero / LN_2
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntropyEstimate {
    pub bits: f64,
    /// Estimates of `F_{1+y_i}`.
    pub moments: Vec<f64>,
    pub f1: f64,
}

pub fn estimate_steps(cfg: &EntropyConfig, rng: &SeededRng, steps: &[Step]) -> Result<EntropyEstimate> {
    let inner = cfg.inner()?;
    let est = forget_fp::estimate_steps(&inner, rng, steps, &cfg.targets())
        .map_err(|e| Error::EstimationFailed(format!("entropy moments: {e}")))?;
    let (f1, moments) = est.values.split_last().expect("targets end with 1");
    if !(*f1 > 0.0) {
        return Err(Error::EstimationFailed("entropy moments: non-positive F_1".into()));
    }
    Ok(EntropyEstimate { bits: interpolate_entropy(&cfg.offsets, moments, *f1), moments: moments.to_vec(), f1: *f1 })
}
