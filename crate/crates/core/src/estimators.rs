//! Unbiased building blocks: truncated Taylor estimators of `X^p` and
//! `1/X` from independent unbiased estimates of `X`, a `p`-stable
//! geometric-mean norm sketch, and the inverse sampling probability
//! `F_p / f_i^p` assembled from them.

use std::ops::Range;

use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::lpsampler::{Sample, SamplerTrial};
use crate::rng::{stable_variate, SeededRng};
use crate::sketches::CountSketch;

/// Truncation degree for bias about `eps^10`: `ceil(log2 1/eps) + 2`.
pub fn taylor_degree(eps: f64) -> usize {
    (1.0 / eps).log2().ceil().max(0.0) as usize + 2
}

/// Degree actually needed for `X^p`: the series stops at `p` when `p` is
/// an integer.
pub fn pow_degree(p: f64, degree: usize) -> usize {
    if p >= 0.0 && p.fract() == 0.0 && (p as usize) < degree {
        p as usize
    } else {
        degree
    }
}

/// Inputs consumed by a degree-`k` estimator: term `l` takes `l` fresh ones.
pub fn inputs_needed(degree: usize) -> usize {
    degree * (degree + 1) / 2
}

/// Input positions used by each term `0..=degree`; pairwise disjoint.
pub fn term_inputs(degree: usize) -> impl Iterator<Item = Range<usize>> {
    (0..=degree).map(|l| if l == 0 { 0..0 } else { inputs_needed(l - 1)..inputs_needed(l) })
}

/// Generalized binomial coefficient `p choose l`.
pub fn binomial(p: f64, l: usize) -> f64 {
    (0..l).fold(1.0, |c, j| c * (p - j as f64) / (j + 1) as f64)
}

/// Center and degree of a truncated expansion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaylorConfig {
    pub center: f64,
    pub degree: usize,
}

impl TaylorConfig {
    pub fn new(center: f64, degree: usize) -> Result<Self> {
        if !(center > 0.0 && center.is_finite()) {
            return Err(Error::Config(format!("expansion center {center} must be positive")));
        }
        Ok(Self { center, degree })
    }

    fn check(&self, inputs: &[f64]) -> Result<()> {
        let need = inputs_needed(self.degree);
        if inputs.len() < need {
            return Err(Error::Config(format!(
                "degree {} needs {need} independent inputs, got {}",
                self.degree,
                inputs.len()
            )));
        }
        Ok(())
    }
}

/// `T^p sum_l binom(p, l) prod (Y - T)/T`, each product over fresh inputs.
pub fn taylor_pow(inputs: &[f64], cfg: TaylorConfig, p: f64) -> Result<f64> {
    cfg.check(inputs)?;
    let t = cfg.center;
    let sum: f64 = term_inputs(cfg.degree)
        .enumerate()
        .map(|(l, r)| binomial(p, l) * inputs[r].iter().map(|y| (y - t) / t).product::<f64>())
        .sum();
    Ok(t.powf(p) * sum)
}

/// `sum_l (-1)^l prod (Y - T) / T^{l+1}`, each product over fresh inputs.
pub fn taylor_inv(inputs: &[f64], cfg: TaylorConfig) -> Result<f64> {
    cfg.check(inputs)?;
    let t = cfg.center;
    let sum: f64 = term_inputs(cfg.degree)
        .enumerate()
        .map(|(l, r)| {
            let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
            sign * inputs[r].iter().map(|y| (y - t) / t).product::<f64>()
        })
        .sum();
    Ok(sum / t)
}

/// Worst-case `|P_k(X) - X^p|` for `X` within `(1 +- alpha) T`, `p < 2`.
pub fn pow_truncation_bound(alpha: f64, center: f64, p: f64, degree: usize) -> f64 {
    let k1 = (degree + 1) as f64;
    alpha.powf(k1) / (1.0 - alpha).powf(k1 - p) * center.powf(p)
}

/// Worst-case `|P_k(X) - 1/X|` for `X` within `(1 +- alpha) T`.
pub fn inv_truncation_bound(alpha: f64, center: f64, degree: usize) -> f64 {
    let k1 = (degree + 1) as f64;
    alpha.powf(k1) / ((1.0 - alpha).powf(k1 + 1.0) * center)
}

/// `E|Z|^s` for a standard symmetric `p`-stable `Z`, `-1 < s < p`.
pub fn stable_abs_moment(p: f64, s: f64) -> f64 {
    2f64.powf(s) * gamma((1.0 + s) / 2.0) * gamma(1.0 - s / p) / (std::f64::consts::PI.sqrt() * gamma(1.0 - s / 2.0))
}

/// Rows of a geometric-mean sketch: `max(3, ceil(4/p))`, so every row is
/// raised to at most `p/4`.
pub fn geomean_rows(p: f64) -> usize {
    ((4.0 / p).ceil() as usize).max(3)
}

/// `E[prod |Z_r|^{1/k}] = (E|Z|^{1/k})^k` for `k = geomean_rows(p)`.
pub fn geomean_constant(p: f64) -> f64 {
    let k = geomean_rows(p) as f64;
    stable_abs_moment(p, 1.0 / k).powf(k)
}

/// Relative variance of one geometric-mean estimate.
pub fn geomean_relative_variance(p: f64) -> f64 {
    let k = geomean_rows(p) as f64;
    stable_abs_moment(p, 2.0 / k).powf(k) / stable_abs_moment(p, 1.0 / k).powf(2.0 * k) - 1.0
}

fn stable_order(p: f64) -> Result<()> {
    if p > 0.0 && p < 2.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("stable order {p} outside (0, 2)")))
    }
}

/// `k` rows of `p`-stable dot products; the product of `|row|^{1/k}`
/// divided by its known mean factor estimates `||f||_p` without bias.
#[derive(Clone, Debug)]
pub struct GeoMeanSketch {
    p: f64,
    rows: Vec<f64>,
    constant: f64,
    rng: SeededRng,
}

impl GeoMeanSketch {
    pub fn new(p: f64, rng: &SeededRng) -> Result<Self> {
        stable_order(p)?;
        Ok(Self { p, rows: vec![0.0; geomean_rows(p)], constant: geomean_constant(p), rng: *rng })
    }

    pub fn update(&mut self, index: u64, weight: f64) {
        let k = self.rows.len() as u64;
        for (r, row) in self.rows.iter_mut().enumerate() {
            let z = stable_variate(&self.rng, self.p, index.wrapping_mul(k) + r as u64).expect("order checked");
            *row += z * weight;
        }
    }

    /// The uncalibrated product `prod |row|^{1/k}`.
    pub fn raw(&self) -> f64 {
        let k = self.rows.len() as f64;
        self.rows.iter().map(|r| r.abs().powf(1.0 / k)).product()
    }

    pub fn estimate(&self) -> f64 {
        self.raw() / self.constant
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn size_bytes(&self) -> usize {
        self.rows.len() * std::mem::size_of::<f64>()
    }
}

#[derive(Clone, Debug)]
enum PowerSumBackend {
    /// Groups of geometric-mean sketches; a group's mean is one input.
    Stable { groups: Vec<Vec<GeoMeanSketch>>, degree: usize },
    /// Bucketed sign sketch; each row's squared mass estimates `F_2`.
    Ams(CountSketch),
}

/// Unbiased estimate of `F_p = ||f||_p^p` for `p` in `(0, 2]` over an
/// insertion stream.
#[derive(Clone, Debug)]
pub struct PowerSumEstimator {
    p: f64,
    backend: PowerSumBackend,
}

impl PowerSumEstimator {
    /// `rel_std` is the target relative standard deviation; bias stays at
    /// the truncation level set by `eps` regardless.
    pub fn new(p: f64, eps: f64, rel_std: f64, rng: &SeededRng) -> Result<Self> {
        if !(rel_std > 0.0) {
            return Err(Error::Config("rel_std must be positive".into()));
        }
        if p == 2.0 {
            let cells = (2.0 / (rel_std * rel_std)).ceil() as usize;
            let rows = 5;
            let sketch = CountSketch::new(rows, cells.div_ceil(rows).max(8), rng);
            return Ok(Self { p, backend: PowerSumBackend::Ams(sketch) });
        }
        stable_order(p)?;
        let degree = pow_degree(p, taylor_degree(eps));
        let rv = geomean_relative_variance(p);
        let floor = (4.0 * rv).ceil() as usize;
        let lead = ((rv * p * p / (rel_std * rel_std)).ceil() as usize).max(floor);
        let center = ((rv / 0.15f64.powi(2)).ceil() as usize).max(floor);
        // Group 0 is the center, group 1 feeds the linear term, the rest
        // feed higher-order terms.
        let mut sizes = vec![if degree > 1 { center } else { 0 }, lead];
        sizes.extend(std::iter::repeat_n(floor, inputs_needed(degree).saturating_sub(1)));
        let mut next = 0u64;
        let groups = sizes
            .into_iter()
            .map(|g| {
                (0..g)
                    .map(|_| {
                        next += 1;
                        GeoMeanSketch::new(p, &rng.fork(next))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { p, backend: PowerSumBackend::Stable { groups, degree } })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn update(&mut self, index: u64, weight: f64) {
        match &mut self.backend {
            PowerSumBackend::Stable { groups, .. } => {
                for s in groups.iter_mut().flatten() {
                    s.update(index, weight);
                }
            }
            PowerSumBackend::Ams(cs) => cs.update(index, weight),
        }
    }

    pub fn estimate(&self) -> f64 {
        match &self.backend {
            PowerSumBackend::Stable { groups, degree } => {
                let mean = |g: &Vec<GeoMeanSketch>| g.iter().map(GeoMeanSketch::estimate).sum::<f64>() / g.len() as f64;
                let inputs: Vec<f64> = groups[1..].iter().map(mean).collect();
                if *degree <= 1 {
                    return inputs[0];
                }
                let center = mean(&groups[0]);
                if center <= 0.0 {
                    return 0.0;
                }
                let cfg = TaylorConfig { center, degree: *degree };
                taylor_pow(&inputs, cfg, self.p).expect("inputs sized for the degree")
            }
            PowerSumBackend::Ams(cs) => (0..cs.rows()).map(|r| cs.row_f2(r)).sum::<f64>() / cs.rows() as f64,
        }
    }

    pub fn size_bytes(&self) -> usize {
        match &self.backend {
            PowerSumBackend::Stable { groups, .. } => groups.iter().flatten().map(GeoMeanSketch::size_bytes).sum(),
            PowerSumBackend::Ams(cs) => cs.size_bytes(),
        }
    }
}

/// `z`-estimate of the sampled copy times `e^{1/p}`: an estimate of `f_i`.
pub fn estimate_coordinate(trial: &SamplerTrial, sample: &Sample) -> f64 {
    let key = trial.key(sample.index, sample.copy);
    trial.heavy_hitters().count_sketch().estimate(key) * trial.unscale(sample.index, sample.copy)
}

/// Rows of independent coordinate estimates consumed by
/// [`inverse_probability`].
pub fn inverse_probability_inputs(p: f64, eps: f64) -> usize {
    let k = taylor_degree(eps);
    inputs_needed(k) * inputs_needed(pow_degree(p, k))
}

/// `1/p_i = F_p / f_i^p` from an unbiased `F_p` estimate, independent
/// unbiased estimates of `f_i`, and a center within a factor `1 +- 1/2`
/// of `f_i`. The inner estimates of `f_i^p` feed the `1/X` expansion.
pub fn inverse_probability(power_sum: f64, coord_rows: &[f64], center: f64, p: f64, eps: f64) -> Result<f64> {
    let k = taylor_degree(eps);
    let kp = pow_degree(p, k);
    let inner = inputs_needed(kp);
    let outer = inputs_needed(k);
    if coord_rows.len() < inner * outer {
        return Err(Error::Config(format!("need {} coordinate rows, got {}", inner * outer, coord_rows.len())));
    }
    let pow_cfg = TaylorConfig::new(center, kp)?;
    let powers = coord_rows[..inner * outer]
        .chunks(inner)
        .map(|c| taylor_pow(c, pow_cfg, p))
        .collect::<Result<Vec<f64>>>()?;
    Ok(power_sum * taylor_inv(&powers, TaylorConfig::new(center.powf(p), k)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn noisy(rng: &mut impl Rng, x: f64, var: f64) -> f64 {
        // Uniform noise with the requested variance.
        let h = (3.0 * var).sqrt();
        x + rng.random_range(-h..h)
    }

    #[test]
    fn degrees_and_inputs() {
        assert_eq!(taylor_degree(0.25), 4);
        assert_eq!(taylor_degree(0.3), 4);
        assert_eq!(inputs_needed(4), 10);
        assert_eq!(pow_degree(1.0, 4), 1);
        assert_eq!(pow_degree(3.0, 4), 3);
        assert_eq!(pow_degree(0.5, 4), 4);
        assert_eq!(binomial(0.5, 2), -0.125);
        assert_eq!(binomial(3.0, 4), 0.0);
    }

    #[test]
    fn terms_use_fresh_inputs() {
        for k in 0..12 {
            let ranges: Vec<Range<usize>> = term_inputs(k).collect();
            for (l, r) in ranges.iter().enumerate() {
                assert_eq!(r.len(), l);
            }
            let mut seen = vec![false; inputs_needed(k)];
            for i in ranges.iter().flat_map(|r| r.clone()) {
                assert!(!seen[i]);
                seen[i] = true;
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn linear_power_returns_the_input() {
        let cfg = TaylorConfig::new(3.0, pow_degree(1.0, 6)).unwrap();
        assert!((taylor_pow(&[5.5], cfg, 1.0).unwrap() - 5.5).abs() < 1e-12);
    }

    #[test]
    fn exact_center_gives_exact_values() {
        let cfg = TaylorConfig::new(2.0, 5).unwrap();
        let inputs = vec![2.0; inputs_needed(5)];
        assert!((taylor_pow(&inputs, cfg, 0.7).unwrap() - 2f64.powf(0.7)).abs() < 1e-12);
        assert!((taylor_inv(&inputs, cfg).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn too_few_inputs_is_a_config_error() {
        let cfg = TaylorConfig::new(1.0, 4).unwrap();
        assert!(matches!(taylor_pow(&[1.0; 9], cfg, 0.5), Err(Error::Config(_))));
        assert!(TaylorConfig::new(0.0, 2).is_err());
    }

    #[test]
    fn inverse_truncation_example() {
        let k = 12;
        let cfg = TaylorConfig::new(1.0, k).unwrap();
        let q = taylor_inv(&vec![1.4; inputs_needed(k)], cfg).unwrap();
        assert!((q - 1.0 / 1.4).abs() <= 0.4f64.powi(13) / 0.6f64.powi(14));
    }

    #[test]
    fn truncation_bounds_hold_on_random_tuples() {
        let mut rng = SeededRng::new(17, 0).stream();
        for _ in 0..100 {
            let t: f64 = rng.random_range(0.1..10.0);
            let alpha: f64 = rng.random_range(0.0..0.5);
            let x = t * (1.0 + rng.random_range(-alpha..=alpha));
            let p: f64 = rng.random_range(0.0..2.0);
            let k: usize = rng.random_range(1..10);
            let cfg = TaylorConfig::new(t, k).unwrap();
            let inputs = vec![x; inputs_needed(k)];
            let pow_err = (taylor_pow(&inputs, cfg, p).unwrap() - x.powf(p)).abs();
            assert!(pow_err <= pow_truncation_bound(alpha, t, p, k) * (1.0 + 1e-9) + 1e-12);
            let inv_err = (taylor_inv(&inputs, cfg).unwrap() - 1.0 / x).abs();
            assert!(inv_err <= inv_truncation_bound(alpha, t, k) * (1.0 + 1e-9) + 1e-12);
        }
    }

    #[test]
    fn noisy_power_is_nearly_unbiased() {
        let mut rng = SeededRng::new(3, 0).stream();
        let k = taylor_degree(0.3);
        let cfg = TaylorConfig::new(1.0, k).unwrap();
        let trials = 1_000_000;
        let mut buf = vec![0.0; inputs_needed(k)];
        let mut sum = 0.0;
        for _ in 0..trials {
            buf.iter_mut().for_each(|y| *y = noisy(&mut rng, 1.2, 0.2));
            sum += taylor_pow(&buf, cfg, 0.5).unwrap();
        }
        assert!((sum / trials as f64 - 1.2f64.sqrt()).abs() <= 0.003);
    }

    #[test]
    fn noisy_inverse_is_nearly_unbiased() {
        let mut rng = SeededRng::new(4, 0).stream();
        let k = taylor_degree(0.3);
        let cfg = TaylorConfig::new(1.0, k).unwrap();
        let trials = 1_000_000;
        let mut buf = vec![0.0; inputs_needed(k)];
        let mut sum = 0.0;
        for _ in 0..trials {
            buf.iter_mut().for_each(|y| *y = noisy(&mut rng, 1.2, 0.2));
            sum += taylor_inv(&buf, cfg).unwrap();
        }
        assert!((sum / trials as f64 - 1.0 / 1.2).abs() <= 0.005);
    }

    #[test]
    fn stable_moments_match_known_cases() {
        // Cauchy: E|Z|^s = 1 / cos(pi s / 2). Gaussian with variance 2:
        // E|Z| = 2 / sqrt(pi).
        let s: f64 = 0.4;
        assert!((stable_abs_moment(1.0, s) - 1.0 / (std::f64::consts::FRAC_PI_2 * s).cos()).abs() < 1e-9);
        assert!((stable_abs_moment(2.0, 1.0) - 2.0 / std::f64::consts::PI.sqrt()).abs() < 1e-9);
    }

    fn geomean_mean(p: f64, freqs: &[(u64, f64)], seeds: u64) -> f64 {
        let mut sum = 0.0;
        for seed in 0..seeds {
            let mut g = GeoMeanSketch::new(p, &SeededRng::new(seed, 40)).unwrap();
            for &(i, w) in freqs {
                g.update(i, w);
            }
            sum += g.estimate();
        }
        sum / seeds as f64
    }

    #[test]
    fn geomean_single_item_mean_is_its_weight() {
        for p in [0.5, 1.0, 1.5] {
            let m = geomean_mean(p, &[(9, 6.0)], 100_000);
            assert!((m / 6.0 - 1.0).abs() < 0.02, "p = {p}: {m}");
        }
    }

    #[test]
    fn geomean_norm_and_scaling() {
        let m = geomean_mean(1.0, &[(1, 3.0), (2, 4.0)], 100_000);
        assert!((m / 7.0 - 1.0).abs() < 0.02, "{m}");
        let doubled = geomean_mean(1.0, &[(1, 6.0), (2, 8.0)], 100_000);
        assert!((doubled / m - 2.0).abs() < 1e-9);
    }

    #[test]
    fn power_sum_estimates() {
        let freqs: Vec<(u64, f64)> = (1..=6).map(|i| (i, i as f64)).collect();
        for p in [0.5, 1.0, 1.5, 2.0] {
            let exact: f64 = freqs.iter().map(|f| f.1.powf(p)).sum();
            let runs = 300;
            let mut sum = 0.0;
            for seed in 0..runs {
                let mut e = PowerSumEstimator::new(p, 0.25, 0.1, &SeededRng::new(seed, 41)).unwrap();
                for &(i, w) in &freqs {
                    e.update(i, w);
                }
                sum += e.estimate();
            }
            let m = sum / runs as f64;
            assert!((m / exact - 1.0).abs() < 0.03, "p = {p}: {m} vs {exact}");
        }
    }

    #[test]
    fn inverse_probability_of_a_lone_coordinate() {
        let mut rng = SeededRng::new(8, 0).stream();
        let rows = inverse_probability_inputs(1.0, 0.2);
        let mut sum = 0.0;
        let runs = 10_000;
        for _ in 0..runs {
            let v: Vec<f64> = (0..rows).map(|_| noisy(&mut rng, 5.0, 1.0)).collect();
            let center = noisy(&mut rng, 5.0, 1.0);
            sum += inverse_probability(5.0, &v, center, 1.0, 0.2).unwrap();
        }
        assert!((sum / runs as f64 - 1.0).abs() < 0.01);
    }
}
