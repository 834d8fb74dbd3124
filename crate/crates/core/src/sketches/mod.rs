//! Linear sketches and approximate counters shared by the estimators.

mod blob;
mod countsketch;
mod f2;
mod morris;

pub use blob::SketchKind;
pub use countsketch::{CountSketch, CsBatch};
pub use f2::{F2Tracker, PreparedBatch};
pub use morris::MorrisCounter;

/// Median of a small sample; the mean of the two middle values for even
/// lengths. Reorders `values`.
pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty sample");
    let mid = values.len() / 2;
    let (_, hi, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let hi = *hi;
    if values.len() % 2 == 1 {
        return hi;
    }
    let lo = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    0.5 * (lo + hi)
}

/// Median of a short sequence without allocating.
pub(crate) fn median_of(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let mut buf = [0.0; 16];
    let n = values.len();
    if n > buf.len() {
        return median(&mut values.collect::<Vec<_>>());
    }
    assert!(n > 0, "median of an empty sample");
    for (k, v) in values.enumerate() {
        let mut j = k;
        while j > 0 && buf[j - 1] > v {
            buf[j] = buf[j - 1];
            j -= 1;
        }
        buf[j] = v;
    }
    if n % 2 == 1 {
        buf[n / 2]
    } else {
        0.5 * (buf[n / 2 - 1] + buf[n / 2])
    }
}
