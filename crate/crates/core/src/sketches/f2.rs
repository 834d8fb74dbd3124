use crate::error::{Error, Result};
use crate::hash::PolyHash;
use crate::rng::SeededRng;
use crate::sketches::blob::{BlobReader, BlobWriter, SketchKind};
use crate::sketches::median_of;

/// Continuous `F_2` tracker for insertion-only streams.
///
/// Each row hashes keys into signed buckets and estimates `F_2` by the sum of
/// squared buckets; the reported value is the running maximum of the median
/// row, so it never decreases.
#[derive(Clone, Debug)]
pub struct F2Tracker {
    rows: usize,
    buckets: usize,
    hashes: Vec<PolyHash>,
    table: Vec<f64>,
    row_sums: Vec<f64>,
    peak: f64,
    rng: SeededRng,
}

/// A batch of weighted keys hashed once, so it can be applied repeatedly and
/// its effect predicted in closed form.
#[derive(Clone, Debug, Default)]
pub struct PreparedBatch {
    /// Touched cells and the signed weight added to each per unit, grouped
    /// by row; row `r` spans `bounds[r]..bounds[r + 1]`.
    cells: Vec<(usize, f64)>,
    bounds: Vec<usize>,
    /// Per row: sum of squared per-unit cell increments.
    square: Vec<f64>,
}

impl PreparedBatch {
    #[inline]
    fn row(&self, r: usize) -> &[(usize, f64)] {
        &self.cells[self.bounds[r]..self.bounds[r + 1]]
    }
}

impl F2Tracker {
    /// `rows` is rounded up to an odd count so the median is a row value.
    pub fn new(rows: usize, buckets: usize, rng: &SeededRng) -> Self {
        assert!(rows >= 1 && buckets >= 1);
        let rows = rows | 1;
        Self {
            rows,
            buckets,
            hashes: (0..rows as u64).map(|r| PolyHash::new(4, &rng.fork(r))).collect(),
            table: vec![0.0; rows * buckets],
            row_sums: vec![0.0; rows],
            peak: 0.0,
            rng: *rng,
        }
    }

    /// Sized for relative error `eps_t` at all times of a stream of length up
    /// to `m_bound`, failing with probability about `delta`.
    pub fn for_accuracy(eps_t: f64, delta: f64, m_bound: u64, rng: &SeededRng) -> Self {
        let buckets = (8.0 / (eps_t * eps_t)).ceil() as usize;
        let rows = ((m_bound as f64 / delta).log2() / 2.0).ceil().max(1.0) as usize;
        Self::new(rows, buckets, rng)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn prepare(&self, batch: &[(u64, f64)]) -> PreparedBatch {
        let mut cells: Vec<(usize, f64)> = Vec::with_capacity(self.rows * batch.len());
        let mut bounds = Vec::with_capacity(self.rows + 1);
        let mut square = Vec::with_capacity(self.rows);
        let mut scratch: Vec<(usize, f64)> = Vec::with_capacity(batch.len());
        bounds.push(0);
        for r in 0..self.rows {
            scratch.clear();
            scratch.extend(batch.iter().map(|&(key, w)| {
                let (b, s) = self.hashes[r].bucket_sign(key, self.buckets);
                (r * self.buckets + b, s * w)
            }));
            if scratch.len() > 8 {
                scratch.sort_unstable_by_key(|c| c.0);
            } else {
                // Insertion sort; batches are usually tiny.
                for i in 1..scratch.len() {
                    let mut j = i;
                    while j > 0 && scratch[j - 1].0 > scratch[j].0 {
                        scratch.swap(j - 1, j);
                        j -= 1;
                    }
                }
            }
            let start = cells.len();
            for &(c, a) in &scratch {
                if cells.len() > start && cells[cells.len() - 1].0 == c {
                    let last = cells.len() - 1;
                    cells[last].1 += a;
                } else {
                    cells.push((c, a));
                }
            }
            square.push(cells[start..].iter().map(|(_, a)| a * a).sum());
            bounds.push(cells.len());
        }
        PreparedBatch { cells, bounds, square }
    }

    /// Row sum after `units` more applications, as `S + 2uA + u^2 C`.
    #[inline]
    fn projected(&self, pb: &PreparedBatch, r: usize, units: f64) -> f64 {
        let cross: f64 = pb.row(r).iter().map(|&(c, a)| self.table[c] * a).sum();
        self.row_sums[r] + 2.0 * units * cross + units * units * pb.square[r]
    }

    pub fn apply(&mut self, pb: &PreparedBatch, units: u64) {
        if units == 0 {
            return;
        }
        let u = units as f64;
        for r in 0..self.rows {
            self.row_sums[r] = self.projected(pb, r, u);
            for &(c, a) in pb.row(r) {
                self.table[c] += u * a;
            }
        }
        let now = self.current();
        self.peak = self.peak.max(now);
    }

    pub fn update(&mut self, key: u64, weight: f64) {
        let pb = self.prepare(&[(key, weight)]);
        self.apply(&pb, 1);
    }

    /// Monotone estimate of the current `F_2`.
    pub fn estimate(&self) -> f64 {
        self.peak
    }

    /// Median row estimate before monotonization.
    pub fn current(&self) -> f64 {
        median_of(self.row_sums.iter().copied())
    }

    /// Smallest `j` in `1..=max_units` such that the estimate reaches
    /// `threshold` after applying `pb` `j` times, if any.
    pub fn units_until(&self, pb: &PreparedBatch, max_units: u64, threshold: f64) -> Option<u64> {
        if max_units == 0 {
            return None;
        }
        if self.peak >= threshold {
            return Some(1);
        }
        let need = self.rows / 2 + 1;
        let coeffs: Vec<(f64, f64, f64)> = (0..self.rows)
            .map(|r| {
                let cross: f64 = pb.row(r).iter().map(|&(c, a)| self.table[c] * a).sum();
                (self.row_sums[r], cross, pb.square[r])
            })
            .collect();
        let reached = |j: u64| {
            let u = j as f64;
            coeffs
                .iter()
                .filter(|&&(s, a, c)| s + 2.0 * u * a + u * u * c >= threshold)
                .count()
                >= need
        };
        // A row's super-level set is an initial segment plus a final ray, so
        // the first crossing is at 1 or at the start of some row's ray.
        let mut candidates = vec![1u64];
        for &(s, a, c) in &coeffs {
            if c <= 0.0 {
                continue;
            }
            let disc = a * a - c * (s - threshold);
            if disc < 0.0 {
                continue;
            }
            let root = (-a + disc.sqrt()) / c;
            if root.is_finite() && root < max_units as f64 + 2.0 {
                let base = root.ceil().max(1.0) as u64;
                candidates.extend([base.saturating_sub(1).max(1), base, base + 1]);
            }
        }
        candidates
            .into_iter()
            .filter(|&j| j <= max_units && reached(j))
            .min()
    }

    pub fn size_bytes(&self) -> usize {
        (self.table.len() + self.row_sums.len() + 1) * std::mem::size_of::<f64>()
    }

    pub fn to_blob(&self) -> Vec<u8> {
        BlobWriter::new(SketchKind::F2Tracker, &self.rng)
            .u64(self.rows as u64)
            .u64(self.buckets as u64)
            .f64(self.peak)
            .f64s(&self.table)
            .finish()
    }

    pub fn from_blob(data: &[u8]) -> Result<Self> {
        let (mut r, rng) = BlobReader::open(data, SketchKind::F2Tracker)?;
        let rows = r.u64()? as usize;
        let buckets = r.u64()? as usize;
        let peak = r.f64()?;
        let table = r.f64s()?;
        r.finish()?;
        if rows == 0 || rows % 2 == 0 || buckets == 0 || table.len() != rows * buckets {
            return Err(Error::Blob("inconsistent F2Tracker dimensions".into()));
        }
        let mut t = Self::new(rows, buckets, &rng);
        t.row_sums = table.chunks(buckets).map(|row| row.iter().map(|x| x * x).sum()).collect();
        t.table = table;
        t.peak = peak;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_zero() {
        let t = F2Tracker::new(5, 32, &SeededRng::new(0, 0));
        assert_eq!(t.estimate(), 0.0);
    }

    #[test]
    fn point_mass_within_ten_percent() {
        let mut ok = 0;
        for seed in 0..200 {
            let mut t = F2Tracker::for_accuracy(0.1, 0.05, 1000, &SeededRng::new(seed, 2));
            let pb = t.prepare(&[(1, 1.0)]);
            t.apply(&pb, 100);
            ok += (9000.0..=11000.0).contains(&t.estimate()) as u32;
        }
        assert!(ok >= 190);
    }

    #[test]
    fn batched_matches_unit_steps() {
        let rng = SeededRng::new(3, 3);
        let batch = [(5, 0.7), (9, 1.3), (12, 0.2)];
        let mut a = F2Tracker::new(7, 16, &rng);
        let mut b = F2Tracker::new(7, 16, &rng);
        let pb = a.prepare(&batch);
        a.apply(&pb, 40);
        for _ in 0..40 {
            for &(k, w) in &batch {
                b.update(k, w);
            }
        }
        assert!((a.current() - b.current()).abs() < 1e-9 * b.current());
    }

    #[test]
    fn units_until_finds_first_crossing() {
        let rng = SeededRng::new(11, 4);
        let mut t = F2Tracker::new(9, 8, &rng);
        for k in 0..30 {
            t.update(k, 1.0 + (k % 3) as f64);
        }
        let pb = t.prepare(&[(3, 0.5), (40, 1.0)]);
        let thr = t.estimate() * 3.0;
        let j = t.units_until(&pb, 10_000, thr).expect("threshold reachable");
        let mut before = t.clone();
        before.apply(&pb, j - 1);
        assert!(before.estimate() < thr);
        let mut after = t.clone();
        after.apply(&pb, j);
        assert!(after.estimate() >= thr);
        assert_eq!(t.units_until(&pb, j - 1, thr), None);
    }

    #[test]
    fn blob_round_trip_keeps_estimate() {
        let mut t = F2Tracker::new(5, 16, &SeededRng::new(8, 1));
        for k in 0..50 {
            t.update(k, 1.0);
        }
        let back = F2Tracker::from_blob(&t.to_blob()).unwrap();
        assert_eq!(back.estimate(), t.estimate());
        assert!((back.current() - t.current()).abs() < 1e-9);
    }
}
