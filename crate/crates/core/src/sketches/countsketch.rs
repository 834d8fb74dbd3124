use crate::error::{Error, Result};
use crate::hash::PolyHash;
use crate::rng::SeededRng;
use crate::sketches::blob::{BlobReader, BlobWriter, SketchKind};
use crate::sketches::median_of;

/// Hashed cells of a batch of keys, reusable across repeated applications.
#[derive(Clone, Debug, Default)]
pub struct CsBatch {
    rows: usize,
    /// Per key: weight, then one `(cell, sign)` per row.
    weights: Vec<f64>,
    cells: Vec<(usize, f64)>,
}

impl CsBatch {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// CountSketch: `rows` independent signed hash tables. A row's estimate of a
/// key is unbiased; the sketch reports the median over rows.
#[derive(Clone, Debug)]
pub struct CountSketch {
    rows: usize,
    buckets: usize,
    independence: usize,
    hashes: Vec<PolyHash>,
    table: Vec<f64>,
    rng: SeededRng,
}

impl CountSketch {
    /// A sketch with 4-wise independent bucket and sign hashes.
    pub fn new(rows: usize, buckets: usize, rng: &SeededRng) -> Self {
        Self::with_independence(rows, buckets, 4, rng)
    }

    pub fn with_independence(rows: usize, buckets: usize, independence: usize, rng: &SeededRng) -> Self {
        assert!(rows >= 1 && buckets >= 1, "CountSketch needs at least one row and bucket");
        let hashes = (0..rows as u64)
            .map(|r| PolyHash::new(independence, &rng.fork(r)))
            .collect();
        Self {
            rows,
            buckets,
            independence,
            hashes,
            table: vec![0.0; rows * buckets],
            rng: *rng,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    #[inline]
    fn cell(&self, row: usize, key: u64) -> (usize, f64) {
        let (b, s) = self.hashes[row].bucket_sign(key, self.buckets);
        (row * self.buckets + b, s)
    }

    pub fn update(&mut self, key: u64, weight: f64) {
        for r in 0..self.rows {
            let (c, s) = self.cell(r, key);
            self.table[c] += s * weight;
        }
    }

    /// Adds `units` copies of every `(key, weight)` in `batch`.
    pub fn apply_batch(&mut self, batch: &[(u64, f64)], units: u64) {
        let u = units as f64;
        for &(key, w) in batch {
            self.update(key, w * u);
        }
    }

    pub fn prepare(&self, batch: &[(u64, f64)]) -> CsBatch {
        let mut cells = Vec::with_capacity(batch.len() * self.rows);
        for &(key, _) in batch {
            cells.extend((0..self.rows).map(|r| self.cell(r, key)));
        }
        CsBatch { rows: self.rows, weights: batch.iter().map(|b| b.1).collect(), cells }
    }

    pub fn apply_prepared(&mut self, batch: &CsBatch, units: u64) {
        debug_assert_eq!(batch.rows, self.rows);
        let u = units as f64;
        for (k, &w) in batch.weights.iter().enumerate() {
            for &(c, s) in &batch.cells[k * self.rows..(k + 1) * self.rows] {
                self.table[c] += s * w * u;
            }
        }
    }

    /// Median estimate of the `k`-th key of a prepared batch.
    pub fn estimate_prepared(&self, batch: &CsBatch, k: usize) -> f64 {
        median_of(batch.cells[k * self.rows..(k + 1) * self.rows].iter().map(|&(c, s)| s * self.table[c]))
    }

    /// Single-row estimate of the `k`-th key of a prepared batch.
    pub fn row_estimate_prepared(&self, batch: &CsBatch, k: usize, row: usize) -> f64 {
        let (c, s) = batch.cells[k * self.rows + row];
        s * self.table[c]
    }

    /// The unbiased single-row estimate of `key`.
    pub fn row_estimate(&self, key: u64, row: usize) -> f64 {
        let (c, s) = self.cell(row, key);
        s * self.table[c]
    }

    /// Median-of-rows estimate of `key`.
    pub fn estimate(&self, key: u64) -> f64 {
        median_of((0..self.rows).map(|r| self.row_estimate(key, r)))
    }

    /// Sum of squared buckets in one row, an unbiased estimate of `F_2`.
    pub fn row_f2(&self, row: usize) -> f64 {
        self.table[row * self.buckets..(row + 1) * self.buckets]
            .iter()
            .map(|x| x * x)
            .sum()
    }

    /// Bytes of accumulator state.
    pub fn size_bytes(&self) -> usize {
        self.table.len() * std::mem::size_of::<f64>()
    }

    pub fn to_blob(&self) -> Vec<u8> {
        BlobWriter::new(SketchKind::CountSketch, &self.rng)
            .u64(self.rows as u64)
            .u64(self.buckets as u64)
            .u64(self.independence as u64)
            .f64s(&self.table)
            .finish()
    }

    pub fn from_blob(data: &[u8]) -> Result<Self> {
        let (mut r, rng) = BlobReader::open(data, SketchKind::CountSketch)?;
        let rows = r.u64()? as usize;
        let buckets = r.u64()? as usize;
        let independence = r.u64()? as usize;
        let table = r.f64s()?;
        r.finish()?;
        if rows == 0 || buckets == 0 || independence == 0 || table.len() != rows * buckets {
            return Err(Error::Blob("inconsistent CountSketch dimensions".into()));
        }
        let mut s = Self::with_independence(rows, buckets, independence, &rng);
        s.table = table;
        Ok(s)
    }
}
