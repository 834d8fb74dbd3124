//! Hash families used by the sketches.

use crate::rng::SeededRng;

const MERSENNE_61: u64 = (1 << 61) - 1;

/// SplitMix64 finalizer. Bijective and well mixed; the building block of
/// [`SeededRng`].
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic hasher for integer keys, so map iteration order does not
/// vary between runs.
#[derive(Clone, Copy, Debug, Default)]
pub struct KeyHasher(u64);

impl std::hash::Hasher for KeyHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 = mix64(self.0 ^ *b as u64);
        }
    }

    fn write_u64(&mut self, x: u64) {
        self.0 = mix64(self.0 ^ x);
    }

    fn write_usize(&mut self, x: usize) {
        self.write_u64(x as u64);
    }
}

/// A `HashMap` keyed through [`KeyHasher`].
pub type KeyMap<K, V> = std::collections::HashMap<K, V, std::hash::BuildHasherDefault<KeyHasher>>;

#[inline]
fn mul_mod(a: u64, b: u64) -> u64 {
    let prod = (a as u128) * (b as u128);
    let lo = (prod as u64) & MERSENNE_61;
    let hi = (prod >> 61) as u64;
    let s = lo + hi;
    if s >= MERSENNE_61 {
        s - MERSENNE_61
    } else {
        s
    }
}

#[inline]
fn add_mod(a: u64, b: u64) -> u64 {
    let s = a + b;
    if s >= MERSENNE_61 {
        s - MERSENNE_61
    } else {
        s
    }
}

/// Maps a 60-bit value onto `[0, buckets)` by multiply-shift.
#[inline]
pub fn reduce(x: u64, buckets: usize) -> usize {
    (((x as u128) * (buckets as u128)) >> 60) as usize
}

/// A k-wise independent hash: a random degree-(k-1) polynomial over the
/// field of integers modulo 2^61 - 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolyHash {
    coeffs: Vec<u64>,
}

impl PolyHash {
    /// Draws a fresh `k`-wise independent function from `rng`.
    pub fn new(k: usize, rng: &SeededRng) -> Self {
        assert!(k >= 1, "independence must be at least 1");
        let coeffs = (0..k as u64)
            .map(|j| rng.word(j) % MERSENNE_61)
            .collect();
        Self { coeffs }
    }

    pub fn independence(&self) -> usize {
        self.coeffs.len()
    }

    /// Hash value, uniform on `[0, 2^61 - 1)`.
    #[inline]
    pub fn hash(&self, key: u64) -> u64 {
        let x = key % MERSENNE_61;
        let mut acc = 0u64;
        for &c in self.coeffs.iter().rev() {
            acc = add_mod(mul_mod(acc, x), c);
        }
        acc
    }

    /// Bucket in `[0, buckets)` and a ±1 sign, both taken from one hash value.
    #[inline]
    pub fn bucket_sign(&self, key: u64, buckets: usize) -> (usize, f64) {
        let h = self.hash(key);
        let sign = if h & 1 == 0 { 1.0 } else { -1.0 };
        (reduce(h >> 1, buckets), sign)
    }
}
