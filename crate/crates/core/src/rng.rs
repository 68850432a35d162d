//! Splittable, bit-stable random streams.
//!
//! Every stochastic step in the toolkit draws from a [`RandomStream`]. A stream is
//! identified by a root seed and a derivation path; the ChaCha20 key is the SHA-256
//! digest of that identity, so `(seed, path)` fully determines the draw sequence on
//! every platform. See `docs/determinism.md` for the exact byte layout.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

const DOMAIN_TAG: &[u8] = b"mitodg/stream/v1";

/// A reproducible random stream addressed by `(seed, path)`.
#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    path: Vec<u64>,
    rng: ChaCha20Rng,
}

impl PartialEq for RandomStream {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed && self.path == other.path
    }
}

impl Eq for RandomStream {}

fn stream_key(seed: u64, path: &[u64]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(DOMAIN_TAG);
    hasher.update(seed.to_le_bytes());
    hasher.update((path.len() as u64).to_le_bytes());
    for k in path {
        hasher.update(k.to_le_bytes());
    }
    hasher.finalize().into()
}

/// Maps a textual label onto a derivation key (first 8 bytes of its SHA-256, little endian).
pub fn name_key(name: &str) -> u64 {
    let digest = Sha256::digest(name.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self::at(seed, Vec::new())
    }

    fn at(seed: u64, path: Vec<u64>) -> Self {
        let rng = ChaCha20Rng::from_seed(stream_key(seed, &path));
        RandomStream { seed, path, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    /// Child stream at `path ⊕ key`. The child starts from the beginning of its own
    /// sequence regardless of how much the parent has already drawn.
    pub fn derive(&self, key: u64) -> RandomStream {
        let mut path = self.path.clone();
        path.push(key);
        Self::at(self.seed, path)
    }

    pub fn derive_name(&self, name: &str) -> RandomStream {
        self.derive(name_key(name))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`; returns `lo` when the interval is empty.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = self.next_f64();
        if hi <= lo {
            return lo;
        }
        lo + (hi - lo) * u
    }

    /// Unbiased integer in `[0, n)` by rejection sampling. `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        // Largest multiple of n that fits; draws at or above it are rejected.
        let zone = u64::MAX - (u64::MAX % n + 1) % n;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return v % n;
            }
        }
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn int_inclusive(&mut self, lo: i64, hi: i64) -> i64 {
        assert!(lo <= hi, "empty integer range");
        let span = (hi - lo) as u64;
        if span == u64::MAX {
            return self.next_u64() as i64;
        }
        lo + self.below(span + 1) as i64
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Standard normal via the cosine branch of Box–Muller (two uniforms per draw).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Poisson draw: Knuth's product method below 30, rounded normal approximation above.
    pub fn poisson(&mut self, lambda: f64) -> f64 {
        if lambda <= 0.0 {
            return 0.0;
        }
        if lambda < 30.0 {
            let limit = (-lambda).exp();
            let mut k = 0u32;
            let mut p = 1.0;
            loop {
                p *= self.next_f64();
                if p <= limit {
                    return k as f64;
                }
                k += 1;
            }
        }
        (lambda + lambda.sqrt() * self.normal()).round().max(0.0)
    }

    /// Fisher–Yates shuffle, walking from the last index down.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
