//! Deterministic random streams.
//!
//! Every stochastic choice in the pipeline draws from a ChaCha8 stream whose
//! seed is derived from (root seed, domain tag, index) with SHA-256. Distinct
//! domains never share a stream, so adding draws in one subsystem cannot
//! shift the values seen by another.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Stream for (seed, domain, index). Same triple, same stream, always.
pub fn stream(seed: u64, domain: &str, index: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(domain.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Standard normal via Box-Muller (avoids a sampling-crate dependency and
/// pins the exact byte-for-byte output to this crate).
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // gen::<f64>() is in [0,1); flip to (0,1] so ln() is finite
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform in [lo, hi).
pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Fisher-Yates shuffle of indices 0..n.
pub fn shuffled_indices(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// k distinct indices drawn from 0..n, in draw order.
pub fn sample_distinct(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    assert!(k <= n);
    let mut idx = shuffled_indices(rng, n);
    idx.truncate(k);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_domain_separated() {
        let a: Vec<u64> = {
            let mut r = stream(7, "test", 0);
            (0..4).map(|_| r.gen()).collect()
        };
        let b: Vec<u64> = {
            let mut r = stream(7, "test", 0);
            (0..4).map(|_| r.gen()).collect()
        };
        assert_eq!(a, b);
        let c: Vec<u64> = {
            let mut r = stream(7, "other", 0);
            (0..4).map(|_| r.gen()).collect()
        };
        assert_ne!(a, c);
    }

    #[test]
    fn normal_moments_roughly_standard() {
        let mut r = stream(1, "normal", 0);
        let n = 20000;
        let xs: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
