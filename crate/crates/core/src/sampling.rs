//! Deterministic low-discrepancy and random sampling helpers.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const PRIMES: [u32; 40] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109,
    113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173,
];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// Halton points in `[0,1)^dim` with a seeded Cranley–Patterson rotation.
pub fn halton(count: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(dim <= PRIMES.len(), "halton sequence supports at most {} dimensions", PRIMES.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
    (1..=count as u64)
        .map(|i| {
            (0..dim)
                .map(|j| (radical_inverse(i, PRIMES[j] as u64) + shift[j]).fract())
                .collect()
        })
        .collect()
}

/// Uniform samples in the Euclidean ball of `radius` about `center`.
pub fn ball(center: &DVector<f64>, radius: f64, count: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let n = center.len();
    (0..count)
        .map(|_| {
            let dir = DVector::from_fn(n, |_, _| gaussian(rng));
            let dir = dir.normalize();
            let r = radius * rng.gen::<f64>().powf(1.0 / n as f64);
            center + dir * r
        })
        .collect()
}

/// Uniform samples in an axis-aligned box.
pub fn boxed(lower: &[f64], upper: &[f64], count: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    (0..count)
        .map(|_| DVector::from_fn(lower.len(), |i, _| rng.gen_range(lower[i]..upper[i])))
        .collect()
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
