//! Seeded random number generation with labelled substreams.
//!
//! Every consumer (initialisation, batch order, augmentation, dropout, Monte
//! Carlo noise) forks its own substream from `(seed, stream)` so results do not
//! depend on call interleaving or thread scheduling.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: Xoshiro256PlusPlus,
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mixed = splitmix64(seed) ^ splitmix64(stream.wrapping_mul(GOLDEN) ^ 0x5851_F42D_4C95_7F2D);
        Self {
            seed,
            stream,
            inner: Xoshiro256PlusPlus::seed_from_u64(mixed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Independent child stream labelled by `labels`; does not advance `self`.
    pub fn fork(&self, labels: &[u64]) -> Rng {
        let stream = labels
            .iter()
            .fold(splitmix64(self.stream), |acc, &l| splitmix64(acc ^ splitmix64(l)));
        Rng::new(self.seed, stream)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `(0, 1]`, safe to pass to `ln`.
    fn uniform_open(&mut self) -> f64 {
        1.0 - self.uniform()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        // Lemire's multiply-shift; the bias for n << 2^64 is negligible.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    fn standard_normal(&mut self) -> f64 {
        // Box-Muller, one value per call.
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn gaussian(&mut self, mean: f64, stddev: f64) -> Result<f64> {
        if !(stddev >= 0.0) || !mean.is_finite() || !stddev.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "gaussian needs finite mean and stddev >= 0, got ({mean}, {stddev})"
            )));
        }
        if stddev == 0.0 {
            return Ok(mean);
        }
        Ok(mean + stddev * self.standard_normal())
    }

    /// Gamma(shape, 1) by Marsaglia-Tsang, boosted for shape < 1.
    fn gamma(&mut self, shape: f64) -> f64 {
        if shape < 1.0 {
            let boost = self.uniform_open().powf(1.0 / shape);
            return self.gamma(shape + 1.0) * boost;
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.standard_normal();
            let v = (1.0 + c * x).powi(3);
            if v <= 0.0 {
                continue;
            }
            let u = self.uniform_open();
            if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
                return d * v;
            }
        }
    }

    /// Beta(a, b) draw in `[0, 1]`.
    ///
    /// Johnk's algorithm when both parameters are at most 1, otherwise the
    /// ratio of two gamma draws.
    pub fn beta(&mut self, a: f64, b: f64) -> Result<f64> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "beta needs a, b > 0, got ({a}, {b})"
            )));
        }
        if a <= 1.0 && b <= 1.0 {
            loop {
                // Log space: u^(1/a) underflows quickly for a = 0.1.
                let lx = self.uniform_open().ln() / a;
                let ly = self.uniform_open().ln() / b;
                let hi = lx.max(ly);
                let log_sum = hi + ((lx - hi).exp() + (ly - hi).exp()).ln();
                if log_sum <= 0.0 && log_sum.is_finite() {
                    return Ok((lx - log_sum).exp().clamp(0.0, 1.0));
                }
            }
        }
        let x = self.gamma(a);
        let y = self.gamma(b);
        if x + y == 0.0 {
            return Ok(if a >= b { 1.0 } else { 0.0 });
        }
        Ok((x / (x + y)).clamp(0.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = Rng::new(7, 3);
        let mut b = Rng::new(7, 3);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = Rng::new(7, 4);
        assert_ne!(Rng::new(7, 3).next_u64(), c.next_u64());
    }

    #[test]
    fn forks_are_deterministic_and_distinct() {
        let root = Rng::new(1, 0);
        assert_eq!(root.fork(&[2, 5]).next_u64(), root.fork(&[2, 5]).next_u64());
        assert_ne!(root.fork(&[2, 5]).next_u64(), root.fork(&[5, 2]).next_u64());
    }

    #[test]
    fn degenerate_gaussian() {
        let mut r = Rng::new(0, 0);
        assert_eq!(r.gaussian(0.0, 0.0).unwrap(), 0.0);
        assert!(r.gaussian(0.0, -1.0).is_err());
    }

    #[test]
    fn gaussian_moments() {
        let mut r = Rng::new(11, 0);
        let xs: Vec<f64> = (0..100_000).map(|_| r.gaussian(1.0, 2.0).unwrap()).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!((mean - 1.0).abs() < 0.03, "{mean}");
        assert!((var - 4.0).abs() < 0.1, "{var}");
    }

    #[test]
    fn symmetric_beta_mean_and_support() {
        let mut r = Rng::new(42, 9);
        let mut sum = 0.0;
        for _ in 0..100_000 {
            let x = r.beta(0.1, 0.1).unwrap();
            assert!((0.0..=1.0).contains(&x));
            sum += x;
        }
        assert!((sum / 100_000.0 - 0.5).abs() < 0.01);
    }

    #[test]
    fn gamma_ratio_beta_mean() {
        // Beta(2, 5) mean = 2/7.
        let mut r = Rng::new(3, 1);
        let n = 100_000;
        let mean = (0..n).map(|_| r.beta(2.0, 5.0).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 2.0 / 7.0).abs() < 0.005, "{mean}");
        assert!(r.beta(0.0, 1.0).is_err());
    }

    #[test]
    fn below_is_in_range() {
        let mut r = Rng::new(5, 5);
        for n in 1..50 {
            assert!(r.below(n) < n);
        }
    }
}
