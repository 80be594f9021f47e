//! Pixel-wise uncertainty from Monte Carlo teacher passes: each pass adds
//! Gaussian input noise and keeps dropout active, and the map is the binary
//! entropy (in nats) of the mean prediction.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::segnet::{Pass, SegNetwork};
use crate::synthdata::pgm;
use crate::tensor_core::{Rng, Scalar, Tensor, PROB_EPS};

pub const DEFAULT_PASSES: usize = 8;
pub const DEFAULT_SIGMA: f64 = 0.1;

/// Per-pixel entropy map, `N x 1 x H x W`, with the settings that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyMap<T: Scalar = f32> {
    values: Tensor<T>,
    passes: usize,
    sigma: f64,
}

impl<T: Scalar> UncertaintyMap<T> {
    /// Map computed directly from a mean prediction.
    pub fn from_mean(mean: &Tensor<T>, passes: usize, sigma: f64) -> Self {
        Self {
            values: mean.map(|p| T::of(binary_entropy(p.as_f64()))),
            passes,
            sigma,
        }
    }

    /// Constant map, used where a loss needs `u = 1`.
    pub fn constant(shape: &[usize], value: T) -> Self {
        Self {
            values: Tensor::full(shape, value),
            passes: 0,
            sigma: 0.0,
        }
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn passes(&self) -> usize {
        self.passes
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Writes sample `index` as an 8-bit PGM, mapping `[0, ln 2]` linearly
    /// onto `[0, 255]` with round-half-to-even.
    pub fn emit_visualization(&self, index: usize, path: &Path) -> Result<()> {
        let (n, _, h, w) = self.values.dims4("emit_visualization")?;
        if index >= n {
            return Err(Error::InvalidArgument(format!("sample {index} out of range for batch of {n}")));
        }
        let plane = &self.values.data()[index * h * w..(index + 1) * h * w];
        let bytes: Vec<u8> = plane.iter().map(|&u| entropy_to_gray(u.as_f64())).collect();
        pgm::write_gray(path, w, h, &bytes)
    }
}

fn entropy_to_gray(u: f64) -> u8 {
    (u / std::f64::consts::LN_2 * 255.0).round_ties_even().clamp(0.0, 255.0) as u8
}

/// `-(p ln p + (1 - p) ln(1 - p))` with `p` clamped to `[1e-7, 1 - 1e-7]`.
pub fn binary_entropy(p: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
}

/// Monte Carlo settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimator {
    pub passes: usize,
    pub sigma: f64,
    /// Run the passes on the rayon pool. Results are reduced in pass order,
    /// so the output does not depend on this flag.
    pub parallel: bool,
}

impl Default for Estimator {
    fn default() -> Self {
        Self {
            passes: DEFAULT_PASSES,
            sigma: DEFAULT_SIGMA,
            parallel: false,
        }
    }
}

impl Estimator {
    /// Returns the mean prediction and its entropy map. Pass `k` draws its
    /// noise and dropout masks from a substream forked off `rng`.
    pub fn estimate<T: Scalar>(
        &self,
        teacher: &SegNetwork<T>,
        x_hat: &Tensor<T>,
        rng: &mut Rng,
    ) -> Result<(Tensor<T>, UncertaintyMap<T>)> {
        if self.passes == 0 {
            return Err(Error::InvalidArgument("uncertainty needs at least one pass".into()));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        let label = rng.next_u64();
        let pass = Pass::Stochastic { noise_sigma: self.sigma };
        let run = |k: usize| teacher.forward(x_hat, pass, &mut rng.fork(&[label, k as u64]));
        let outputs: Vec<Tensor<T>> = if self.parallel {
            (0..self.passes).into_par_iter().map(run).collect::<Result<_>>()?
        } else {
            (0..self.passes).map(run).collect::<Result<_>>()?
        };

        let mut mean = outputs[0].clone();
        for out in &outputs[1..] {
            mean.add_assign(out)?;
        }
        let mean = mean.scale(T::one() / T::of(self.passes as f64));
        let umap = UncertaintyMap::from_mean(&mean, self.passes, self.sigma);
        Ok((mean, umap))
    }
}

/// [`Estimator::estimate`] run sequentially.
pub fn estimate<T: Scalar>(
    teacher: &SegNetwork<T>,
    x_hat: &Tensor<T>,
    passes: usize,
    sigma: f64,
    rng: &mut Rng,
) -> Result<(Tensor<T>, UncertaintyMap<T>)> {
    Estimator {
        passes,
        sigma,
        parallel: false,
    }
    .estimate(teacher, x_hat, rng)
}
