//! Uncertainty-weighted domain-generalization training for binary image
//! segmentation.
//!
//! The crate bundles everything needed to run the method at desk scale:
//!
//! - [`tensor_core`]: tensors, reverse-mode autodiff, conv/pool layers, RNG.
//! - [`fourier_aug`]: amplitude-spectrum mixing augmentation.
//! - [`segnet`]: mini-UNet used as student and EMA teacher.
//! - [`uncertainty`]: Monte Carlo predictive-entropy maps.
//! - [`losses`]: Dice, BCE, uncertainty-weighted variants, KL consistency.
//! - [`synthdata`]: seeded multi-domain synthetic benchmark and PGM I/O.
//! - [`metrics`]: DSC and average surface distance.
//! - [`harness`]: Adam training loop, leave-one-domain-out evaluation,
//!   ablation and sweep drivers.

pub mod error;
pub mod fourier_aug;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod segnet;
pub mod synthdata;
pub mod uncertainty;
pub mod tensor_core;

pub use error::{Error, Result};
pub use tensor_core::{Rng, Scalar, Tensor, Var};
