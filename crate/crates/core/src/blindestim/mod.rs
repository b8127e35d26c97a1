//! Blind kernel estimation: alternating kernel and latent updates driven
//! coarse to fine over an image pyramid.
//!
//! The kernel step is a closed-form Fourier division on edge-masked,
//! thresholded latent gradients. The latent step solves a symmetric linear
//! system that combines gradient-domain data fidelity with a sparse-coding
//! prior and a cross-scale self-similarity prior on edge patches.

mod config;
mod driver;
mod kernel_step;
mod latent;

pub use self::config::EstimationConfig;
pub use self::driver::{estimate, estimate_with, level_kernel_size, train_dictionary, EstimateResult, IterationRecord};
pub use self::kernel_step::{crop_kernel, kernel_objective, solve_kernel_full, update_kernel};
pub use self::latent::{compute_prior_targets, solve_latent, update_latent, PriorTargets};
