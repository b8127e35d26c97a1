//! Blind motion deblurring.
//!
//! Estimates a spatially invariant blur kernel from a single blurry image by
//! alternating a Fourier-domain kernel update with a latent-image update that
//! is regularized, on salient-edge patches only, by a learned sparse
//! dictionary and by cross-scale patch recurrence. The estimated kernel then
//! drives a non-blind deconvolution of every color channel.
//!
//! Module map:
//!
//! * [`imgcore`]: image containers, convolution, derivatives, resampling,
//!   pyramids, boundary tapering and image I/O.
//! * [`patchops`]: patch extraction and its adjoint.
//! * [`sparsedict`]: K-SVD training and OMP coding.
//! * [`crossscale`]: cross-scale nearest-neighbor search and non-local prediction.
//! * [`edgesel`]: salient-edge masks and direction-binned gradient thresholds.
//! * [`blindestim`]: the alternating kernel/latent optimizer and its pyramid driver.
//! * [`restore`]: final non-blind deconvolution.
//! * [`evalprobe`]: error ratios, success rates and regularizer probes.
//! * [`synth`]: motion-blur kernels and synthetic observations.

pub mod blindestim;
pub mod crossscale;
pub mod edgesel;
pub mod error;
pub mod evalprobe;
pub mod imgcore;
pub mod patchops;
pub mod restore;
pub mod solver;
pub mod sparsedict;
pub mod synth;

pub use error::{DeblurError, Result};
pub use imgcore::{GradientPair, Image, Kernel};
