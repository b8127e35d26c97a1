//! Numeric substrate: image and kernel containers, convolution, periodic
//! derivatives, DFT helpers, windowed-sinc resampling, pyramids, boundary
//! tapering and file I/O.

mod conv;
mod fft;
mod image;
pub mod io;
mod kernel;
mod resample;
mod taper;

pub use self::conv::{conv2, correlate2, gradients, gradients_adjoint, gradients_no_wrap, Boundary};
pub use self::fft::{conv2_fft, embed_kernel, Fft2d};
pub use self::image::{GradientPair, Image, LUMA_WEIGHTS};
pub use self::kernel::{ceil_to_odd, Kernel, PRUNE_FRACTION};
pub use self::resample::{
    build_pyramid, downscale, pyramid_depth, resize_bilinear, resize_lanczos, scaled_dim, Pyramid,
    PyramidLevel, MIN_SIDE,
};
pub use self::taper::edge_taper;
