use serde::{Deserialize, Serialize};

use super::{GradientPair, Image, Kernel};
use crate::error::{DeblurError, Result};

/// Out-of-range sample policy for spatial filtering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Indices wrap around (matches DFT multiplication).
    Periodic,
    /// Indices clamp to the nearest edge pixel.
    Replicate,
}

impl std::str::FromStr for Boundary {
    type Err = DeblurError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "periodic" => Ok(Boundary::Periodic),
            "replicate" => Ok(Boundary::Replicate),
            other => Err(DeblurError::Parameter(format!("unknown boundary '{other}'"))),
        }
    }
}

#[inline]
fn wrap_index(i: isize, n: usize, boundary: Boundary) -> usize {
    match boundary {
        Boundary::Periodic => i.rem_euclid(n as isize) as usize,
        Boundary::Replicate => i.clamp(0, n as isize - 1) as usize,
    }
}

fn check_kernel_fits(image: &Image, kernel: &Kernel) -> Result<()> {
    if kernel.size() > image.width() || kernel.size() > image.height() {
        return Err(DeblurError::Dimension(format!(
            "kernel {}x{} exceeds image {}x{}",
            kernel.size(),
            kernel.size(),
            image.width(),
            image.height()
        )));
    }
    Ok(())
}

fn filter(image: &Image, kernel: &Kernel, boundary: Boundary, flip: bool) -> Result<Image> {
    check_kernel_fits(image, kernel)?;
    let (w, h) = image.dims();
    let n = kernel.size();
    let r = kernel.radius() as isize;
    let sign = if flip { 1 } else { -1 };
    let mut out = image.clone();
    for c in 0..image.channels() {
        let src = image.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = 0.0;
                for row in 0..n {
                    let sy = wrap_index(y - sign * (row as isize - r), h, boundary);
                    let line = &src[sy * w..(sy + 1) * w];
                    for col in 0..n {
                        let kw = kernel.get(row, col);
                        if kw != 0.0 {
                            let sx = wrap_index(x - sign * (col as isize - r), w, boundary);
                            acc += kw * line[sx];
                        }
                    }
                }
                dst[y as usize * w + x as usize] = acc;
            }
        }
    }
    Ok(out)
}

/// Same-size 2-D convolution, `out(p) = sum_s k(s) * image(p - s)`, applied per
/// channel. Direct summation; see [`conv2_fft`](super::conv2_fft) for large
/// periodic kernels.
pub fn conv2(image: &Image, kernel: &Kernel, boundary: Boundary) -> Result<Image> {
    filter(image, kernel, boundary, true)
}

/// Same-size 2-D correlation, `out(p) = sum_s k(s) * image(p + s)`. Under
/// periodic boundaries this is the adjoint of [`conv2`].
pub fn correlate2(image: &Image, kernel: &Kernel, boundary: Boundary) -> Result<Image> {
    filter(image, kernel, boundary, false)
}

/// Periodic forward differences: `gx(x, y) = I(x+1, y) - I(x, y)` and
/// likewise for `gy`, both wrapping at the far edge.
pub fn gradients(image: &Image) -> Result<GradientPair> {
    image.ensure_gray()?;
    let (w, h) = image.dims();
    let src = image.data();
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        let yn = if y + 1 == h { 0 } else { y + 1 };
        for x in 0..w {
            let xn = if x + 1 == w { 0 } else { x + 1 };
            let v = src[y * w + x];
            gx[y * w + x] = src[y * w + xn] - v;
            gy[y * w + x] = src[yn * w + x] - v;
        }
    }
    Ok(GradientPair {
        gx: Image::gray(w, h, gx)?,
        gy: Image::gray(w, h, gy)?,
    })
}

/// Adjoint of [`gradients`]: `Gx^T gx + Gy^T gy`.
pub fn gradients_adjoint(g: &GradientPair) -> Result<Image> {
    g.gx.ensure_same_dims(&g.gy)?;
    let (w, h) = g.dims();
    let (gx, gy) = (g.gx.data(), g.gy.data());
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let yp = if y == 0 { h - 1 } else { y - 1 };
        for x in 0..w {
            let xp = if x == 0 { w - 1 } else { x - 1 };
            let i = y * w + x;
            out[i] = gx[y * w + xp] - gx[i] + gy[yp * w + x] - gy[i];
        }
    }
    Image::gray(w, h, out)
}

/// Gradients with the wrap-around differences on the last column (`gx`) and
/// last row (`gy`) set to zero, so an aperiodic image does not present its
/// opposite borders as a step edge.
pub fn gradients_no_wrap(image: &Image) -> Result<GradientPair> {
    let mut g = gradients(image)?;
    let (w, h) = image.dims();
    for y in 0..h {
        g.gx.data_mut()[y * w + w - 1] = 0.0;
    }
    for x in 0..w {
        g.gy.data_mut()[(h - 1) * w + x] = 0.0;
    }
    Ok(g)
}
