use std::f64::consts::PI;

use super::Image;
use crate::error::{DeblurError, Result};

/// Smallest side a down-scaled image may have.
pub const MIN_SIDE: usize = 8;

const LANCZOS_LOBES: f64 = 3.0;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

fn lanczos3(x: f64) -> f64 {
    if x.abs() >= LANCZOS_LOBES {
        0.0
    } else {
        sinc(x) * sinc(x / LANCZOS_LOBES)
    }
}

/// Per-output-sample tap lists `(first source index, weights)`; weights sum to one
/// and out-of-range taps are clamped onto the border.
struct AxisFilter {
    taps: Vec<Vec<(usize, f64)>>,
}

impl AxisFilter {
    fn lanczos(len_in: usize, len_out: usize) -> Self {
        let ratio = len_in as f64 / len_out as f64;
        let stretch = ratio.max(1.0);
        let support = LANCZOS_LOBES * stretch;
        let taps = (0..len_out)
            .map(|o| {
                let center = (o as f64 + 0.5) * ratio - 0.5;
                let lo = (center - support).floor() as isize;
                let hi = (center + support).ceil() as isize;
                let mut t: Vec<(usize, f64)> = Vec::with_capacity((hi - lo + 1) as usize);
                for j in lo..=hi {
                    let wgt = lanczos3((j as f64 - center) / stretch);
                    if wgt != 0.0 {
                        let idx = j.clamp(0, len_in as isize - 1) as usize;
                        t.push((idx, wgt));
                    }
                }
                let s: f64 = t.iter().map(|(_, w)| w).sum();
                t.iter_mut().for_each(|(_, w)| *w /= s);
                t
            })
            .collect();
        Self { taps }
    }

    fn bilinear(len_in: usize, len_out: usize) -> Self {
        let ratio = len_in as f64 / len_out as f64;
        let taps = (0..len_out)
            .map(|o| {
                let pos = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (len_in - 1) as f64);
                let i0 = pos.floor() as usize;
                let i1 = (i0 + 1).min(len_in - 1);
                let f = pos - i0 as f64;
                if i1 == i0 || f == 0.0 {
                    vec![(i0, 1.0)]
                } else {
                    vec![(i0, 1.0 - f), (i1, f)]
                }
            })
            .collect();
        Self { taps }
    }
}

fn separable(image: &Image, width: usize, height: usize, fx: &AxisFilter, fy: &AxisFilter) -> Image {
    let (w, h) = image.dims();
    let mut planes = Vec::with_capacity(image.channels());
    for c in 0..image.channels() {
        let src = image.plane(c);
        let mut tmp = vec![0.0; width * h];
        for y in 0..h {
            let line = &src[y * w..(y + 1) * w];
            for (x, taps) in fx.taps.iter().enumerate() {
                tmp[y * width + x] = taps.iter().map(|&(i, wt)| wt * line[i]).sum();
            }
        }
        let mut out = vec![0.0; width * height];
        for (y, taps) in fy.taps.iter().enumerate() {
            for &(i, wt) in taps {
                let row = &tmp[i * width..(i + 1) * width];
                for (o, v) in out[y * width..(y + 1) * width].iter_mut().zip(row) {
                    *o += wt * v;
                }
            }
        }
        planes.push(out);
    }
    Image::from_vec(width, height, image.channels(), planes.concat())
        .expect("resampled buffer has the requested shape")
}

/// Lanczos-3 resampling to an explicit size; the filter is stretched when
/// shrinking so the result is band-limited to the output grid.
pub fn resize_lanczos(image: &Image, width: usize, height: usize) -> Result<Image> {
    if width == 0 || height == 0 {
        return Err(DeblurError::Scale("target size must be non-empty".into()));
    }
    let fx = AxisFilter::lanczos(image.width(), width);
    let fy = AxisFilter::lanczos(image.height(), height);
    Ok(separable(image, width, height, &fx, &fy))
}

/// Bilinear resampling to an explicit size (pixel-center aligned).
pub fn resize_bilinear(image: &Image, width: usize, height: usize) -> Result<Image> {
    if width == 0 || height == 0 {
        return Err(DeblurError::Scale("target size must be non-empty".into()));
    }
    let fx = AxisFilter::bilinear(image.width(), width);
    let fy = AxisFilter::bilinear(image.height(), height);
    Ok(separable(image, width, height, &fx, &fy))
}

/// Output side for shrinking `dim` by `factor`.
pub fn scaled_dim(dim: usize, factor: f64) -> usize {
    (dim as f64 / factor).round() as usize
}

/// Shrinks by `factor > 1` with a Lanczos-3 windowed sinc. Each side becomes
/// `round(side / factor)` and must stay at least [`MIN_SIDE`] pixels.
pub fn downscale(image: &Image, factor: f64) -> Result<Image> {
    if !(factor > 1.0) || !factor.is_finite() {
        return Err(DeblurError::Parameter(format!(
            "down-scaling factor must exceed 1, got {factor}"
        )));
    }
    let (w, h) = (scaled_dim(image.width(), factor), scaled_dim(image.height(), factor));
    if w < MIN_SIDE || h < MIN_SIDE {
        return Err(DeblurError::Scale(format!(
            "down-scaling {}x{} by {factor} gives {w}x{h}, below the {MIN_SIDE}px floor",
            image.width(),
            image.height()
        )));
    }
    resize_lanczos(image, w, h)
}

/// One pyramid level: the image and the factor it was shrunk by.
#[derive(Clone, Debug)]
pub struct PyramidLevel {
    pub image: Image,
    /// `a^(L - l)`; 1 at the finest level.
    pub shrink: f64,
}

/// Coarse-to-fine stack, coarsest first; the last level is the input itself.
#[derive(Clone, Debug)]
pub struct Pyramid {
    pub levels: Vec<PyramidLevel>,
    pub factor: f64,
}

impl Pyramid {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }
}

/// Number of levels such that the kernel shrunk to the coarsest level is
/// smaller than the patch: the smallest `L >= 1` with
/// `kernel_size / a^(L-1) < patch_side`.
pub fn pyramid_depth(kernel_size: usize, patch_side: usize, factor: f64) -> usize {
    let mut depth = 1;
    while kernel_size as f64 / factor.powi(depth as i32 - 1) >= patch_side as f64 {
        depth += 1;
    }
    depth
}

pub fn build_pyramid(y: &Image, kernel_size: usize, patch_side: usize, factor: f64) -> Result<Pyramid> {
    if kernel_size % 2 == 0 {
        return Err(DeblurError::Parameter(format!("kernel size must be odd, got {kernel_size}")));
    }
    if patch_side < 3 {
        return Err(DeblurError::Parameter(format!("patch side must be at least 3, got {patch_side}")));
    }
    if !(factor > 1.0) {
        return Err(DeblurError::Parameter(format!("scale factor must exceed 1, got {factor}")));
    }
    let depth = pyramid_depth(kernel_size, patch_side, factor);
    let mut levels = Vec::with_capacity(depth);
    for level in 1..=depth {
        let shrink = factor.powi((depth - level) as i32);
        let image = if level == depth {
            y.clone()
        } else {
            downscale(y, shrink)?
        };
        levels.push(PyramidLevel { image, shrink });
    }
    Ok(Pyramid { levels, factor })
}
