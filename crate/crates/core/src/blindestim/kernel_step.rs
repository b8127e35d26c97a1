use num_complex::Complex64;

use crate::error::{DeblurError, Result};
use crate::imgcore::{Fft2d, GradientPair, Kernel};

/// Regularized least-squares kernel on the full periodic grid, before any
/// cropping: minimizes
/// `||d_x y - h * m_x||^2 + ||d_y y - h * m_y||^2 + lambda_h ||h||^2`
/// over kernels the size of the image, where `m` are the masked latent
/// gradients. Entry `(dy, dx)` of the result (row-major) is the tap at shift
/// `(dy, dx)`, wrapped; the zero-shift tap is at index 0.
pub fn solve_kernel_full(grad_y: &GradientPair, grad_x_masked: &GradientPair, lambda_h: f64) -> Result<Vec<f64>> {
    if grad_y.dims() != grad_x_masked.dims() {
        return Err(DeblurError::Shape(format!(
            "observed gradients {:?} and latent gradients {:?} differ",
            grad_y.dims(),
            grad_x_masked.dims()
        )));
    }
    if grad_x_masked.is_zero() {
        return Err(DeblurError::DegenerateGradient(
            "masked latent gradients are all zero".into(),
        ));
    }
    if !(lambda_h >= 0.0) {
        return Err(DeblurError::Parameter(format!("lambda_h must be non-negative, got {lambda_h}")));
    }
    let (w, h) = grad_y.dims();
    let fft = Fft2d::new(w, h);
    let yx = fft.forward_real(grad_y.gx.data());
    let yy = fft.forward_real(grad_y.gy.data());
    let xx = fft.forward_real(grad_x_masked.gx.data());
    let xy = fft.forward_real(grad_x_masked.gy.data());
    let spec: Vec<Complex64> = (0..w * h)
        .map(|i| {
            let num = xx[i].conj() * yx[i] + xy[i].conj() * yy[i];
            let den = xx[i].norm_sqr() + xy[i].norm_sqr() + lambda_h;
            if den > 0.0 {
                num / den
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    Ok(fft.inverse_real(spec))
}

/// Central `size x size` window of a full periodic kernel grid around the
/// zero-shift tap.
pub fn crop_kernel(full: &[f64], width: usize, height: usize, size: usize) -> Result<Kernel> {
    let r = (size / 2) as isize;
    let mut w = Vec::with_capacity(size * size);
    for row in 0..size as isize {
        for col in 0..size as isize {
            let dy = (row - r).rem_euclid(height as isize) as usize;
            let dx = (col - r).rem_euclid(width as isize) as usize;
            w.push(full[dy * width + dx]);
        }
    }
    Kernel::new(size, w)
}

/// Fourier-domain kernel update followed by the physical projection
/// (non-negative, small taps pruned, unit sum). `kernel_size` must be odd and
/// no larger than either image side.
///
/// When the latent gradients sum to zero (periodic differences) they carry no
/// information about the kernel mean and the regularized solve leaves it at
/// zero. In that case the mean is reset to the unit sum every blur kernel has
/// before the grid is cropped.
pub fn update_kernel(
    grad_y: &GradientPair,
    grad_x_masked: &GradientPair,
    lambda_h: f64,
    kernel_size: usize,
) -> Result<Kernel> {
    let (w, h) = grad_y.dims();
    if kernel_size % 2 == 0 || kernel_size > w || kernel_size > h {
        return Err(DeblurError::Dimension(format!(
            "kernel size {kernel_size} must be odd and fit the {w}x{h} image"
        )));
    }
    let mut full = solve_kernel_full(grad_y, grad_x_masked, lambda_h)?;
    if mean_is_unobservable(grad_x_masked) {
        let offset = (1.0 - full.iter().sum::<f64>()) / full.len() as f64;
        full.iter_mut().for_each(|v| *v += offset);
    }
    crop_kernel(&full, w, h, kernel_size)?.project()
}

fn mean_is_unobservable(g: &GradientPair) -> bool {
    [&g.gx, &g.gy].iter().all(|c| {
        let sum: f64 = c.data().iter().sum();
        let mass: f64 = c.data().iter().map(|v| v.abs()).sum();
        sum.abs() <= 1e-12 * mass
    })
}

/// Value of the kernel objective for a given kernel, evaluated with periodic
/// convolution.
pub fn kernel_objective(grad_y: &GradientPair, grad_x_masked: &GradientPair, kernel: &Kernel, lambda_h: f64) -> f64 {
    let bx = crate::imgcore::conv2_fft(&grad_x_masked.gx, kernel);
    let by = crate::imgcore::conv2_fft(&grad_x_masked.gy, kernel);
    let fit: f64 = bx
        .data()
        .iter()
        .zip(grad_y.gx.data())
        .chain(by.data().iter().zip(grad_y.gy.data()))
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    fit + lambda_h * kernel.weights().iter().map(|v| v * v).sum::<f64>()
}
