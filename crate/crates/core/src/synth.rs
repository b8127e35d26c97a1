//! Synthetic blur: random motion-path kernels and the forward model
//! `y = h * x + noise`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{DeblurError, Result};
use crate::imgcore::{conv2, Boundary, Image, Kernel};

/// Camera-shake-like kernel: a smooth random walk whose heading drifts by
/// small Gaussian turns, scaled so its longer bounding-box side spans
/// `size - 3` pixels, centered, splatted bilinearly and normalized.
pub fn motion_kernel(size: usize, seed: u64) -> Result<Kernel> {
    if size < 5 || size % 2 == 0 {
        return Err(DeblurError::Parameter(format!(
            "motion kernel size must be odd and at least 5, got {size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let turn = Normal::new(0.0, 0.35).expect("valid sigma");
    let steps = 16 * size;
    let mut heading: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    let mut speed = 1.0;
    let mut path = Vec::with_capacity(steps + 1);
    let (mut x, mut y) = (0.0f64, 0.0f64);
    path.push((x, y));
    for _ in 0..steps {
        heading += turn.sample(&mut rng);
        speed = (speed + 0.2 * (rng.random::<f64>() - 0.5)).clamp(0.3, 1.5);
        x += speed * heading.cos();
        y += speed * heading.sin();
        path.push((x, y));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(px, py) in &path {
        x0 = x0.min(px);
        x1 = x1.max(px);
        y0 = y0.min(py);
        y1 = y1.max(py);
    }
    let extent = (x1 - x0).max(y1 - y0).max(1e-9);
    let scale = (size - 3) as f64 / extent;
    let c = (size / 2) as f64;
    let (mx, my) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let mut w = vec![0.0; size * size];
    for &(px, py) in &path {
        let u = c + (px - mx) * scale;
        let v = c + (py - my) * scale;
        let (iu, iv) = (u.floor(), v.floor());
        let (fu, fv) = (u - iu, v - iv);
        for (dv, wv) in [(0usize, 1.0 - fv), (1, fv)] {
            for (du, wu) in [(0usize, 1.0 - fu), (1, fu)] {
                let (col, row) = (iu as usize + du, iv as usize + dv);
                if col < size && row < size {
                    w[row * size + col] += wu * wv;
                }
            }
        }
    }
    Kernel::new(size, w)?.normalized()
}

/// `h * x` with replicated borders plus white Gaussian noise whose standard
/// deviation is `noise_percent` percent of the unit intensity range. The
/// result is not clamped.
pub fn blur_image(sharp: &Image, kernel: &Kernel, noise_percent: f64, seed: u64) -> Result<Image> {
    if !(noise_percent >= 0.0) || !noise_percent.is_finite() {
        return Err(DeblurError::Parameter(format!(
            "noise level must be a non-negative percentage, got {noise_percent}"
        )));
    }
    let mut out = conv2(sharp, kernel, Boundary::Replicate)?;
    if noise_percent > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, noise_percent / 100.0).expect("valid sigma");
        out.data_mut().iter_mut().for_each(|v| *v += noise.sample(&mut rng));
    }
    Ok(out)
}
