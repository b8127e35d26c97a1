use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{Image, Kernel};

/// Planned 2-D DFT for one image size. The inverse is scaled by `1/N`, so
/// `inverse(forward(x)) == x`.
///
/// Plans are immutable once built and may be shared across threads.
#[derive(Clone)]
pub struct Fft2d {
    width: usize,
    height: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2d {
    pub fn new(width: usize, height: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            width,
            height,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn transform(&self, buf: &mut [Complex64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        debug_assert_eq!(buf.len(), self.len());
        rows.process(buf);
        let (w, h) = (self.width, self.height);
        let mut t = vec![Complex64::new(0.0, 0.0); w * h];
        for y in 0..h {
            for x in 0..w {
                t[x * h + y] = buf[y * w + x];
            }
        }
        cols.process(&mut t);
        for x in 0..w {
            for y in 0..h {
                buf[y * w + x] = t[x * h + y];
            }
        }
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.transform(buf, &self.row_fwd, &self.col_fwd);
    }

    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.transform(buf, &self.row_inv, &self.col_inv);
        let s = 1.0 / self.len() as f64;
        buf.iter_mut().for_each(|v| *v *= s);
    }

    pub fn forward_real(&self, data: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    /// Inverse transform keeping the real part.
    pub fn inverse_real(&self, mut buf: Vec<Complex64>) -> Vec<f64> {
        self.inverse(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    /// Transfer function of a kernel under periodic convolution: the kernel is
    /// zero-padded to the image size with its center tap moved to index 0.
    pub fn kernel_spectrum(&self, kernel: &Kernel) -> Vec<Complex64> {
        self.forward_real(&embed_kernel(kernel, self.width, self.height))
    }

    /// Transfer functions of the periodic forward differences `(d/dx, d/dy)`.
    pub fn derivative_spectra(&self) -> (Vec<Complex64>, Vec<Complex64>) {
        let (w, h) = (self.width, self.height);
        let mut dx = vec![0.0; w * h];
        let mut dy = vec![0.0; w * h];
        // (d * x)(i) = x(i + 1) - x(i): tap -1 at shift 0 and +1 at shift -1.
        dx[0] = -1.0;
        dx[w - 1] += 1.0;
        dy[0] = -1.0;
        dy[(h - 1) * w] += 1.0;
        (self.forward_real(&dx), self.forward_real(&dy))
    }
}

/// Circularly embeds a kernel in a `width x height` grid, center tap at `(0, 0)`.
/// Taps that wrap onto each other (kernel larger than the grid) are summed.
pub fn embed_kernel(kernel: &Kernel, width: usize, height: usize) -> Vec<f64> {
    let mut out = vec![0.0; width * height];
    let r = kernel.radius() as isize;
    let n = kernel.size();
    for row in 0..n {
        for col in 0..n {
            let dy = (row as isize - r).rem_euclid(height as isize) as usize;
            let dx = (col as isize - r).rem_euclid(width as isize) as usize;
            out[dy * width + dx] += kernel.get(row, col);
        }
    }
    out
}

/// Periodic convolution of every channel through the DFT.
pub fn conv2_fft(image: &Image, kernel: &Kernel) -> Image {
    let (w, h) = image.dims();
    let fft = Fft2d::new(w, h);
    let k = fft.kernel_spectrum(kernel);
    let mut out = image.clone();
    for c in 0..image.channels() {
        let mut spec = fft.forward_real(image.plane(c));
        spec.iter_mut().zip(&k).for_each(|(s, kk)| *s *= kk);
        out.plane_mut(c).copy_from_slice(&fft.inverse_real(spec));
    }
    out
}
