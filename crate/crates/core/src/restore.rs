//! Non-blind deconvolution with a known kernel, one channel at a time.
//!
//! `wiener` is the closed-form minimizer of `||h * x - y||^2 + w ||grad x||^2`.
//! `hyper_laplacian` and `tv_l1` minimize `||h * x - y||^2 + w sum phi(d x)`
//! over both derivative images, with `phi(t) = (t^2 + eps^2)^(alpha / 2)` and
//! `alpha = 2/3` or `1`, by iteratively reweighted least squares started from
//! the Wiener solution. Each reweighting majorizes `phi`, so the objective
//! never increases as long as the inner solves converge.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DeblurError, Result};
use crate::imgcore::{edge_taper, gradients, gradients_adjoint, Fft2d, GradientPair, Image, Kernel};
use crate::solver::{bicg, BicgOptions, LinearOperator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestoreMethod {
    TvL1,
    HyperLaplacian,
    Wiener,
}

impl RestoreMethod {
    /// Prior exponent, `None` for the quadratic prior.
    pub fn exponent(self) -> Option<f64> {
        match self {
            RestoreMethod::TvL1 => Some(1.0),
            RestoreMethod::HyperLaplacian => Some(2.0 / 3.0),
            RestoreMethod::Wiener => None,
        }
    }
}

impl std::str::FromStr for RestoreMethod {
    type Err = DeblurError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tv_l1" | "tv" => Ok(RestoreMethod::TvL1),
            "hyper_laplacian" | "hl" => Ok(RestoreMethod::HyperLaplacian),
            "wiener" => Ok(RestoreMethod::Wiener),
            other => Err(DeblurError::Parameter(format!("unknown restore method '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RestoreConfig {
    pub method: RestoreMethod,
    /// Prior weight `w`.
    pub weight: f64,
    /// Reweighting rounds.
    pub iterations: usize,
    /// Smoothing `eps` of the prior near zero.
    pub smoothing: f64,
    /// Blend the borders toward a periodic image before deconvolving.
    pub taper: bool,
    pub inner: BicgOptions,
}

impl Default for RestoreConfig {
    fn default() -> Self {
        Self {
            method: RestoreMethod::HyperLaplacian,
            weight: 2e-3,
            iterations: 30,
            smoothing: 1e-2,
            taper: true,
            inner: BicgOptions {
                tolerance: 1e-4,
                max_iterations: 60,
            },
        }
    }
}

impl RestoreConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.weight > 0.0) || !self.weight.is_finite() {
            return Err(DeblurError::Parameter(format!("restore weight must be positive, got {}", self.weight)));
        }
        if !(self.smoothing > 0.0) {
            return Err(DeblurError::Parameter(format!("smoothing must be positive, got {}", self.smoothing)));
        }
        Ok(())
    }
}

fn check_fits(y: &Image, kernel: &Kernel) -> Result<()> {
    if kernel.size() > y.width() || kernel.size() > y.height() {
        return Err(DeblurError::Dimension(format!(
            "kernel {0}x{0} exceeds image {1}x{2}",
            kernel.size(),
            y.width(),
            y.height()
        )));
    }
    Ok(())
}

/// Closed-form periodic Wiener-type solution of
/// `min ||h * x - y||^2 + weight ||grad x||^2` for a single channel, unclamped.
pub fn wiener(y: &Image, kernel: &Kernel, weight: f64) -> Result<Image> {
    y.ensure_gray()?;
    check_fits(y, kernel)?;
    let (w, h) = y.dims();
    let fft = Fft2d::new(w, h);
    let hs = fft.kernel_spectrum(kernel);
    let (dx, dy) = fft.derivative_spectra();
    let ys = fft.forward_real(y.data());
    let spec: Vec<Complex64> = (0..w * h)
        .map(|i| {
            let den = hs[i].norm_sqr() + weight * (dx[i].norm_sqr() + dy[i].norm_sqr());
            if den > 0.0 {
                hs[i].conj() * ys[i] / den
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    Image::gray(w, h, fft.inverse_real(spec))
}

fn penalty(t: f64, alpha: f64, eps: f64) -> f64 {
    (t * t + eps * eps).powf(alpha / 2.0)
}

/// Periodic objective `||h * x - y||^2 + weight sum phi(d x)` of one channel.
pub fn objective(x: &Image, y: &Image, kernel: &Kernel, cfg: &RestoreConfig) -> Result<f64> {
    let (w, h) = x.dims();
    let fft = Fft2d::new(w, h);
    let hx = conv_spectral(&fft, &fft.kernel_spectrum(kernel), x.data());
    let fit: f64 = hx.iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    let g = gradients(x)?;
    let prior: f64 = match cfg.method.exponent() {
        Some(alpha) => g
            .gx
            .data()
            .iter()
            .chain(g.gy.data())
            .map(|&t| penalty(t, alpha, cfg.smoothing))
            .sum(),
        None => g.gx.data().iter().chain(g.gy.data()).map(|t| t * t).sum(),
    };
    Ok(fit + cfg.weight * prior)
}

fn conv_spectral(fft: &Fft2d, spectrum: &[Complex64], x: &[f64]) -> Vec<f64> {
    let mut s = fft.forward_real(x);
    s.iter_mut().zip(spectrum).for_each(|(v, k)| *v *= k);
    fft.inverse_real(s)
}

/// `H^T H + weight G^T diag(wx, wy) G`.
struct ReweightedOperator<'a> {
    fft: &'a Fft2d,
    power: &'a [Complex64],
    wx: Vec<f64>,
    wy: Vec<f64>,
    weight: f64,
    dims: (usize, usize),
}

impl LinearOperator for ReweightedOperator<'_> {
    fn dim(&self) -> usize {
        self.wx.len()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let (w, h) = self.dims;
        let data = conv_spectral(self.fft, self.power, x);
        let img = Image::gray(w, h, x.to_vec()).expect("operator dimension");
        let mut g = gradients(&img).expect("gray image");
        g.gx.data_mut().iter_mut().zip(&self.wx).for_each(|(v, a)| *v *= a);
        g.gy.data_mut().iter_mut().zip(&self.wy).for_each(|(v, a)| *v *= a);
        let prior = gradients_adjoint(&g).expect("matching gradient images");
        for ((o, d), p) in out.iter_mut().zip(&data).zip(prior.data()) {
            *o = d + self.weight * p;
        }
    }

    fn is_symmetric(&self) -> bool {
        true
    }
}

/// Deconvolves one channel; returns the unclamped estimate and the objective
/// after the initial solve and after every reweighting round.
fn deconvolve_plane(y: &Image, kernel: &Kernel, cfg: &RestoreConfig) -> Result<(Image, Vec<f64>)> {
    let y = if cfg.taper { edge_taper(y, kernel) } else { y.clone() };
    let mut x = wiener(&y, kernel, cfg.weight)?;
    let mut energies = vec![objective(&x, &y, kernel, cfg)?];
    let Some(alpha) = cfg.method.exponent() else {
        return Ok((x, energies));
    };
    let (w, h) = y.dims();
    let fft = Fft2d::new(w, h);
    let hs = fft.kernel_spectrum(kernel);
    let power: Vec<Complex64> = hs.iter().map(|v| Complex64::new(v.norm_sqr(), 0.0)).collect();
    let rhs = {
        let conj: Vec<Complex64> = hs.iter().map(|v| v.conj()).collect();
        conv_spectral(&fft, &conj, y.data())
    };
    let eps2 = cfg.smoothing * cfg.smoothing;
    let reweight = |g: &[f64]| -> Vec<f64> {
        g.iter()
            .map(|&t| (alpha / 2.0) * (t * t + eps2).powf(alpha / 2.0 - 1.0))
            .collect()
    };
    for _ in 0..cfg.iterations {
        let g: GradientPair = gradients(&x)?;
        let op = ReweightedOperator {
            fft: &fft,
            power: &power,
            wx: reweight(g.gx.data()),
            wy: reweight(g.gy.data()),
            weight: cfg.weight,
            dims: (w, h),
        };
        let mut next = x.data().to_vec();
        bicg(&op, &rhs, &mut next, &cfg.inner);
        let candidate = Image::gray(w, h, next)?;
        let e = objective(&candidate, &y, kernel, cfg)?;
        // An inexact inner solve may overshoot; keep the better iterate.
        if e <= *energies.last().expect("non-empty") {
            x = candidate;
            energies.push(e);
        } else {
            energies.push(*energies.last().expect("non-empty"));
        }
    }
    Ok((x, energies))
}

/// Deconvolves every channel of `y` independently with `kernel` and clamps
/// to `[0, 1]`. A delta kernel returns the input unchanged.
pub fn deconvolve(y: &Image, kernel: &Kernel, cfg: &RestoreConfig) -> Result<Image> {
    Ok(deconvolve_with_energies(y, kernel, cfg)?.0)
}

/// [`deconvolve`] that also returns each channel's objective trace.
pub fn deconvolve_with_energies(y: &Image, kernel: &Kernel, cfg: &RestoreConfig) -> Result<(Image, Vec<Vec<f64>>)> {
    cfg.validate()?;
    check_fits(y, kernel)?;
    if kernel.is_delta() {
        return Ok((y.clone(), vec![Vec::new(); y.channels()]));
    }
    let planes: Vec<(Image, Vec<f64>)> = (0..y.channels())
        .into_par_iter()
        .map(|c| deconvolve_plane(&y.channel(c), kernel, cfg))
        .collect::<Result<_>>()?;
    let energies = planes.iter().map(|(_, e)| e.clone()).collect();
    let images: Vec<Image> = planes.into_iter().map(|(img, _)| img.clamp01()).collect();
    Ok((Image::from_channels(&images)?, energies))
}
