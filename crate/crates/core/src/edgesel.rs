//! Salient-edge masks and direction-binned gradient thresholding.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{DeblurError, Result};
use crate::imgcore::{ceil_to_odd, conv2, correlate2, Boundary, GradientPair, Image, Kernel};
use crate::patchops::PatchIndex;

/// Responses at or below this count as flat.
const FLAT_RESPONSE: f64 = 1e-9;

/// Number of orientations in the derivative filter bank.
pub const ORIENTATIONS: usize = 8;

/// Binary pixel selection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
    count: usize,
}

impl EdgeMask {
    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(DeblurError::Shape(format!(
                "{} mask bits for a {width}x{height} image",
                bits.len()
            )));
        }
        let count = bits.iter().filter(|&&b| b).count();
        Ok(Self {
            width,
            height,
            bits,
            count,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
            count: 0,
        }
    }

    /// Every pixel whose `side x side` patch fits.
    pub fn interior(width: usize, height: usize, side: usize) -> Self {
        let bits = (0..width * height)
            .map(|i| PatchIndex::new(i % width, i / width).fits(side, width, height))
            .collect();
        Self::from_bits(width, height, bits).expect("sizes agree")
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// The mask grown by a `(2 radius + 1)` square around every selected
    /// pixel, clipped to the image.
    pub fn dilated(&self, radius: usize) -> EdgeMask {
        if radius == 0 {
            return self.clone();
        }
        let (w, h) = (self.width, self.height);
        // Separable: rows first, then columns.
        let mut rows = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                if self.bits[y * w + x] {
                    for xx in x.saturating_sub(radius)..(x + radius + 1).min(w) {
                        rows[y * w + xx] = true;
                    }
                }
            }
        }
        let mut bits = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                if rows[y * w + x] {
                    for yy in y.saturating_sub(radius)..(y + radius + 1).min(h) {
                        bits[yy * w + x] = true;
                    }
                }
            }
        }
        EdgeMask::from_bits(w, h, bits).expect("sizes agree")
    }

    /// Selected pixels in raster order.
    pub fn indices(&self) -> Vec<PatchIndex> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| PatchIndex::new(i % self.width, i / self.width))
            .collect()
    }
}

/// Filter scales for [`edge_response`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeFilter {
    pub presmooth_sigma: f64,
    pub derivative_sigma: f64,
}

impl Default for EdgeFilter {
    fn default() -> Self {
        Self {
            presmooth_sigma: 1.0,
            derivative_sigma: 1.0,
        }
    }
}

/// First derivative of a Gaussian along x, scaled so a unit ramp responds 1
/// under correlation.
fn gaussian_derivative_x(sigma: f64) -> Result<Kernel> {
    let size = ceil_to_odd(6.0 * sigma + 1.0);
    let g = Kernel::gaussian(size, sigma)?;
    let r = g.radius() as f64;
    let mut w = Vec::with_capacity(size * size);
    let mut norm = 0.0;
    for row in 0..size {
        for col in 0..size {
            let dx = col as f64 - r;
            w.push(dx * g.get(row, col));
            norm += dx * dx * g.get(row, col);
        }
    }
    w.iter_mut().for_each(|v| *v /= norm);
    Kernel::new(size, w)
}

fn transpose(k: &Kernel) -> Kernel {
    let n = k.size();
    let w = (0..n * n).map(|i| k.get(i % n, i / n)).collect();
    Kernel::new(n, w).expect("same size")
}

/// Per-pixel maximum of `|response|` over a bank of derivative-of-Gaussian
/// filters at 0, 45, ..., 315 degrees, after Gaussian presmoothing. Borders
/// are replicated. Each oriented filter is the steered combination
/// `cos t * Dx + sin t * Dy`, which is exact for first derivatives.
pub fn edge_response(latent: &Image, filter: &EdgeFilter) -> Result<Image> {
    latent.ensure_gray()?;
    let smooth = if filter.presmooth_sigma > 0.0 {
        let g = Kernel::gaussian(ceil_to_odd(6.0 * filter.presmooth_sigma + 1.0), filter.presmooth_sigma)?;
        fit_and(latent, &g, |img, k| conv2(img, k, Boundary::Replicate))?
    } else {
        latent.clone()
    };
    let dx = gaussian_derivative_x(filter.derivative_sigma)?;
    let dy = transpose(&dx);
    let rx = fit_and(&smooth, &dx, |img, k| correlate2(img, k, Boundary::Replicate))?;
    let ry = fit_and(&smooth, &dy, |img, k| correlate2(img, k, Boundary::Replicate))?;
    let dirs: Vec<(f64, f64)> = (0..ORIENTATIONS)
        .map(|k| {
            let t = k as f64 * std::f64::consts::TAU / ORIENTATIONS as f64;
            (t.cos(), t.sin())
        })
        .collect();
    let data = rx
        .data()
        .iter()
        .zip(ry.data())
        .map(|(&a, &b)| dirs.iter().map(|(c, s)| (c * a + s * b).abs()).fold(0.0, f64::max))
        .collect();
    Image::gray(latent.width(), latent.height(), data)
}

/// Runs `f` when the kernel fits; tiny images get the kernel cropped to fit.
fn fit_and(img: &Image, k: &Kernel, f: impl Fn(&Image, &Kernel) -> Result<Image>) -> Result<Image> {
    let limit = img.width().min(img.height());
    if k.size() <= limit {
        return f(img, k);
    }
    let side = if limit % 2 == 1 { limit } else { limit.saturating_sub(1) };
    if side == 0 {
        return Ok(img.map(|_| 0.0));
    }
    f(img, &k.resized(side)?)
}

/// Top `keep_fraction` of patch-center-eligible pixels by [`edge_response`].
/// Ties go to the earlier pixel in raster order; flat pixels are never
/// selected, so a constant image yields an empty mask.
pub fn salient_edge_mask(latent: &Image, keep_fraction: f64, filter: &EdgeFilter, patch_side: usize) -> Result<EdgeMask> {
    if !(0.0..=1.0).contains(&keep_fraction) {
        return Err(DeblurError::Parameter(format!("keep fraction {keep_fraction} outside [0, 1]")));
    }
    let response = edge_response(latent, filter)?;
    let (w, h) = latent.dims();
    let eligible: Vec<usize> = (0..w * h)
        .filter(|&i| PatchIndex::new(i % w, i / w).fits(patch_side, w, h))
        .collect();
    let keep = (keep_fraction * eligible.len() as f64).round() as usize;
    let r = response.data();
    let mut ranked: Vec<usize> = eligible.into_iter().filter(|&i| r[i] > FLAT_RESPONSE).collect();
    ranked.sort_by(|&a, &b| r[b].total_cmp(&r[a]).then(a.cmp(&b)));
    ranked.truncate(keep);
    if ranked.is_empty() && keep > 0 {
        warn!("edge mask is empty: the latent image has no salient structure");
    }
    let mut bits = vec![false; w * h];
    for i in ranked {
        bits[i] = true;
    }
    EdgeMask::from_bits(w, h, bits)
}

/// Direction-binned gradient magnitude threshold, annealed per iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdState {
    pub tau: f64,
    pub tau0: f64,
    pub r: f64,
    /// Kernel area in pixels.
    pub n_h: usize,
    pub iteration: usize,
    /// Set when some direction bin could not supply enough pixels.
    pub degenerate: bool,
}

impl ThresholdState {
    /// Divides `tau` by 1.1.
    pub fn advance(&mut self) {
        self.iteration += 1;
        self.tau = self.tau0 / 1.1f64.powi(self.iteration as i32);
    }

    /// Pixels each direction bin must keep: `ceil(r * sqrt(N_h))`.
    pub fn keep_per_bin(&self) -> usize {
        keep_count(self.r, self.n_h)
    }
}

fn keep_count(r: f64, n_h: usize) -> usize {
    (r * (n_h as f64).sqrt() - 1e-9).ceil().max(1.0) as usize
}

/// Direction bin of a gradient: angle mod 180 degrees, rounded to the nearest
/// multiple of 45 degrees.
pub fn direction_bin(gx: f64, gy: f64) -> usize {
    let t = gy.atan2(gx).rem_euclid(std::f64::consts::PI);
    ((t / std::f64::consts::FRAC_PI_4).round() as usize) % 4
}

/// Largest `tau` such that each of the four direction bins keeps at least
/// `ceil(r * sqrt(N_h))` pixels with magnitude `>= tau`. Zero gradients belong
/// to no bin. A bin that is too small forces `tau = 0`.
pub fn init_threshold(grads: &GradientPair, n_h: usize, r: f64) -> Result<ThresholdState> {
    if n_h < 3 {
        return Err(DeblurError::Parameter(format!("kernel area {n_h} is below 3")));
    }
    if !(r > 0.0) {
        return Err(DeblurError::Parameter(format!("keep factor must be positive, got {r}")));
    }
    let keep = keep_count(r, n_h);
    let mut bins: [Vec<f64>; 4] = Default::default();
    for ((&gx, &gy), m) in grads.gx.data().iter().zip(grads.gy.data()).zip(grads.magnitude()) {
        if m > 0.0 {
            bins[direction_bin(gx, gy)].push(m);
        }
    }
    let mut tau = f64::INFINITY;
    let mut degenerate = false;
    for b in bins.iter_mut() {
        if b.len() < keep {
            degenerate = true;
            tau = 0.0;
            continue;
        }
        b.sort_by(|a, c| c.total_cmp(a));
        tau = tau.min(b[keep - 1]);
    }
    if degenerate {
        warn!("a gradient direction bin holds fewer than {keep} pixels; threshold falls back to 0");
    }
    Ok(ThresholdState {
        tau,
        tau0: tau,
        r,
        n_h,
        iteration: 0,
        degenerate,
    })
}

/// Keeps a gradient where the pixel is masked and its magnitude is at least
/// `tau`; zero elsewhere.
pub fn truncate_gradients(grads: &GradientPair, mask: &EdgeMask, state: &ThresholdState) -> Result<GradientPair> {
    if grads.dims() != mask.dims() {
        return Err(DeblurError::Shape(format!(
            "gradients {:?} and mask {:?} differ in size",
            grads.dims(),
            mask.dims()
        )));
    }
    let (w, h) = grads.dims();
    let mag = grads.magnitude();
    let keep: Vec<bool> = mask.bits().iter().zip(&mag).map(|(&b, &m)| b && m >= state.tau).collect();
    let pick = |src: &Image| -> Result<Image> {
        Image::gray(
            w,
            h,
            src.data().iter().zip(&keep).map(|(&v, &k)| if k { v } else { 0.0 }).collect(),
        )
    };
    Ok(GradientPair {
        gx: pick(&grads.gx)?,
        gy: pick(&grads.gy)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::gradients;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| rng.random::<f64>())
    }

    #[test]
    fn dilation_matches_a_chebyshev_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (w, h) = (13, 9);
        let bits: Vec<bool> = (0..w * h).map(|_| rng.random::<f64>() < 0.05).collect();
        let m = EdgeMask::from_bits(w, h, bits).unwrap();
        assert_eq!(m.dilated(0), m);
        for r in 1..3 {
            let d = m.dilated(r);
            for y in 0..h {
                for x in 0..w {
                    let near = m.indices().iter().any(|p| p.x.abs_diff(x) <= r && p.y.abs_diff(y) <= r);
                    assert_eq!(d.get(x, y), near);
                }
            }
        }
    }

    #[test]
    fn constant_image_gives_empty_mask() {
        let m = salient_edge_mask(&Image::constant(30, 30, 0.4), 0.02, &EdgeFilter::default(), 5).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn mask_keeps_two_percent_of_eligible_pixels() {
        let img = random_image(64, 50, 1);
        let m = salient_edge_mask(&img, 0.02, &EdgeFilter::default(), 5).unwrap();
        let eligible = 60 * 46;
        assert_eq!(m.count(), (0.02 * eligible as f64).round() as usize);
        for at in m.indices() {
            assert!(at.fits(5, 64, 50));
        }
    }

    #[test]
    fn selected_pixels_have_the_largest_responses() {
        let img = random_image(40, 40, 2);
        let m = salient_edge_mask(&img, 0.05, &EdgeFilter::default(), 5).unwrap();
        let r = edge_response(&img, &EdgeFilter::default()).unwrap();
        let lowest_in = m.indices().iter().map(|p| r.get(p.x, p.y)).fold(f64::INFINITY, f64::min);
        for y in 2..38 {
            for x in 2..38 {
                if !m.get(x, y) {
                    assert!(r.get(x, y) <= lowest_in);
                }
            }
        }
    }

    #[test]
    fn step_edge_selection_hugs_the_step() {
        let img = Image::from_fn(48, 48, |x, _| if x >= 24 { 0.8 } else { 0.2 });
        let m = salient_edge_mask(&img, 0.02, &EdgeFilter::default(), 5).unwrap();
        assert!(m.count() > 0);
        for at in m.indices() {
            assert!((at.x as f64 - 23.5).abs() <= 2.0, "{at:?}");
        }
    }

    #[test]
    fn ramp_response_is_unit() {
        let img = Image::from_fn(30, 30, |x, _| x as f64 * 0.01);
        let r = edge_response(&img, &EdgeFilter::default()).unwrap();
        assert!((r.get(15, 15) - 0.01).abs() < 1e-12);
    }

    fn pair(w: usize, h: usize, gx: Vec<f64>, gy: Vec<f64>) -> GradientPair {
        GradientPair {
            gx: Image::gray(w, h, gx).unwrap(),
            gy: Image::gray(w, h, gy).unwrap(),
        }
    }

    #[test]
    fn single_bin_forces_zero_threshold() {
        let gx: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        let g = pair(10, 10, gx, vec![0.0; 100]);
        let s = init_threshold(&g, 25, 2.0).unwrap();
        assert_eq!(s.keep_per_bin(), 10);
        assert_eq!(s.tau, 0.0);
        assert!(s.degenerate);
    }

    #[test]
    fn per_bin_rule_matches_histogram_oracle() {
        // Four edges, one per direction bin, with distinct magnitude ranges.
        let n = 200;
        let mut gx = vec![0.0; n];
        let mut gy = vec![0.0; n];
        let dirs: [(f64, f64); 4] = [(1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (-1.0, 1.0)];
        for i in 0..n {
            let (dx, dy) = dirs[i % 4];
            let len: f64 = (dx * dx + dy * dy).sqrt();
            let m = 1.0 + (i / 4) as f64 * (1.0 + (i % 4) as f64);
            gx[i] = dx / len * m;
            gy[i] = dy / len * m;
        }
        let g = pair(20, 10, gx.clone(), gy.clone());
        let s = init_threshold(&g, 25, 2.0).unwrap();
        assert!(!s.degenerate);
        // Oracle: per-bin 10th largest, then the minimum.
        let mut per_bin = Vec::new();
        for b in 0..4 {
            let mut m: Vec<f64> = (0..n).filter(|i| i % 4 == b).map(|i| (gx[i] * gx[i] + gy[i] * gy[i]).sqrt()).collect();
            m.sort_by(|a, c| c.partial_cmp(a).unwrap());
            per_bin.push(m[9]);
        }
        let expect = per_bin.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((s.tau - expect).abs() < 1e-12);
        // Every bin keeps at least ten pixels.
        let mag = g.magnitude();
        for b in 0..4 {
            let kept = (0..n).filter(|&i| i % 4 == b && mag[i] >= s.tau).count();
            assert!(kept >= 10);
        }
    }

    #[test]
    fn opposite_directions_share_a_bin() {
        assert_eq!(direction_bin(1.0, 0.0), direction_bin(-1.0, 0.0));
        assert_eq!(direction_bin(1.0, 1.0), direction_bin(-1.0, -1.0));
        assert_eq!(direction_bin(0.0, 1.0), direction_bin(0.0, -1.0));
        assert_eq!(direction_bin(-1.0, 1.0), direction_bin(1.0, -1.0));
        let all: std::collections::BTreeSet<_> =
            [(1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (-1.0, 1.0)].iter().map(|&(a, b)| direction_bin(a, b)).collect();
        assert_eq!(all.len(), 4);
    }

    #[test]
    fn schedule_divides_by_one_point_one() {
        let g = gradients(&random_image(40, 40, 3)).unwrap();
        let mut s = init_threshold(&g, 25, 2.0).unwrap();
        let t0 = s.tau;
        assert!(t0 > 0.0);
        for k in 1..=14 {
            let before = s.tau;
            s.advance();
            assert!(s.tau < before);
            assert!((s.tau - t0 / 1.1f64.powi(k)).abs() <= 1e-15 * t0);
        }
    }

    #[test]
    fn tiny_kernel_area_is_rejected() {
        let g = gradients(&random_image(8, 8, 3)).unwrap();
        assert!(init_threshold(&g, 2, 2.0).is_err());
    }

    #[test]
    fn truncation_trivial_cases() {
        let g = gradients(&random_image(12, 12, 4)).unwrap();
        let s = ThresholdState { tau: 0.0, tau0: 0.0, r: 2.0, n_h: 9, iteration: 0, degenerate: false };
        let all = EdgeMask::from_bits(12, 12, vec![true; 144]).unwrap();
        assert_eq!(truncate_gradients(&g, &all, &s).unwrap(), g);
        let none = truncate_gradients(&g, &EdgeMask::empty(12, 12), &s).unwrap();
        assert!(none.is_zero());
    }

    proptest! {
        #[test]
        fn truncation_matches_per_pixel_predicate(seed in 0u64..500) {
            let g = gradients(&random_image(15, 11, seed)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
            let mask = EdgeMask::from_bits(15, 11, (0..165).map(|_| rng.random::<bool>()).collect()).unwrap();
            let mut mags = g.magnitude();
            let mag = mags.clone();
            mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let tau = mags[mags.len() / 2];
            let s = ThresholdState { tau, tau0: tau, r: 2.0, n_h: 9, iteration: 0, degenerate: false };
            let t = truncate_gradients(&g, &mask, &s).unwrap();
            for i in 0..165 {
                let keep = mask.bits()[i] && mag[i] >= tau;
                prop_assert_eq!(t.gx.data()[i], if keep { g.gx.data()[i] } else { 0.0 });
                prop_assert_eq!(t.gy.data()[i], if keep { g.gy.data()[i] } else { 0.0 });
                if t.gx.data()[i] != 0.0 || t.gy.data()[i] != 0.0 {
                    prop_assert!(mask.bits()[i]);
                }
            }
        }
    }
}
