use log::warn;
use num_complex::Complex64;
use rayon::prelude::*;

use super::EstimationConfig;
use crate::crossscale::CrossScaleIndex;
use crate::edgesel::EdgeMask;
use crate::error::{DeblurError, Result};
use crate::imgcore::{downscale, edge_taper, gradients, Fft2d, GradientPair, Image, Kernel};
use crate::patchops::{accumulate_patches, coverage, extract_patches, PatchIndex, PatchMatrix};
use crate::solver::{bicg, LinearOperator, SolveReport};
use crate::sparsedict::{omp_encode, Dictionary};

/// Fixed right-hand-side patch targets of the latent system.
#[derive(Clone, Debug)]
pub struct PriorTargets {
    /// Masked patch centers, raster order.
    pub indices: Vec<PatchIndex>,
    /// Sparse approximations `D alpha_j`, one column per index.
    pub sparse: PatchMatrix,
    /// Cross-scale predictions; `None` drops the non-local term.
    pub nonlocal: Option<PatchMatrix>,
}

impl PriorTargets {
    pub fn empty(patch_side: usize) -> Self {
        let n = patch_side * patch_side;
        Self {
            indices: Vec::new(),
            sparse: PatchMatrix::zeros(n, 0),
            nonlocal: Some(PatchMatrix::zeros(n, 0)),
        }
    }
}

/// Codes every masked patch of `x_prev` over `dict` and predicts it from its
/// nearest patches in `x_prev` shrunk by the pyramid factor.
pub fn compute_prior_targets(
    x_prev: &Image,
    dict: &Dictionary,
    mask: &EdgeMask,
    cfg: &EstimationConfig,
) -> Result<PriorTargets> {
    let side = cfg.patch_side;
    if mask.is_empty() {
        return Ok(PriorTargets::empty(side));
    }
    let indices = mask.indices();
    let patches = extract_patches(x_prev, side, &indices)?;
    let n = patches.n();
    let coded: Vec<Vec<f64>> = (0..patches.count())
        .into_par_iter()
        .map(|j| Ok(omp_encode(dict, patches.column(j), cfg.sparsity)?.reconstruct(dict)))
        .collect::<Result<_>>()?;
    let sparse = PatchMatrix::from_columns(n, coded.concat())?;

    let nonlocal = match downscale(x_prev, cfg.scale_factor) {
        Ok(small) => {
            let index = CrossScaleIndex::new(&small, side)?;
            if index.len() < cfg.neighbors {
                warn!("down-scaled latent has too few patches; non-local term dropped");
                None
            } else {
                let queries: Vec<(PatchIndex, &[f64])> =
                    indices.iter().enumerate().map(|(j, &at)| (at, patches.column(j))).collect();
                let pred = index.predict_all(&queries, cfg.neighbors, cfg.decay(), cfg.search)?;
                Some(PatchMatrix::from_columns(n, pred.concat())?)
            }
        }
        Err(DeblurError::Scale(m)) => {
            warn!("{m}; non-local term dropped");
            None
        }
        Err(e) => return Err(e),
    };
    Ok(PriorTargets {
        indices,
        sparse,
        nonlocal,
    })
}

/// `[(H^T H + lambda_g) G + diag(d)]`, with the convolution part diagonal in
/// the Fourier domain.
struct LatentOperator {
    fft: Fft2d,
    symbol: Vec<f64>,
    diag: Vec<f64>,
}

impl LinearOperator for LatentOperator {
    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let mut spec = self.fft.forward_real(x);
        spec.iter_mut().zip(&self.symbol).for_each(|(s, g)| *s *= g);
        let conv = self.fft.inverse_real(spec);
        out.par_iter_mut()
            .zip(conv.par_iter())
            .zip(x.par_iter().zip(self.diag.par_iter()))
            .for_each(|((o, c), (v, d))| *o = c + d * v);
    }

    fn is_symmetric(&self) -> bool {
        true
    }
}

/// Solves the latent normal equations
/// `[(H^T H + lambda_g) G + (lambda_c + lambda_s)(N/|M|) sum Q^T Q] X
///   = H^T G Y + (N/|M|) sum Q^T (lambda_c D alpha + lambda_s prediction)`
/// by BiCG from `x0`, where `grad_y` supplies `G_x Y` and `G_y Y`. Returns
/// the unclamped solution. With no targets the prior terms vanish.
pub fn solve_latent(
    grad_y: &GradientPair,
    kernel: &Kernel,
    x0: &Image,
    targets: &PriorTargets,
    cfg: &EstimationConfig,
) -> Result<(Image, SolveReport)> {
    x0.ensure_gray()?;
    if grad_y.dims() != x0.dims() {
        return Err(DeblurError::Shape(format!(
            "gradients {:?} and initial latent {:?} differ",
            grad_y.dims(),
            x0.dims()
        )));
    }
    let (w, h) = x0.dims();
    let n_pix = w * h;
    let side = cfg.patch_side;
    let fft = Fft2d::new(w, h);
    let hs = fft.kernel_spectrum(kernel);
    let (dx, dy) = fft.derivative_spectra();

    let symbol: Vec<f64> = (0..n_pix)
        .map(|i| (hs[i].norm_sqr() + cfg.lambda_g) * (dx[i].norm_sqr() + dy[i].norm_sqr()))
        .collect();
    let fy = fft.forward_real(grad_y.gx.data());
    let fyy = fft.forward_real(grad_y.gy.data());
    let rhs_spec: Vec<Complex64> = (0..n_pix)
        .map(|i| hs[i].conj() * (dx[i].conj() * fy[i] + dy[i].conj() * fyy[i]))
        .collect();
    let mut rhs = fft.inverse_real(rhs_spec);
    let mut diag = vec![0.0; n_pix];

    let m = targets.indices.len();
    if m > 0 {
        let scale = n_pix as f64 / m as f64;
        let lambda_s = if targets.nonlocal.is_some() { cfg.lambda_s } else { 0.0 };
        let cover = coverage(&targets.indices, side, (w, h))?;
        let (acc_c, _) = accumulate_patches(&targets.sparse, &targets.indices, side, (w, h))?;
        for i in 0..n_pix {
            diag[i] = (cfg.lambda_c + lambda_s) * scale * cover.data()[i];
            rhs[i] += cfg.lambda_c * scale * acc_c.data()[i];
        }
        if let Some(pred) = &targets.nonlocal {
            let (acc_s, _) = accumulate_patches(pred, &targets.indices, side, (w, h))?;
            for i in 0..n_pix {
                rhs[i] += lambda_s * scale * acc_s.data()[i];
            }
        }
    }

    let op = LatentOperator { fft, symbol, diag };
    let mut x = x0.data().to_vec();
    let report = bicg(&op, &rhs, &mut x, &cfg.bicg);
    Ok((Image::gray(w, h, x)?, report))
}

/// One latent step on the observation `y`: prior targets from `x_prev`,
/// linear solve started at `x_prev`, result clamped to `[0, 1]`. With
/// `cfg.taper` the borders of `y` are first blended toward a periodic image
/// with `kernel`, which keeps the Fourier-domain solve from ringing at the
/// image seams.
pub fn update_latent(
    y: &Image,
    kernel: &Kernel,
    x_prev: &Image,
    dict: &Dictionary,
    mask: &EdgeMask,
    cfg: &EstimationConfig,
) -> Result<(Image, SolveReport)> {
    if mask.is_empty() {
        warn!("empty edge mask; patch priors dropped for this step");
    }
    let observed = if cfg.taper { edge_taper(y, kernel) } else { y.clone() };
    let grad_y = gradients(&observed)?;
    let targets = compute_prior_targets(x_prev, dict, mask, cfg)?;
    let (x, report) = solve_latent(&grad_y, kernel, x_prev, &targets, cfg)?;
    Ok((x.clamp01(), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::gradients;
    use crate::solver::BicgOptions;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| rng.random::<f64>())
    }

    fn tight() -> EstimationConfig {
        EstimationConfig {
            bicg: BicgOptions { tolerance: 1e-12, max_iterations: 2000 },
            ..Default::default()
        }
    }

    #[test]
    fn identity_blur_matches_gradients() {
        let y = random_image(20, 18, 1);
        let x0 = random_image(20, 18, 2);
        let cfg = EstimationConfig { lambda_c: 0.0, lambda_s: 0.0, lambda_g: 0.0, ..tight() };
        let gy = gradients(&y).unwrap();
        let (x, rep) = solve_latent(&gy, &Kernel::delta(3).unwrap(), &x0, &PriorTargets::empty(5), &cfg).unwrap();
        assert!(rep.converged);
        let gx = gradients(&x).unwrap();
        for (a, b) in gx.gx.data().iter().chain(gx.gy.data()).zip(gy.gx.data().iter().chain(gy.gy.data())) {
            assert!((a - b).abs() <= 1e-6);
        }
        // The constant mode is never touched.
        assert!((x.mean() - x0.mean()).abs() <= 1e-10);
    }

    #[test]
    fn empty_mask_equals_unregularized_run() {
        let y = random_image(24, 24, 3);
        let x0 = y.clone();
        let dict = Dictionary::identity(25);
        let k = Kernel::gaussian(5, 1.0).unwrap();
        let cfg = tight();
        let mask = EdgeMask::empty(24, 24);
        let a = update_latent(&y, &k, &x0, &dict, &mask, &cfg).unwrap().0;
        let plain = EstimationConfig { lambda_c: 0.0, lambda_s: 0.0, ..cfg.clone() };
        let b = update_latent(&y, &k, &x0, &dict, &mask, &plain).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn prior_targets_follow_the_mask() {
        let x = random_image(32, 32, 4);
        let dict = Dictionary::identity(25);
        let mut bits = vec![false; 32 * 32];
        for &(px, py) in &[(5usize, 5usize), (10, 20), (26, 26)] {
            bits[py * 32 + px] = true;
        }
        let mask = EdgeMask::from_bits(32, 32, bits).unwrap();
        let cfg = EstimationConfig { sparsity: 25, ..Default::default() };
        let t = compute_prior_targets(&x, &dict, &mask, &cfg).unwrap();
        assert_eq!(t.indices, vec![PatchIndex::new(5, 5), PatchIndex::new(10, 20), PatchIndex::new(26, 26)]);
        // A complete basis reproduces each patch.
        let p = extract_patches(&x, 5, &t.indices).unwrap();
        for (a, b) in t.sparse.as_slice().iter().zip(p.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(t.nonlocal.as_ref().unwrap().count(), 3);
    }

    #[test]
    fn tiny_images_drop_the_nonlocal_term() {
        let x = random_image(9, 9, 5);
        let mask = EdgeMask::from_bits(9, 9, (0..81).map(|i| i == 40).collect()).unwrap();
        let t = compute_prior_targets(&x, &Dictionary::identity(25), &mask, &EstimationConfig::default()).unwrap();
        assert!(t.nonlocal.is_none());
    }
}
