use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::{update_kernel, update_latent, EstimationConfig};
use crate::edgesel::{init_threshold, salient_edge_mask, truncate_gradients, ThresholdState};
use crate::error::{DeblurError, Result};
use crate::imgcore::{
    ceil_to_odd, downscale, gradients, gradients_no_wrap, pyramid_depth, resize_bilinear, scaled_dim, GradientPair, Image, Kernel,
};
use crate::patchops::{extract_patches, valid_centers, PatchMatrix};
use crate::sparsedict::{ksvd_train, Dictionary, KsvdOptions};

/// Smallest pyramid level side the driver will build.
const MIN_LEVEL_SIDE: usize = 8;

/// One inner iteration, as reported to observers and stored in the trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based, coarsest first.
    pub level: usize,
    /// 1-based within the level.
    pub iteration: usize,
    pub width: usize,
    pub height: usize,
    pub kernel_size: usize,
    pub tau: f64,
    pub mask_pixels: usize,
    pub bicg_iterations: usize,
    pub bicg_residual: f64,
    pub bicg_converged: bool,
    /// Mean squared latent change of this iteration.
    pub change: f64,
}

#[derive(Clone, Debug)]
pub struct EstimateResult {
    pub kernel: Kernel,
    /// Intermediate latent image at the finest level.
    pub latent: Image,
    pub levels: usize,
    pub trace: Vec<IterationRecord>,
    pub warnings: Vec<String>,
}

fn note(warnings: &mut Vec<String>, msg: String) {
    warn!("{msg}");
    warnings.push(msg);
}

/// Kernel side at a level shrunk by `shrink`: the full size scaled down and
/// rounded up to odd, capped so it fits the level and kept at least 3.
pub fn level_kernel_size(kernel_size: usize, shrink: f64, width: usize, height: usize) -> usize {
    let side = width.min(height);
    let cap = if side % 2 == 1 { side } else { side.saturating_sub(1) };
    ceil_to_odd(kernel_size as f64 / shrink).min(cap).max(3)
}

/// Trains a dictionary on edge patches of `latent` shrunk by the pyramid
/// factor. The pool holds the strongest-edge patches, at least `4t` of them;
/// if the shrunk image cannot supply `t` patches the full-resolution latent
/// tops it up, and if that still falls short `t` is reduced. A featureless
/// latent yields the identity dictionary.
pub fn train_dictionary(latent: &Image, cfg: &EstimationConfig, seed: u64, warnings: &mut Vec<String>) -> Result<Dictionary> {
    let side = cfg.patch_side;
    let n = cfg.patch_dim();
    let t = cfg.atoms;
    let small = match downscale(latent, cfg.scale_factor) {
        Ok(s) => Some(s),
        Err(DeblurError::Scale(_)) => None,
        Err(e) => return Err(e),
    };
    let pool_from = |img: &Image| -> Result<PatchMatrix> {
        let (w, h) = img.dims();
        let eligible = valid_centers(w, h, side).len();
        if eligible == 0 {
            return Ok(PatchMatrix::zeros(n, 0));
        }
        let want = ((cfg.edge_fraction * eligible as f64).round() as usize).max(4 * t);
        let frac = (want as f64 / eligible as f64).min(1.0);
        let mask = salient_edge_mask(img, frac, &cfg.edge_filter, side)?;
        extract_patches(img, side, &mask.indices())
    };
    let mut pool = match &small {
        Some(s) => pool_from(s)?,
        None => PatchMatrix::zeros(n, 0),
    };
    if pool.count() < t {
        let extra = pool_from(latent)?;
        let mut data = pool.as_slice().to_vec();
        data.extend_from_slice(extra.as_slice());
        pool = PatchMatrix::from_columns(n, data)?;
    }
    if pool.count() == 0 {
        note(warnings, "no edge patches to train on; using the identity dictionary".into());
        return Ok(Dictionary::identity(n));
    }
    let atoms = if pool.count() < t {
        note(
            warnings,
            format!("only {} training patches; dictionary shrunk from {t} atoms", pool.count()),
        );
        pool.count()
    } else {
        t
    };
    let opts = KsvdOptions {
        atoms,
        sparsity: cfg.sparsity.min(n),
        sweeps: cfg.ksvd_sweeps,
        max_samples: cfg.max_training_samples,
        seed,
    };
    match ksvd_train(&pool, &opts) {
        Ok(r) => Ok(r.dictionary),
        Err(DeblurError::DegenerateData(m)) => {
            note(warnings, format!("{m}; using the identity dictionary"));
            Ok(Dictionary::identity(n))
        }
        Err(e) => Err(e),
    }
}

/// Estimates the blur kernel of `y`; see [`estimate_with`].
pub fn estimate(y: &Image, cfg: &EstimationConfig) -> Result<EstimateResult> {
    estimate_with(y, cfg, &mut |_, _| {})
}

fn mean_squared_change(a: &Image, b: &Image) -> Result<f64> {
    Ok(a.squared_distance(b)? / a.pixel_count() as f64)
}

/// Coarse-to-fine kernel estimation. Color input is converted to gray. At
/// every level the latent starts from the observation (coarsest level) or
/// the bilinearly enlarged previous latent, and each inner iteration builds
/// the edge mask, re-estimates the kernel from thresholded masked gradients,
/// and updates the latent. The loop ends after `inner_iters` iterations or
/// once the mean squared latent change drops to `epsilon`. The dictionary is
/// trained from the coarsest observation and refreshed from each level's
/// final latent. `observer` sees every iteration's record and kernel. With
/// `inner_iters == 0` the kernel is computed once, at full resolution, from
/// the observation itself.
/// `g` zeroed wherever both channels of `support` are zero.
fn same_support(g: &GradientPair, support: &GradientPair) -> Result<GradientPair> {
    let (w, h) = g.dims();
    let keep: Vec<bool> = support.gx.data().iter().zip(support.gy.data()).map(|(a, b)| *a != 0.0 || *b != 0.0).collect();
    let pick = |c: &Image| Image::gray(w, h, c.data().iter().zip(&keep).map(|(v, k)| if *k { *v } else { 0.0 }).collect());
    Ok(GradientPair { gx: pick(&g.gx)?, gy: pick(&g.gy)? })
}

pub fn estimate_with(
    y: &Image,
    cfg: &EstimationConfig,
    observer: &mut dyn FnMut(&IterationRecord, &Kernel),
) -> Result<EstimateResult> {
    cfg.validate()?;
    let y = if y.channels() == 1 { y.clone() } else { y.to_gray() };
    let mut warnings = Vec::new();
    let (w0, h0) = y.dims();
    if w0.min(h0) < cfg.patch_side.max(3) {
        return Err(DeblurError::Dimension(format!(
            "{w0}x{h0} image is smaller than a {0}x{0} patch",
            cfg.patch_side
        )));
    }
    let wrap = |level: usize, iteration: usize| {
        move |e: DeblurError| DeblurError::Level {
            level,
            iteration,
            source: Box::new(e),
        }
    };

    if cfg.inner_iters == 0 {
        let ks = level_kernel_size(cfg.kernel_size, 1.0, w0, h0);
        let kernel = (|| {
            let mask = salient_edge_mask(&y, cfg.edge_fraction, &cfg.edge_filter, cfg.patch_side)?;
            let g = gradients(&y)?;
            let tau = init_threshold(&g, ks * ks, cfg.keep_factor)?;
            let gm = truncate_gradients(&g, &mask.dilated(cfg.mask_radius()), &tau)?;
            let mut gy = gradients_no_wrap(&y)?;
            if cfg.mask_observed {
                gy = same_support(&gy, &gm)?;
            }
            let k = update_kernel(&gy, &gm, cfg.lambda_h_per_pixel * (w0 * h0) as f64, ks)?;
            cfg.clean_kernel(&k)
        })()
        .map_err(wrap(1, 0))?;
        return Ok(EstimateResult {
            kernel,
            latent: y,
            levels: 1,
            trace: Vec::new(),
            warnings,
        });
    }

    let mut depth = pyramid_depth(cfg.kernel_size, cfg.patch_side, cfg.scale_factor);
    let shrink_of = |depth: usize, level: usize| cfg.scale_factor.powi((depth - level) as i32);
    let full_depth = depth;
    while depth > 1 && scaled_dim(w0.min(h0), shrink_of(depth, 1)) < MIN_LEVEL_SIDE {
        depth -= 1;
    }
    if depth < full_depth {
        note(
            &mut warnings,
            format!("image too small for {full_depth} pyramid levels; using {depth}"),
        );
    }

    let mut trace = Vec::new();
    let mut latent: Option<Image> = None;
    let mut dict: Option<Dictionary> = None;
    let mut kernel = Kernel::delta(3)?;
    for level in 1..=depth {
        let shrink = shrink_of(depth, level);
        let yl = if level == depth { y.clone() } else { downscale(&y, shrink).map_err(wrap(level, 0))? };
        let (w, h) = yl.dims();
        let ks = level_kernel_size(cfg.kernel_size, shrink, w, h);
        let lambda_h = cfg.lambda_h_per_pixel * (w * h) as f64;
        let grad_y = gradients_no_wrap(&yl).map_err(wrap(level, 0))?;
        let mut x = match &latent {
            None => yl.clone(),
            Some(prev) => resize_bilinear(prev, w, h).map_err(wrap(level, 0))?.clamp01(),
        };
        if dict.is_none() {
            dict = Some(train_dictionary(&x, cfg, cfg.seed, &mut warnings).map_err(wrap(level, 0))?);
        }
        let d = dict.as_ref().expect("dictionary trained above");
        let mut tau: ThresholdState = init_threshold(&gradients(&x).map_err(wrap(level, 0))?, ks * ks, cfg.keep_factor)
            .map_err(wrap(level, 0))?;
        if tau.degenerate {
            note(&mut warnings, format!("level {level}: gradient threshold fell back to 0"));
        }

        for k in 1..=cfg.inner_iters {
            let step = || -> Result<(Kernel, Image, IterationRecord)> {
                let mask = salient_edge_mask(&x, cfg.edge_fraction, &cfg.edge_filter, cfg.patch_side)?;
                let gx = gradients(&x)?;
                let support = mask.dilated(cfg.mask_radius());
                let mut gm = truncate_gradients(&gx, &support, &tau)?;
                if gm.is_zero() && !mask.is_empty() {
                    warn!("threshold removed every masked gradient; using the mask alone");
                    gm = truncate_gradients(&gx, &support, &ThresholdState { tau: 0.0, ..tau })?;
                }
                let gy = if cfg.mask_observed { same_support(&grad_y, &gm)? } else { grad_y.clone() };
                let kern = cfg.clean_kernel(&update_kernel(&gy, &gm, lambda_h, ks)?)?;
                let (next, rep) = update_latent(&yl, &kern, &x, d, &mask, cfg)?;
                if !next.is_finite() {
                    return Err(DeblurError::DegenerateData("latent update produced non-finite values".into()));
                }
                let rec = IterationRecord {
                    level,
                    iteration: k,
                    width: w,
                    height: h,
                    kernel_size: ks,
                    tau: tau.tau,
                    mask_pixels: mask.count(),
                    bicg_iterations: rep.iterations,
                    bicg_residual: rep.residual,
                    bicg_converged: rep.converged,
                    change: mean_squared_change(&next, &x)?,
                };
                Ok((kern, next, rec))
            };
            let (kern, next, rec) = step().map_err(wrap(level, k))?;
            info!(
                "level {level} iter {k}: tau {:.4e}, mask {}, bicg {} it (residual {:.2e}), change {:.2e}",
                rec.tau, rec.mask_pixels, rec.bicg_iterations, rec.bicg_residual, rec.change
            );
            if !rec.bicg_converged {
                warnings.push(format!(
                    "level {level} iter {k}: BiCG stopped at residual {:.2e}",
                    rec.bicg_residual
                ));
            }
            observer(&rec, &kern);
            let done = rec.change <= cfg.epsilon;
            trace.push(rec);
            kernel = kern;
            x = next;
            tau.advance();
            if done {
                break;
            }
        }
        if level < depth {
            let seed = cfg.seed.wrapping_add(level as u64);
            dict = Some(train_dictionary(&x, cfg, seed, &mut warnings).map_err(wrap(level, cfg.inner_iters))?);
        }
        latent = Some(x);
    }
    Ok(EstimateResult {
        kernel,
        latent: latent.expect("at least one level"),
        levels: depth,
        trace,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_sizes_round_up_to_odd_and_fit() {
        assert_eq!(level_kernel_size(51, 1.0, 255, 255), 51);
        assert_eq!(level_kernel_size(51, 4.0 / 3.0, 191, 191), 39);
        assert_eq!(level_kernel_size(51, 1.0, 20, 30), 19);
        assert_eq!(level_kernel_size(5, 10.0, 40, 40), 3);
    }

    #[test]
    fn flat_image_trains_identity_dictionary() {
        let mut w = Vec::new();
        let d = train_dictionary(&Image::constant(40, 40, 0.5), &EstimationConfig::default(), 0, &mut w).unwrap();
        assert_eq!(d.t(), 25);
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn constant_input_reports_level_context() {
        let cfg = EstimationConfig { kernel_size: 5, ..Default::default() };
        match estimate(&Image::constant(32, 32, 0.5), &cfg) {
            Err(DeblurError::Level { level, iteration, source }) => {
                assert_eq!((level, iteration), (1, 1));
                assert!(matches!(*source, DeblurError::DegenerateGradient(_)));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
