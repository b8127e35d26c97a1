//! Evaluation: the error ratio between restorations with an estimated and a
//! true kernel, success-rate aggregation, and probes that compare the two
//! patch regularizers on sharp and blurred versions of an image.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blindestim::EstimationConfig;
use crate::crossscale::CrossScaleIndex;
use crate::edgesel::{salient_edge_mask, EdgeMask};
use crate::error::{DeblurError, Result};
use crate::imgcore::{conv2, downscale, Boundary, Image, Kernel};
use crate::patchops::{extract_patches, valid_centers, PatchIndex};
use crate::sparsedict::{ksvd_train, omp_encode, Dictionary, KsvdOptions};

/// `||x - x_est||^2 / ||x - x_true||^2`. A zero denominator gives `1` when the
/// numerator is zero too and positive infinity (with a warning) otherwise.
pub fn error_ratio(x: &Image, x_est: &Image, x_true: &Image) -> Result<f64> {
    let num = x.squared_distance(x_est)?;
    let den = x.squared_distance(x_true)?;
    if den == 0.0 {
        if num == 0.0 {
            return Ok(1.0);
        }
        warn!("reference restoration is exact; error ratio is infinite");
        return Ok(f64::INFINITY);
    }
    Ok(num / den)
}

/// Integer translation of `estimate` that best correlates with `reference`,
/// on a grid large enough for both. Blind estimation recovers a kernel only
/// up to such a shift, so evaluations align before comparing restorations.
pub fn align_kernel(estimate: &Kernel, reference: &Kernel) -> Result<Kernel> {
    let size = estimate.size().max(reference.size());
    let (e, r) = (estimate.resized(size)?, reference.resized(size)?);
    let rad = (size / 2) as isize;
    let mut best = (f64::MIN, 0, 0);
    for dr in -rad..=rad {
        for dc in -rad..=rad {
            let c = r.normalized_correlation(&e.shifted(dr, dc));
            if c > best.0 {
                best = (c, dr, dc);
            }
        }
    }
    e.shifted(best.1, best.2).normalized()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRatioReport {
    pub values: Vec<f64>,
    pub threshold: f64,
    /// Fraction of values at or below the threshold.
    pub success_rate: f64,
    pub mean: f64,
    /// `(ratio, fraction of images with error ratio <= ratio)`, ascending.
    pub cumulative: Vec<(f64, f64)>,
}

pub fn aggregate(values: &[f64], threshold: f64) -> Result<ErrorRatioReport> {
    if values.is_empty() {
        return Err(DeblurError::Parameter("no error ratios to aggregate".into()));
    }
    if values.iter().any(|v| v.is_nan() || *v < 0.0) {
        return Err(DeblurError::Parameter("error ratios must be non-negative numbers".into()));
    }
    let n = values.len() as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(ErrorRatioReport {
        values: values.to_vec(),
        threshold,
        success_rate: values.iter().filter(|&&v| v <= threshold).count() as f64 / n,
        mean: values.iter().sum::<f64>() / n,
        cumulative: sorted.iter().enumerate().map(|(i, &v)| (v, (i + 1) as f64 / n)).collect(),
    })
}

/// Squared sparse-coding error `||Q_j v - D alpha_j||^2` of every patch that
/// fits, in raster order of centers.
pub fn sparse_patch_errors(image: &Image, dict: &Dictionary, side: usize, sparsity: usize) -> Result<Vec<f64>> {
    let centers = valid_centers(image.width(), image.height(), side);
    let patches = extract_patches(image, side, &centers)?;
    (0..patches.count())
        .into_par_iter()
        .map(|j| {
            let p = patches.column(j);
            Ok(omp_encode(dict, p, sparsity)?.residual_energy(dict, p))
        })
        .collect()
}

/// Squared cross-scale prediction error of every patch that fits, with
/// neighbors searched in the image shrunk by the pyramid factor.
pub fn nonlocal_patch_errors(image: &Image, cfg: &EstimationConfig) -> Result<Vec<f64>> {
    let side = cfg.patch_side;
    let centers = valid_centers(image.width(), image.height(), side);
    let patches = extract_patches(image, side, &centers)?;
    let index = CrossScaleIndex::new(&downscale(image, cfg.scale_factor)?, side)?;
    centers
        .par_iter()
        .enumerate()
        .map(|(j, &at)| {
            let q = patches.column(j);
            let set = index.neighbor_set(at, q, cfg.neighbors, cfg.decay(), cfg.search)?;
            let pred = index.predict(&set);
            Ok(q.iter().zip(&pred).map(|(a, b)| (a - b) * (a - b)).sum())
        })
        .collect()
}

/// Both regularizers for one image, as `sqrt(Reg / (N n))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizerRow {
    /// `"sharp"` or the blur support, e.g. `"3x3"`.
    pub label: String,
    pub reg_c: f64,
    pub reg_s: f64,
}

/// Where the sharp image beats one blurred version patch by patch.
#[derive(Clone, Debug, Serialize)]
pub struct EdgeSets {
    pub label: String,
    /// Centers where the sharp sparse error is no larger than the blurred one.
    #[serde(skip)]
    pub r_c: EdgeMask,
    /// Same for the cross-scale prediction error.
    #[serde(skip)]
    pub r_s: EdgeMask,
    /// Salient edges of the blurred image.
    #[serde(skip)]
    pub edges: EdgeMask,
    /// `|R| / eligible` and `|R & M| / |M|` for both sets.
    pub r_c_fraction: f64,
    pub r_c_on_edges: f64,
    pub r_s_fraction: f64,
    pub r_s_on_edges: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeReport {
    pub rows: Vec<RegularizerRow>,
    pub sets: Vec<EdgeSets>,
    pub dictionary_atoms: usize,
}

/// Support of the non-zero taps as `"rows x cols"`.
fn support_label(k: &Kernel) -> String {
    let rows = k.row_sums().iter().filter(|&&v| v != 0.0).count();
    let cols = k.col_sums().iter().filter(|&&v| v != 0.0).count();
    format!("{rows}x{cols}")
}

fn mask_from(errors_sharp: &[f64], errors_blur: &[f64], centers: &[PatchIndex], w: usize, h: usize) -> Result<EdgeMask> {
    let mut bits = vec![false; w * h];
    for ((a, b), c) in errors_sharp.iter().zip(errors_blur).zip(centers) {
        bits[c.y * w + c.x] = a <= b;
    }
    EdgeMask::from_bits(w, h, bits)
}

fn fractions(set: &EdgeMask, edges: &EdgeMask, eligible: usize) -> (f64, f64) {
    let on = set.bits().iter().zip(edges.bits()).filter(|(a, b)| **a && **b).count();
    let on_edges = if edges.is_empty() { 0.0 } else { on as f64 / edges.count() as f64 };
    (set.count() as f64 / eligible.max(1) as f64, on_edges)
}

/// Compares the regularizers on `sharp` and on `sharp` blurred by each kernel
/// (replicated borders). The dictionary is trained on every patch of the
/// first blurred image shrunk by the pyramid factor, or of the sharp image
/// when no blur is given. Sums run over every patch that fits and are
/// normalized by the pixel count `N` and patch dimension `n`.
pub fn probe_regularizers(sharp: &Image, blurs: &[Kernel], cfg: &EstimationConfig) -> Result<ProbeReport> {
    sharp.ensure_gray()?;
    cfg.validate()?;
    let side = cfg.patch_side;
    let (w, h) = sharp.dims();
    let blurred: Vec<Image> = blurs
        .iter()
        .map(|k| conv2(sharp, k, Boundary::Replicate))
        .collect::<Result<_>>()?;
    let train_src = downscale(blurred.first().unwrap_or(sharp), cfg.scale_factor)?;
    let pool = extract_patches(
        &train_src,
        side,
        &valid_centers(train_src.width(), train_src.height(), side),
    )?;
    let atoms = cfg.atoms.min(pool.count());
    let dict = ksvd_train(
        &pool,
        &KsvdOptions {
            atoms,
            sparsity: cfg.sparsity,
            sweeps: cfg.ksvd_sweeps,
            max_samples: cfg.max_training_samples,
            seed: cfg.seed,
        },
    )?
    .dictionary;

    let scale = (w * h * cfg.patch_dim()) as f64;
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (label, img) in std::iter::once(("sharp".to_string(), sharp))
        .chain(blurs.iter().zip(&blurred).map(|(k, b)| (support_label(k), b)))
    {
        let ec = sparse_patch_errors(img, &dict, side, cfg.sparsity)?;
        let es = nonlocal_patch_errors(img, cfg)?;
        rows.push(RegularizerRow {
            label,
            reg_c: (ec.iter().sum::<f64>() / scale).sqrt(),
            reg_s: (es.iter().sum::<f64>() / scale).sqrt(),
        });
        errors.push((ec, es));
    }

    let centers = valid_centers(w, h, side);
    let mut sets = Vec::new();
    for (i, b) in blurred.iter().enumerate() {
        let (ec, es) = &errors[i + 1];
        let r_c = mask_from(&errors[0].0, ec, &centers, w, h)?;
        let r_s = mask_from(&errors[0].1, es, &centers, w, h)?;
        let edges = salient_edge_mask(b, cfg.edge_fraction, &cfg.edge_filter, side)?;
        let (r_c_fraction, r_c_on_edges) = fractions(&r_c, &edges, centers.len());
        let (r_s_fraction, r_s_on_edges) = fractions(&r_s, &edges, centers.len());
        sets.push(EdgeSets {
            label: rows[i + 1].label.clone(),
            r_c,
            r_s,
            edges,
            r_c_fraction,
            r_c_on_edges,
            r_s_fraction,
            r_s_on_edges,
        });
    }
    Ok(ProbeReport {
        rows,
        sets,
        dictionary_atoms: dict.t(),
    })
}
