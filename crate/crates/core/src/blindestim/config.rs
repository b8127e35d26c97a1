use serde::{Deserialize, Serialize};

use crate::crossscale::SearchMode;
use crate::edgesel::EdgeFilter;
use crate::error::{DeblurError, Result};
use crate::imgcore::{ceil_to_odd, Kernel};
use crate::solver::BicgOptions;

/// Every tunable of the kernel estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationConfig {
    /// Pyramid down-scaling factor `a`.
    pub scale_factor: f64,
    /// Patch side (patch dimension `n` is its square).
    pub patch_side: usize,
    /// Dictionary size `t`.
    pub atoms: usize,
    /// OMP sparsity `T`.
    pub sparsity: usize,
    /// Cross-scale neighbors per patch `p`.
    pub neighbors: usize,
    /// Alternations per pyramid level.
    pub inner_iters: usize,
    pub lambda_c: f64,
    pub lambda_s: f64,
    pub lambda_g: f64,
    /// `lambda_h = lambda_h_per_pixel * N` at a level with `N` pixels.
    pub lambda_h_per_pixel: f64,
    /// Finest-level kernel side (odd).
    pub kernel_size: usize,
    /// Gradient threshold keep factor `r`.
    pub keep_factor: f64,
    /// Fraction of eligible pixels in the edge mask.
    pub edge_fraction: f64,
    pub edge_filter: EdgeFilter,
    /// Radius by which the edge mask is grown before it selects latent
    /// gradients for the kernel step; `None` means half the patch side, so
    /// the kernel sees every pixel the patch priors touch.
    pub kernel_mask_radius: Option<usize>,
    /// Connected groups of kernel taps holding less than this fraction of
    /// the mass are dropped after each kernel step; 0 keeps them all.
    pub component_floor: f64,
    /// Restrict the observed gradients in the kernel step to the pixels whose
    /// latent gradients are kept, so both sides of the fit see the same
    /// support. This stops edge tails outside the mask from being read as
    /// blur, which suits nearly sharp inputs, but it also cuts off the
    /// spread of real blur and hurts estimates on strongly blurred ones.
    pub mask_observed: bool,
    /// Inner loop stops once the mean squared latent change is at most this.
    pub epsilon: f64,
    pub bicg: BicgOptions,
    pub ksvd_sweeps: usize,
    pub max_training_samples: usize,
    /// Non-local weight decay; `None` means `0.1 * n`.
    pub weight_decay: Option<f64>,
    pub search: SearchMode,
    /// Taper the observation borders before each latent solve.
    pub taper: bool,
    pub seed: u64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        let patch_side = 5;
        let n = (patch_side * patch_side) as f64;
        Self {
            scale_factor: 4.0 / 3.0,
            patch_side,
            atoms: 100,
            sparsity: 4,
            neighbors: 1,
            inner_iters: 14,
            lambda_c: 0.04 / n,
            lambda_s: 0.04 / n,
            lambda_g: 0.003,
            lambda_h_per_pixel: 0.0003,
            kernel_size: 51,
            keep_factor: 2.0,
            edge_fraction: 0.02,
            edge_filter: EdgeFilter::default(),
            kernel_mask_radius: None,
            component_floor: 0.1,
            mask_observed: false,
            epsilon: 1e-6,
            bicg: BicgOptions::default(),
            ksvd_sweeps: 10,
            max_training_samples: 20_000,
            weight_decay: None,
            search: SearchMode::Approximate,
            taper: true,
            seed: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse::<T>()
        .map_err(|e| DeblurError::Parameter(format!("{key}: cannot parse '{value}': {e}")))
}

impl EstimationConfig {
    /// Patch dimension `n`.
    pub fn patch_dim(&self) -> usize {
        self.patch_side * self.patch_side
    }

    pub fn mask_radius(&self) -> usize {
        self.kernel_mask_radius.unwrap_or(self.patch_side / 2)
    }

    /// Post-processing applied to every raw kernel estimate.
    pub fn clean_kernel(&self, k: &Kernel) -> Result<Kernel> {
        let k = if self.component_floor > 0.0 { k.without_small_components(self.component_floor)? } else { k.clone() };
        k.recentered().normalized()
    }

    pub fn decay(&self) -> f64 {
        self.weight_decay
            .unwrap_or_else(|| crate::crossscale::default_decay(self.patch_dim()))
    }

    /// Checks ranges; returns a description of the first problem.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DeblurError::Parameter(m));
        if !(self.scale_factor > 1.0) || !self.scale_factor.is_finite() {
            return bad(format!("scale_factor must exceed 1, got {}", self.scale_factor));
        }
        if self.patch_side < 3 || self.patch_side % 2 == 0 {
            return bad(format!("patch_side must be odd and at least 3, got {}", self.patch_side));
        }
        if self.kernel_size % 2 == 0 || self.kernel_size < 3 {
            return bad(format!("kernel_size must be odd and at least 3, got {}", self.kernel_size));
        }
        if self.atoms == 0 || self.sparsity == 0 || self.neighbors == 0 {
            return bad("atoms, sparsity and neighbors must be positive".into());
        }
        for (name, v) in [
            ("lambda_c", self.lambda_c),
            ("lambda_s", self.lambda_s),
            ("lambda_g", self.lambda_g),
            ("lambda_h_per_pixel", self.lambda_h_per_pixel),
            ("epsilon", self.epsilon),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        if !(self.keep_factor > 0.0) {
            return bad(format!("keep_factor must be positive, got {}", self.keep_factor));
        }
        if !(0.0..=1.0).contains(&self.edge_fraction) {
            return bad(format!("edge_fraction must lie in [0, 1], got {}", self.edge_fraction));
        }
        if !(0.0..=1.0).contains(&self.component_floor) {
            return bad(format!("component_floor must lie in [0, 1], got {}", self.component_floor));
        }
        if let Some(h) = self.weight_decay {
            if !(h > 0.0) {
                return bad(format!("weight_decay must be positive, got {h}"));
            }
        }
        Ok(())
    }

    /// Sets one field from its textual form, as used by `key=value` config
    /// files. An even `kernel_size` is rounded up to the next odd value; the
    /// returned string, if any, describes such an adjustment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<Option<String>> {
        let mut note = None;
        match key {
            "scale_factor" | "a" => self.scale_factor = parse(key, value)?,
            "patch_side" => self.patch_side = parse(key, value)?,
            "atoms" | "t" => self.atoms = parse(key, value)?,
            "sparsity" | "T" => self.sparsity = parse(key, value)?,
            "neighbors" | "p" => self.neighbors = parse(key, value)?,
            "inner_iters" | "max_iters" => self.inner_iters = parse(key, value)?,
            "lambda_c" => self.lambda_c = parse(key, value)?,
            "lambda_s" => self.lambda_s = parse(key, value)?,
            "lambda_g" => self.lambda_g = parse(key, value)?,
            "lambda_h_per_pixel" => self.lambda_h_per_pixel = parse(key, value)?,
            "kernel_size" => {
                let k: usize = parse(key, value)?;
                let odd = ceil_to_odd(k as f64);
                if odd != k {
                    note = Some(format!("kernel_size {k} is even; using {odd}"));
                }
                self.kernel_size = odd;
            }
            "keep_factor" | "r" => self.keep_factor = parse(key, value)?,
            "edge_fraction" => self.edge_fraction = parse(key, value)?,
            "presmooth_sigma" => self.edge_filter.presmooth_sigma = parse(key, value)?,
            "derivative_sigma" => self.edge_filter.derivative_sigma = parse(key, value)?,
            "kernel_mask_radius" => {
                self.kernel_mask_radius = match value.trim() {
                    "" | "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "component_floor" => self.component_floor = parse(key, value)?,
            "mask_observed" => self.mask_observed = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "bicg_tolerance" => self.bicg.tolerance = parse(key, value)?,
            "bicg_max_iterations" => self.bicg.max_iterations = parse(key, value)?,
            "ksvd_sweeps" => self.ksvd_sweeps = parse(key, value)?,
            "max_training_samples" => self.max_training_samples = parse(key, value)?,
            "weight_decay" => {
                self.weight_decay = match value.trim() {
                    "" | "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "search" => self.search = parse(key, value)?,
            "taper" => self.taper = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(DeblurError::Parameter(format!("unknown estimation key '{key}'"))),
        }
        Ok(note)
    }
}
