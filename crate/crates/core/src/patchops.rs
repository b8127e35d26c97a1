//! Patch extraction `Q_j` and its adjoint.
//!
//! Patches are square with an odd side and are addressed by their center
//! pixel. A patch whose footprint would leave the image is never produced;
//! callers select centers from [`valid_centers`] or an edge mask that has its
//! border band cleared.

use crate::error::{DeblurError, Result};
use crate::imgcore::Image;

/// Center pixel of a patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PatchIndex {
    pub x: usize,
    pub y: usize,
}

impl PatchIndex {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    /// True when the whole `side x side` footprint lies inside `width x height`.
    pub fn fits(&self, side: usize, width: usize, height: usize) -> bool {
        let r = side / 2;
        self.x >= r && self.y >= r && self.x + r < width && self.y + r < height
    }
}

/// Column-stacked patches: column `j` is the raster scan of patch `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchMatrix {
    n: usize,
    data: Vec<f64>,
}

impl PatchMatrix {
    pub fn zeros(n: usize, count: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * count],
        }
    }

    pub fn from_columns(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || data.len() % n != 0 {
            return Err(DeblurError::Shape(format!(
                "{} samples do not split into columns of {n}",
                data.len()
            )));
        }
        Ok(Self { n, data })
    }

    /// Patch dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.n
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn column_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.n)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Keeps the listed columns, in the given order.
    pub fn select(&self, cols: &[usize]) -> PatchMatrix {
        let mut data = Vec::with_capacity(cols.len() * self.n);
        for &c in cols {
            data.extend_from_slice(self.column(c));
        }
        PatchMatrix { n: self.n, data }
    }
}

fn check_side(side: usize) -> Result<()> {
    if side == 0 || side % 2 == 0 {
        return Err(DeblurError::Parameter(format!("patch side must be odd, got {side}")));
    }
    Ok(())
}

/// Every center whose patch fits, in raster order.
pub fn valid_centers(width: usize, height: usize, side: usize) -> Vec<PatchIndex> {
    let r = side / 2;
    if width < side || height < side {
        return Vec::new();
    }
    let mut out = Vec::with_capacity((width - 2 * r) * (height - 2 * r));
    for y in r..height - r {
        for x in r..width - r {
            out.push(PatchIndex { x, y });
        }
    }
    out
}

/// Copies one patch into `dst` (length `side^2`), raster order within the patch.
#[inline]
pub fn gather_patch(image: &Image, side: usize, at: PatchIndex, dst: &mut [f64]) {
    let r = side / 2;
    let w = image.width();
    let src = image.data();
    for dy in 0..side {
        let row = (at.y + dy - r) * w + at.x - r;
        dst[dy * side..(dy + 1) * side].copy_from_slice(&src[row..row + side]);
    }
}

/// `Q_j x` for every index.
pub fn extract_patches(image: &Image, side: usize, indices: &[PatchIndex]) -> Result<PatchMatrix> {
    image.ensure_gray()?;
    check_side(side)?;
    let (w, h) = image.dims();
    let n = side * side;
    let mut out = PatchMatrix::zeros(n, indices.len());
    for (j, &at) in indices.iter().enumerate() {
        if !at.fits(side, w, h) {
            return Err(DeblurError::Index(format!(
                "patch of side {side} at ({}, {}) leaves the {w}x{h} image",
                at.x, at.y
            )));
        }
        gather_patch(image, side, at, out.column_mut(j));
    }
    Ok(out)
}

/// Adjoint of [`extract_patches`]: returns `(sum_j Q_j^T p_j, sum_j Q_j^T 1)`,
/// the accumulated patches and the per-pixel coverage count.
///
/// Accumulation runs sequentially in index order so results do not depend on
/// thread scheduling.
pub fn accumulate_patches(
    patches: &PatchMatrix,
    indices: &[PatchIndex],
    side: usize,
    dims: (usize, usize),
) -> Result<(Image, Image)> {
    check_side(side)?;
    let (w, h) = dims;
    if patches.n() != side * side {
        return Err(DeblurError::Shape(format!(
            "patch dimension {} does not match side {side}",
            patches.n()
        )));
    }
    if patches.count() != indices.len() {
        return Err(DeblurError::Shape(format!(
            "{} patches for {} indices",
            patches.count(),
            indices.len()
        )));
    }
    let r = side / 2;
    let mut sum = vec![0.0; w * h];
    let mut cover = vec![0.0; w * h];
    for (j, &at) in indices.iter().enumerate() {
        if !at.fits(side, w, h) {
            return Err(DeblurError::Index(format!(
                "patch of side {side} at ({}, {}) leaves the {w}x{h} image",
                at.x, at.y
            )));
        }
        let p = patches.column(j);
        for dy in 0..side {
            let row = (at.y + dy - r) * w + at.x - r;
            for dx in 0..side {
                sum[row + dx] += p[dy * side + dx];
                cover[row + dx] += 1.0;
            }
        }
    }
    Ok((Image::gray(w, h, sum)?, Image::gray(w, h, cover)?))
}

/// Per-pixel number of listed patches covering it.
pub fn coverage(indices: &[PatchIndex], side: usize, dims: (usize, usize)) -> Result<Image> {
    let ones = PatchMatrix::from_columns(side * side, vec![1.0; side * side * indices.len()])?;
    Ok(accumulate_patches(&ones, indices, side, dims)?.1)
}
