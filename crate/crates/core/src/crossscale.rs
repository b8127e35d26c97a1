//! Cross-scale patch search and non-local prediction.
//!
//! A patch of the current image is predicted from its most similar patches in
//! a down-scaled copy of the same image, combined with weights
//! `w_i ∝ exp(-||q - R_i x^a||^2 / h_w)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DeblurError, Result};
use crate::imgcore::Image;
use crate::patchops::{gather_patch, valid_centers, PatchIndex};

/// Default decay `h_w` for patch dimension `n`.
pub fn default_decay(n: usize) -> f64 {
    0.1 * n as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    Exact,
    /// Stride-2 candidate grid, then exact re-ranking of the 3x3
    /// neighborhoods around the best coarse hits.
    #[default]
    Approximate,
}

impl std::str::FromStr for SearchMode {
    type Err = DeblurError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::Exact),
            "approximate" | "approx" => Ok(Self::Approximate),
            _ => Err(DeblurError::Parameter(format!("unknown search mode '{s}'"))),
        }
    }
}

/// Neighbors of one query patch, nearest first.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborSet {
    pub query: PatchIndex,
    /// Centers in the target image with squared distances, ascending.
    pub neighbors: Vec<(PatchIndex, f64)>,
    pub weights: Vec<f64>,
}

/// All patches of a target image, laid out for repeated scans.
pub struct CrossScaleIndex {
    side: usize,
    width: usize,
    centers: Vec<PatchIndex>,
    data: Vec<f64>,
    coarse: Vec<usize>,
}

/// Bounded list of the best `(distance, candidate)` pairs. Insertion is stable
/// and requires a strictly smaller distance once full, so among equal
/// distances the candidate offered first wins.
struct TopList {
    cap: usize,
    items: Vec<(f64, usize)>,
}

impl TopList {
    fn new(cap: usize) -> Self {
        Self {
            cap,
            items: Vec::with_capacity(cap + 1),
        }
    }

    fn bound(&self) -> f64 {
        if self.items.len() < self.cap {
            f64::INFINITY
        } else {
            self.items[self.cap - 1].0
        }
    }

    fn offer(&mut self, d: f64, j: usize) {
        if d >= self.bound() {
            return;
        }
        let pos = self.items.partition_point(|&(e, _)| e <= d);
        self.items.insert(pos, (d, j));
        self.items.truncate(self.cap);
    }
}

impl CrossScaleIndex {
    pub fn new(target: &Image, side: usize) -> Result<Self> {
        target.ensure_gray()?;
        if side % 2 == 0 {
            return Err(DeblurError::Parameter(format!("patch side must be odd, got {side}")));
        }
        let (w, h) = target.dims();
        let centers = valid_centers(w, h, side);
        let n = side * side;
        let mut data = vec![0.0; centers.len() * n];
        for (j, &c) in centers.iter().enumerate() {
            gather_patch(target, side, c, &mut data[j * n..(j + 1) * n]);
        }
        let r = side / 2;
        let coarse = centers
            .iter()
            .enumerate()
            .filter(|(_, c)| (c.x - r) % 2 == 0 && (c.y - r) % 2 == 0)
            .map(|(j, _)| j)
            .collect();
        Ok(Self {
            side,
            width: w,
            centers,
            data,
            coarse,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn patch(&self, j: usize) -> &[f64] {
        let n = self.side * self.side;
        &self.data[j * n..(j + 1) * n]
    }

    pub fn center(&self, j: usize) -> PatchIndex {
        self.centers[j]
    }

    /// Squared distance with early exit once `bound` is exceeded.
    #[inline]
    fn distance(&self, query: &[f64], j: usize, bound: f64) -> f64 {
        let p = self.patch(j);
        let mut d = 0.0;
        for (row_q, row_p) in query.chunks(self.side).zip(p.chunks(self.side)) {
            for (a, b) in row_q.iter().zip(row_p) {
                d += (a - b) * (a - b);
            }
            if d > bound {
                return d;
            }
        }
        d
    }

    fn scan(&self, query: &[f64], candidates: impl Iterator<Item = usize>, p: usize) -> TopList {
        let mut top = TopList::new(p);
        for j in candidates {
            let d = self.distance(query, j, top.bound());
            top.offer(d, j);
        }
        top
    }

    /// Local position of candidate `j` in raster order, used to look up the
    /// 3x3 neighborhood of a coarse hit.
    fn neighborhood(&self, j: usize, out: &mut Vec<usize>) {
        let r = self.side / 2;
        let cols = self.width + 1 - self.side;
        let rows = self.centers.len() / cols;
        let (cx, cy) = (self.centers[j].x - r, self.centers[j].y - r);
        for y in cy.saturating_sub(1)..=(cy + 1).min(rows - 1) {
            for x in cx.saturating_sub(1)..=(cx + 1).min(cols - 1) {
                out.push(y * cols + x);
            }
        }
    }

    /// The `p` target patches nearest to `query`, ascending by distance, ties
    /// in raster order of their centers.
    pub fn search(&self, query: &[f64], p: usize, mode: SearchMode) -> Result<Vec<(PatchIndex, f64)>> {
        if query.len() != self.side * self.side {
            return Err(DeblurError::Shape(format!(
                "query has {} entries, expected {}",
                query.len(),
                self.side * self.side
            )));
        }
        if p == 0 || p > self.len() {
            return Err(DeblurError::Count(format!(
                "{p} neighbors requested from {} patches",
                self.len()
            )));
        }
        let top = match mode {
            SearchMode::Exact => self.scan(query, 0..self.len(), p),
            SearchMode::Approximate => {
                let coarse = self.scan(query, self.coarse.iter().cloned(), (4 * p).min(self.coarse.len()));
                let mut cand = Vec::with_capacity(9 * coarse.items.len());
                for &(_, j) in &coarse.items {
                    self.neighborhood(j, &mut cand);
                }
                cand.sort_unstable();
                cand.dedup();
                if cand.len() < p {
                    self.scan(query, 0..self.len(), p)
                } else {
                    self.scan(query, cand.into_iter(), p)
                }
            }
        };
        Ok(top.items.into_iter().map(|(d, j)| (self.centers[j], d)).collect())
    }

    /// Searches and weights in one step.
    pub fn neighbor_set(
        &self,
        query_at: PatchIndex,
        query: &[f64],
        p: usize,
        h_w: f64,
        mode: SearchMode,
    ) -> Result<NeighborSet> {
        let neighbors = self.search(query, p, mode)?;
        let d2: Vec<f64> = neighbors.iter().map(|n| n.1).collect();
        let weights = weights_from_distances(&d2, h_w)?;
        Ok(NeighborSet {
            query: query_at,
            neighbors,
            weights,
        })
    }

    /// `sum_i w_i R_i x^a` using the stored patches.
    pub fn predict(&self, set: &NeighborSet) -> Vec<f64> {
        let n = self.side * self.side;
        let r = self.side / 2;
        let cols = self.width + 1 - self.side;
        let mut out = vec![0.0; n];
        for (&(c, _), &w) in set.neighbors.iter().zip(&set.weights) {
            let j = (c.y - r) * cols + (c.x - r);
            for (o, v) in out.iter_mut().zip(self.patch(j)) {
                *o += w * v;
            }
        }
        out
    }

    /// Predictions for many queries in parallel, in input order.
    pub fn predict_all(
        &self,
        queries: &[(PatchIndex, &[f64])],
        p: usize,
        h_w: f64,
        mode: SearchMode,
    ) -> Result<Vec<Vec<f64>>> {
        queries
            .par_iter()
            .map(|&(at, q)| Ok(self.predict(&self.neighbor_set(at, q, p, h_w, mode)?)))
            .collect()
    }
}

/// Exact `p`-nearest search of `query` over every patch of `target`.
pub fn nn_search(query: &[f64], target: &Image, patch_side: usize, p: usize) -> Result<NeighborSet> {
    let index = CrossScaleIndex::new(target, patch_side)?;
    let neighbors = index.search(query, p, SearchMode::Exact)?;
    Ok(NeighborSet {
        query: PatchIndex::new(0, 0),
        neighbors,
        weights: Vec::new(),
    })
}

/// Normalized `exp(-d_i / h_w)` for squared distances `d_i`.
pub fn weights_from_distances(d2: &[f64], h_w: f64) -> Result<Vec<f64>> {
    if !(h_w > 0.0) || !h_w.is_finite() {
        return Err(DeblurError::Parameter(format!("weight decay must be positive, got {h_w}")));
    }
    if d2.is_empty() {
        return Err(DeblurError::Count("no neighbors to weight".into()));
    }
    // Shifting by the smallest distance cancels in the normalization.
    let lo = d2.iter().cloned().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = d2.iter().map(|d| (-(d - lo) / h_w).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.iter().map(|v| v / total).collect())
}

/// Weights of column-stacked `neighbors` relative to `query`.
pub fn nl_weights(query: &[f64], neighbors: &[&[f64]], h_w: f64) -> Result<Vec<f64>> {
    let d2: Vec<f64> = neighbors
        .iter()
        .map(|nb| query.iter().zip(nb.iter()).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect();
    weights_from_distances(&d2, h_w)
}

/// `sum_i w_i R_i target` read straight from the target image.
pub fn nl_predict(set: &NeighborSet, target: &Image, patch_side: usize) -> Vec<f64> {
    let n = patch_side * patch_side;
    let mut out = vec![0.0; n];
    let mut buf = vec![0.0; n];
    for (&(c, _), &w) in set.neighbors.iter().zip(&set.weights) {
        gather_patch(target, patch_side, c, &mut buf);
        for (o, v) in out.iter_mut().zip(&buf) {
            *o += w * v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| rng.random::<f64>())
    }

    fn patch_at(img: &Image, side: usize, c: PatchIndex) -> Vec<f64> {
        let mut v = vec![0.0; side * side];
        gather_patch(img, side, c, &mut v);
        v
    }

    #[test]
    fn duplicate_query_is_found_at_distance_zero() {
        let t = random_image(20, 18, 1);
        let q = patch_at(&t, 5, PatchIndex::new(9, 11));
        let s = nn_search(&q, &t, 5, 3).unwrap();
        assert_eq!(s.neighbors[0], (PatchIndex::new(9, 11), 0.0));
    }

    #[test]
    fn constant_ties_follow_raster_order() {
        let t = Image::constant(9, 9, 0.5);
        let s = nn_search(&[0.5; 9], &t, 3, 4).unwrap();
        let got: Vec<_> = s.neighbors.iter().map(|n| n.0).collect();
        assert_eq!(
            got,
            vec![PatchIndex::new(1, 1), PatchIndex::new(2, 1), PatchIndex::new(3, 1), PatchIndex::new(4, 1)]
        );
    }

    #[test]
    fn too_many_neighbors_is_a_count_error() {
        let t = random_image(6, 6, 2);
        assert!(matches!(nn_search(&[0.0; 25], &t, 5, 5), Err(DeblurError::Count(_))));
    }

    #[test]
    fn exact_search_matches_exhaustive_scan() {
        for seed in 0..10 {
            let t = random_image(24, 24, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let q: Vec<f64> = (0..25).map(|_| rng.random::<f64>()).collect();
            let s = nn_search(&q, &t, 5, 5).unwrap();
            let mut all: Vec<(f64, PatchIndex)> = valid_centers(24, 24, 5)
                .into_iter()
                .map(|c| {
                    let p = patch_at(&t, 5, c);
                    (q.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum(), c)
                })
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1.y, a.1.x).cmp(&(b.1.y, b.1.x))));
            for (k, (c, d)) in s.neighbors.iter().enumerate() {
                assert_eq!(*c, all[k].1);
                assert!((d - all[k].0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn approximate_search_is_close_on_natural_content() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/camera.png");
        let img = crate::imgcore::io::load_image(path).unwrap().crop(60, 60, 96, 96).unwrap();
        let t = crate::imgcore::downscale(&img, 4.0 / 3.0).unwrap();
        let index = CrossScaleIndex::new(&t, 5).unwrap();
        let (mut sum_exact, mut sum_approx) = (0.0, 0.0);
        for c in valid_centers(96, 96, 5).into_iter().step_by(5) {
            let q = patch_at(&img, 5, c);
            let exact = index.search(&q, 1, SearchMode::Exact).unwrap()[0].1;
            let approx = index.search(&q, 1, SearchMode::Approximate).unwrap()[0].1;
            assert!(approx >= exact);
            sum_exact += exact;
            sum_approx += approx;
        }
        let delta = sum_approx / sum_exact - 1.0;
        eprintln!("approximate search delta = {delta:.4}");
        assert!(delta < 0.5);
    }

    #[test]
    fn weight_examples() {
        assert_eq!(weights_from_distances(&[0.7], 1.0).unwrap(), vec![1.0]);
        let w = weights_from_distances(&[0.4, 0.4], 2.5).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
        let h = 2.5;
        let w = weights_from_distances(&[0.0, 3f64.ln() * h], h).unwrap();
        assert!((w[0] - 0.75).abs() < 1e-12 && (w[1] - 0.25).abs() < 1e-12);
        assert!(matches!(weights_from_distances(&[1.0], 0.0), Err(DeblurError::Parameter(_))));
    }

    #[test]
    fn nl_weights_uses_patch_distances() {
        let q = [0.0, 0.0];
        let a = [1.0, 0.0];
        let b = [1.0, 1.0];
        let w = nl_weights(&q, &[&a, &b], 1.0).unwrap();
        let e = (-1.0f64).exp();
        assert!((w[0] - 1.0 / (1.0 + e)).abs() < 1e-12);
    }

    #[test]
    fn prediction_of_a_duplicate_is_exact() {
        let t = random_image(16, 16, 4);
        let q = patch_at(&t, 5, PatchIndex::new(7, 8));
        let index = CrossScaleIndex::new(&t, 5).unwrap();
        let set = index.neighbor_set(PatchIndex::new(0, 0), &q, 1, 2.5, SearchMode::Exact).unwrap();
        assert_eq!(index.predict(&set), q);
        assert_eq!(nl_predict(&set, &t, 5), q);
    }

    #[test]
    fn identical_neighbors_predict_that_patch() {
        let t = Image::constant(12, 12, 0.3);
        let index = CrossScaleIndex::new(&t, 3).unwrap();
        let q = vec![0.9; 9];
        let set = index.neighbor_set(PatchIndex::new(0, 0), &q, 4, 0.9, SearchMode::Exact).unwrap();
        assert!(index.predict(&set).iter().all(|v| (v - 0.3).abs() < 1e-15));
    }

    proptest! {
        #[test]
        fn prediction_is_a_convex_combination(seed in 0u64..500, p in 1usize..6) {
            let t = random_image(14, 13, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let q: Vec<f64> = (0..9).map(|_| rng.random::<f64>()).collect();
            let index = CrossScaleIndex::new(&t, 3).unwrap();
            let set = index.neighbor_set(PatchIndex::new(0, 0), &q, p, 0.9, SearchMode::Exact).unwrap();
            let total: f64 = set.weights.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-10);
            prop_assert!(set.weights.iter().all(|&w| w >= 0.0));
            for w in set.neighbors.windows(2) {
                prop_assert!(w[0].1 <= w[1].1);
            }
            let pred = index.predict(&set);
            // Direct weighted-sum oracle.
            let mut direct = vec![0.0; 9];
            for (&(c, _), &w) in set.neighbors.iter().zip(&set.weights) {
                let pt = patch_at(&t, 3, c);
                for i in 0..9 {
                    direct[i] += w * pt[i];
                }
            }
            for i in 0..9 {
                prop_assert!((pred[i] - direct[i]).abs() <= 1e-12);
                let lo = set.neighbors.iter().map(|n| patch_at(&t, 3, n.0)[i]).fold(f64::INFINITY, f64::min);
                let hi = set.neighbors.iter().map(|n| patch_at(&t, 3, n.0)[i]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(pred[i] >= lo - 1e-12 && pred[i] <= hi + 1e-12);
            }
        }
    }
}
