use crate::error::{DeblurError, Result};

/// Taps below this fraction of the peak are zeroed by [`Kernel::project`].
pub const PRUNE_FRACTION: f64 = 1.0 / 20.0;

/// A square blur kernel (PSF) with an odd side length.
///
/// Tap `(row, col)` sits at offset `(row - r, col - r)` from the center,
/// `r = size / 2`, and [`conv2`](super::conv2) applies it as a true
/// convolution. Weights are unconstrained until [`Kernel::project`] is called.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size % 2 == 0 {
            return Err(DeblurError::Dimension(format!("kernel size must be odd, got {size}")));
        }
        if weights.len() != size * size {
            return Err(DeblurError::Dimension(format!(
                "kernel of size {size} needs {} weights, got {}",
                size * size,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(DeblurError::Dimension("kernel contains non-finite weights".into()));
        }
        Ok(Self { size, weights })
    }

    /// Unit impulse at the center tap.
    pub fn delta(size: usize) -> Result<Self> {
        let mut w = vec![0.0; size * size];
        if size % 2 == 1 {
            w[(size / 2) * size + size / 2] = 1.0;
        }
        Self::new(size, w)
    }

    /// `k x k` averaging blur. Even sides are embedded in the next odd grid
    /// with the box anchored at the center tap and extending down-right.
    pub fn box_blur(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(DeblurError::Parameter("box blur side must be positive".into()));
        }
        let (size, offset) = if k % 2 == 1 { (k, 0) } else { (k + 1, 1) };
        let mut w = vec![0.0; size * size];
        let v = 1.0 / (k * k) as f64;
        for row in 0..k {
            for col in 0..k {
                w[(row + offset) * size + col + offset] = v;
            }
        }
        Self::new(size, w)
    }

    /// Isotropic Gaussian of standard deviation `sigma`, normalized.
    pub fn gaussian(size: usize, sigma: f64) -> Result<Self> {
        if sigma <= 0.0 {
            return Err(DeblurError::Parameter("gaussian sigma must be positive".into()));
        }
        let r = (size / 2) as f64;
        let mut w = Vec::with_capacity(size * size);
        for row in 0..size {
            for col in 0..size {
                let dy = row as f64 - r;
                let dx = col as f64 - r;
                w.push((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp());
            }
        }
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        Self::new(size, w)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.size + col]
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn is_delta(&self) -> bool {
        let c = self.radius() * self.size + self.radius();
        self.weights
            .iter()
            .enumerate()
            .all(|(i, &w)| if i == c { w == 1.0 } else { w == 0.0 })
    }

    /// Non-negative taps summing to one within `1e-10`.
    pub fn is_normalized(&self) -> bool {
        self.weights.iter().all(|&w| w >= 0.0) && (self.sum() - 1.0).abs() <= 1e-10
    }

    /// Physical-PSF projection: clamp negatives, zero taps under
    /// [`PRUNE_FRACTION`] of the peak, rescale to unit sum.
    pub fn project(&self) -> Result<Kernel> {
        let mut w: Vec<f64> = self.weights.iter().map(|&v| v.max(0.0)).collect();
        let peak = w.iter().cloned().fold(0.0, f64::max);
        if peak <= 0.0 {
            return Err(DeblurError::DegenerateGradient(
                "kernel has no positive taps to normalize".into(),
            ));
        }
        let floor = peak * PRUNE_FRACTION;
        for v in w.iter_mut() {
            if *v < floor {
                *v = 0.0;
            }
        }
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        Kernel::new(self.size, w)
    }

    /// Rescales to unit sum without any other change.
    pub fn normalized(&self) -> Result<Kernel> {
        let s = self.sum();
        if s == 0.0 {
            return Err(DeblurError::DegenerateData("kernel sums to zero".into()));
        }
        Kernel::new(self.size, self.weights.iter().map(|w| w / s).collect())
    }

    /// Zeroes every 8-connected group of positive taps whose mass is below
    /// `fraction` of the total, then rescales to unit sum. The heaviest group
    /// always survives.
    pub fn without_small_components(&self, fraction: f64) -> Result<Kernel> {
        let n = self.size;
        let total: f64 = self.weights.iter().filter(|&&v| v > 0.0).sum();
        if total <= 0.0 {
            return Err(DeblurError::DegenerateData("kernel has no positive taps".into()));
        }
        let mut label = vec![usize::MAX; n * n];
        let mut groups: Vec<(Vec<usize>, f64)> = Vec::new();
        for start in 0..n * n {
            if self.weights[start] <= 0.0 || label[start] != usize::MAX {
                continue;
            }
            let id = groups.len();
            let mut members = vec![start];
            label[start] = id;
            let mut i = 0;
            while i < members.len() {
                let (r, c) = ((members[i] / n) as isize, (members[i] % n) as isize);
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        let (rr, cc) = (r + dr, c + dc);
                        if rr < 0 || cc < 0 || rr >= n as isize || cc >= n as isize {
                            continue;
                        }
                        let j = rr as usize * n + cc as usize;
                        if self.weights[j] > 0.0 && label[j] == usize::MAX {
                            label[j] = id;
                            members.push(j);
                        }
                    }
                }
                i += 1;
            }
            let mass = members.iter().map(|&j| self.weights[j]).sum();
            groups.push((members, mass));
        }
        let heaviest = groups
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
            .map(|(i, _)| i)
            .expect("at least one positive tap");
        let mut w = vec![0.0; n * n];
        for (i, (members, mass)) in groups.iter().enumerate() {
            if i == heaviest || *mass >= fraction * total {
                for &j in members {
                    w[j] = self.weights[j];
                }
            }
        }
        Kernel::new(n, w)?.normalized()
    }

    /// Intensity-weighted centroid `(row, col)` offset from the center tap.
    pub fn centroid_offset(&self) -> (f64, f64) {
        let r = self.radius() as f64;
        let (mut sy, mut sx, mut s) = (0.0, 0.0, 0.0);
        for row in 0..self.size {
            for col in 0..self.size {
                let w = self.get(row, col);
                sy += w * (row as f64 - r);
                sx += w * (col as f64 - r);
                s += w;
            }
        }
        if s == 0.0 {
            return (0.0, 0.0);
        }
        (sy / s, sx / s)
    }

    /// Integer translation; taps pushed outside the grid are dropped.
    pub fn shifted(&self, drow: isize, dcol: isize) -> Kernel {
        let n = self.size as isize;
        let mut w = vec![0.0; self.weights.len()];
        for row in 0..n {
            for col in 0..n {
                let (tr, tc) = (row + drow, col + dcol);
                if (0..n).contains(&tr) && (0..n).contains(&tc) {
                    w[(tr * n + tc) as usize] = self.weights[(row * n + col) as usize];
                }
            }
        }
        Kernel {
            size: self.size,
            weights: w,
        }
    }

    /// Moves the centroid onto the center tap (rounded to whole pixels).
    pub fn recentered(&self) -> Kernel {
        let (cy, cx) = self.centroid_offset();
        self.shifted(-(cy.round() as isize), -(cx.round() as isize))
    }

    /// Zero-pads (or center-crops) to another odd size.
    pub fn resized(&self, size: usize) -> Result<Kernel> {
        if size % 2 == 0 {
            return Err(DeblurError::Dimension(format!("kernel size must be odd, got {size}")));
        }
        let (ro, rn) = (self.radius() as isize, (size / 2) as isize);
        let mut w = vec![0.0; size * size];
        for row in 0..size as isize {
            for col in 0..size as isize {
                let (sr, sc) = (row - rn + ro, col - rn + ro);
                if (0..self.size as isize).contains(&sr) && (0..self.size as isize).contains(&sc) {
                    w[(row * size as isize + col) as usize] = self.get(sr as usize, sc as usize);
                }
            }
        }
        Kernel::new(size, w)
    }

    /// Normalized cross-correlation at zero shift against a kernel of any odd size.
    pub fn normalized_correlation(&self, other: &Kernel) -> f64 {
        let size = self.size.max(other.size);
        let (a, b) = match (self.resized(size), other.resized(size)) {
            (Ok(a), Ok(b)) => (a, b),
            _ => return 0.0,
        };
        let dot: f64 = a.weights.iter().zip(&b.weights).map(|(x, y)| x * y).sum();
        let na: f64 = a.weights.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.weights.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    }

    /// Row sums (projection onto the vertical axis).
    pub fn row_sums(&self) -> Vec<f64> {
        self.weights.chunks(self.size).map(|r| r.iter().sum()).collect()
    }

    /// Column sums (projection onto the horizontal axis).
    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.size)
            .map(|c| (0..self.size).map(|r| self.get(r, c)).sum())
            .collect()
    }
}

/// Smallest odd integer not below `v` (and at least 1).
pub fn ceil_to_odd(v: f64) -> usize {
    let c = v.ceil().max(1.0) as usize;
    if c % 2 == 0 {
        c + 1
    } else {
        c
    }
}
