use nalgebra::{DMatrix, DVector};

use super::Dictionary;
use crate::error::{DeblurError, Result};

/// Residual norm below which pursuit stops early.
const RESIDUAL_FLOOR: f64 = 1e-12;

/// Sparse coefficients over a dictionary.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseCode {
    /// Atom indices in selection order.
    pub support: Vec<usize>,
    pub coeffs: Vec<f64>,
    pub max_sparsity: usize,
}

impl SparseCode {
    pub fn empty(max_sparsity: usize) -> Self {
        Self {
            support: Vec::new(),
            coeffs: Vec::new(),
            max_sparsity,
        }
    }

    /// `D alpha`.
    pub fn reconstruct(&self, dict: &Dictionary) -> Vec<f64> {
        let mut out = vec![0.0; dict.n()];
        for (&k, &c) in self.support.iter().zip(&self.coeffs) {
            for (o, a) in out.iter_mut().zip(dict.atom(k)) {
                *o += c * a;
            }
        }
        out
    }

    /// `||v - D alpha||^2`.
    pub fn residual_energy(&self, dict: &Dictionary, v: &[f64]) -> f64 {
        self.reconstruct(dict)
            .iter()
            .zip(v)
            .map(|(r, x)| (x - r) * (x - r))
            .sum()
    }
}

/// Least-squares coefficients of `v` on the atoms in `support`, via the
/// Cholesky factor of their Gram matrix. `None` when the atoms are dependent.
fn restricted_least_squares(dict: &Dictionary, support: &[usize], v: &[f64]) -> Option<Vec<f64>> {
    let s = support.len();
    let gram = DMatrix::from_fn(s, s, |i, j| {
        dict.atom(support[i])
            .iter()
            .zip(dict.atom(support[j]))
            .map(|(a, b)| a * b)
            .sum::<f64>()
    });
    let rhs = DVector::from_fn(s, |i, _| {
        dict.atom(support[i]).iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
    });
    let chol = gram.cholesky()?;
    Some(chol.solve(&rhs).iter().cloned().collect())
}

/// Orthogonal matching pursuit with at most `sparsity` atoms.
///
/// Each step adds the unused atom with the largest `|<d_k, r>|` (lowest index
/// on ties), refits all coefficients by least squares on the support and
/// recomputes the residual. Stops early once the residual norm drops below
/// `1e-12` or no atom correlates with it.
pub fn omp_encode(dict: &Dictionary, patch: &[f64], sparsity: usize) -> Result<SparseCode> {
    if patch.len() != dict.n() {
        return Err(DeblurError::Shape(format!(
            "patch has {} entries, dictionary atoms have {}",
            patch.len(),
            dict.n()
        )));
    }
    let mut code = SparseCode::empty(sparsity);
    let mut residual = patch.to_vec();
    let mut norm = residual.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut used = vec![false; dict.t()];
    while code.support.len() < sparsity.min(dict.t()) && norm >= RESIDUAL_FLOOR {
        let corr = dict.correlate(&residual);
        let mut best: Option<(usize, f64)> = None;
        for (k, c) in corr.iter().enumerate() {
            if used[k] {
                continue;
            }
            if best.map_or(true, |(_, b)| c.abs() > b) {
                best = Some((k, c.abs()));
            }
        }
        let Some((k, c)) = best else { break };
        if c <= RESIDUAL_FLOOR * 1e-3 {
            break;
        }
        code.support.push(k);
        let Some(coeffs) = restricted_least_squares(dict, &code.support, patch) else {
            code.support.pop();
            break;
        };
        used[k] = true;
        code.coeffs = coeffs;
        let recon = code.reconstruct(dict);
        for ((r, p), q) in residual.iter_mut().zip(patch).zip(&recon) {
            *r = p - q;
        }
        norm = residual.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    Ok(code)
}
