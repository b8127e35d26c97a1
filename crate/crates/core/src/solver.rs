//! Bi-conjugate gradient solver for the latent-image normal equations.

use log::warn;
use serde::{Deserialize, Serialize};

/// Square linear map on flat vectors.
pub trait LinearOperator {
    fn dim(&self) -> usize;

    fn apply(&self, x: &[f64], out: &mut [f64]);

    /// `A^T x`. Only called when [`is_symmetric`](Self::is_symmetric) is false.
    fn apply_transpose(&self, x: &[f64], out: &mut [f64]) {
        self.apply(x, out)
    }

    /// When true the shadow sequence coincides with the primary one and the
    /// transpose products are skipped.
    fn is_symmetric(&self) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BicgOptions {
    /// Stop once `||b - A x|| <= tolerance * ||b||`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for BicgOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-5,
            max_iterations: 300,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// Iterations performed.
    pub iterations: usize,
    /// Relative residual of the returned iterate.
    pub residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` starting from the contents of `x`, which on return holds
/// the iterate with the smallest residual seen. Reductions are sequential, so
/// the result does not depend on the thread count.
pub fn bicg(op: &dyn LinearOperator, b: &[f64], x: &mut [f64], opts: &BicgOptions) -> SolveReport {
    let n = op.dim();
    assert_eq!(b.len(), n, "right-hand side length");
    assert_eq!(x.len(), n, "initial guess length");
    let symmetric = op.is_symmetric();
    let b_norm = dot(b, b).sqrt();
    let scale = if b_norm > 0.0 { b_norm } else { 1.0 };

    let mut q = vec![0.0; n];
    op.apply(x, &mut q);
    let mut r: Vec<f64> = b.iter().zip(&q).map(|(b, q)| b - q).collect();
    let mut rel = dot(&r, &r).sqrt() / scale;
    let mut best = SolveReport {
        iterations: 0,
        residual: rel,
        converged: rel <= opts.tolerance,
    };
    if best.converged {
        return best;
    }
    let mut best_x = x.to_vec();
    let mut r_hat = if symmetric { Vec::new() } else { r.clone() };
    let mut p = r.clone();
    let mut p_hat = if symmetric { Vec::new() } else { r.clone() };
    let mut q_hat = if symmetric { Vec::new() } else { vec![0.0; n] };
    let mut rho = dot(&r, &r);

    for it in 1..=opts.max_iterations {
        op.apply(&p, &mut q);
        let denom = if symmetric { dot(&p, &q) } else { dot(&p_hat, &q) };
        if denom == 0.0 || !denom.is_finite() {
            break;
        }
        let alpha = rho / denom;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        if !symmetric {
            op.apply_transpose(&p_hat, &mut q_hat);
            for i in 0..n {
                r_hat[i] -= alpha * q_hat[i];
            }
        }
        rel = dot(&r, &r).sqrt() / scale;
        if rel < best.residual {
            best = SolveReport {
                iterations: it,
                residual: rel,
                converged: rel <= opts.tolerance,
            };
            best_x.copy_from_slice(x);
        }
        if rel <= opts.tolerance {
            break;
        }
        let rho_next = if symmetric { dot(&r, &r) } else { dot(&r_hat, &r) };
        if rho_next == 0.0 || !rho_next.is_finite() {
            break;
        }
        let beta = rho_next / rho;
        rho = rho_next;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        if !symmetric {
            for i in 0..n {
                p_hat[i] = r_hat[i] + beta * p_hat[i];
            }
        }
        best.iterations = it;
    }
    x.copy_from_slice(&best_x);
    if !best.converged {
        warn!(
            "bicg stopped after {} iterations at relative residual {:.3e}",
            best.iterations, best.residual
        );
    }
    best
}
