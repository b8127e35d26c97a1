//! Learned patch dictionaries: K-SVD training and OMP sparse coding.

mod ksvd;
mod omp;

use std::fmt::Write as _;

pub use self::ksvd::{ksvd_train, KsvdOptions, KsvdReport};
pub use self::omp::{omp_encode, SparseCode};

use crate::error::{DeblurError, Result};

/// `n x t` matrix of unit-norm atoms, stored column by column.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    n: usize,
    t: usize,
    atoms: Vec<f64>,
}

impl Dictionary {
    /// Builds a dictionary from column-stacked atoms, normalizing each one.
    pub fn from_atoms(n: usize, atoms: Vec<f64>) -> Result<Self> {
        if n == 0 || atoms.is_empty() || atoms.len() % n != 0 {
            return Err(DeblurError::Shape(format!(
                "{} values do not form atoms of dimension {n}",
                atoms.len()
            )));
        }
        let t = atoms.len() / n;
        let mut atoms = atoms;
        for (k, a) in atoms.chunks_mut(n).enumerate() {
            let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(DeblurError::DegenerateData(format!("atom {k} has zero norm")));
            }
            a.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(Self { n, t, atoms })
    }

    /// Standard basis of dimension `n` (`t = n`).
    pub fn identity(n: usize) -> Self {
        let mut atoms = vec![0.0; n * n];
        for k in 0..n {
            atoms[k * n + k] = 1.0;
        }
        Self { n, t: n, atoms }
    }

    /// Patch dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Atom count.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn atom(&self, k: usize) -> &[f64] {
        &self.atoms[k * self.n..(k + 1) * self.n]
    }

    pub(crate) fn atom_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.atoms[k * self.n..(k + 1) * self.n]
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    /// `D^T v`.
    pub fn correlate(&self, v: &[f64]) -> Vec<f64> {
        self.atoms
            .chunks(self.n)
            .map(|a| a.iter().zip(v).map(|(x, y)| x * y).sum())
            .collect()
    }

    /// Largest `|<d_i, d_j>|` over distinct atom pairs.
    pub fn max_coherence(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.t {
            for j in i + 1..self.t {
                let d: f64 = self.atom(i).iter().zip(self.atom(j)).map(|(a, b)| a * b).sum();
                worst = worst.max(d.abs());
            }
        }
        worst
    }

    /// Plain-text form: a `n t` header line, then one line per atom.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.n, self.t);
        for a in self.atoms.chunks(self.n) {
            let line: Vec<String> = a.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |reason: String| DeblurError::Format {
            what: "dictionary file",
            reason,
        };
        let mut tokens = text.split_whitespace();
        let mut header = |name: &str| -> Result<usize> {
            tokens
                .next()
                .ok_or_else(|| bad(format!("missing {name}")))?
                .parse::<usize>()
                .map_err(|e| bad(format!("bad {name}: {e}")))
        };
        let n = header("n")?;
        let t = header("t")?;
        let values: Vec<f64> = tokens
            .map(|tok| tok.parse::<f64>().map_err(|e| bad(format!("bad value '{tok}': {e}"))))
            .collect::<Result<_>>()?;
        if n == 0 || t == 0 || values.len() != n * t {
            return Err(bad(format!("expected {} values, found {}", n * t, values.len())));
        }
        Ok(Self { n, t, atoms: values })
    }
}
