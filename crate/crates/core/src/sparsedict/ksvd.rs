use log::debug;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{omp_encode, Dictionary, SparseCode};
use crate::error::{DeblurError, Result};
use crate::patchops::PatchMatrix;

/// Two atoms count as the same direction above this `|dot|`.
const DUPLICATE_DOT: f64 = 1.0 - 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct KsvdOptions {
    /// Atom count `t`.
    pub atoms: usize,
    /// OMP sparsity `T`.
    pub sparsity: usize,
    /// Alternating sweeps (coding then atom update).
    pub sweeps: usize,
    /// Training samples beyond this are subsampled.
    pub max_samples: usize,
    pub seed: u64,
}

impl Default for KsvdOptions {
    fn default() -> Self {
        Self {
            atoms: 100,
            sparsity: 4,
            sweeps: 10,
            max_samples: 20_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct KsvdReport {
    pub dictionary: Dictionary,
    /// `sum_i ||s_i - D alpha_i||^2` after the first coding pass and after
    /// every sweep.
    pub objective: Vec<f64>,
    pub samples_used: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Initial atoms: seeded-order training samples whose directions are pairwise
/// distinct, padded with random unit vectors when the data has too few.
fn initial_dictionary(samples: &PatchMatrix, t: usize, rng: &mut ChaCha8Rng) -> Result<Dictionary> {
    let n = samples.n();
    let m = samples.count();
    let order = sample(rng, m, m).into_vec();
    let mut atoms: Vec<Vec<f64>> = Vec::with_capacity(t);
    for j in order {
        if atoms.len() == t {
            break;
        }
        let s = samples.column(j);
        let len = norm(s);
        if len <= 1e-12 {
            continue;
        }
        let unit: Vec<f64> = s.iter().map(|v| v / len).collect();
        if atoms.iter().all(|a| dot(a, &unit).abs() < DUPLICATE_DOT) {
            atoms.push(unit);
        }
    }
    if atoms.is_empty() {
        return Err(DeblurError::DegenerateData("all training samples are zero".into()));
    }
    while atoms.len() < t {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let len = norm(&v);
        atoms.push(v.iter().map(|x| x / len).collect());
    }
    Dictionary::from_atoms(n, atoms.concat())
}

struct State<'a> {
    samples: &'a PatchMatrix,
    codes: Vec<SparseCode>,
    /// Column-stacked `s_i - D alpha_i`.
    residual: Vec<f64>,
}

impl State<'_> {
    fn objective(&self) -> f64 {
        self.residual.iter().map(|v| v * v).sum()
    }

    fn residual_of(&self, i: usize) -> &[f64] {
        let n = self.samples.n();
        &self.residual[i * n..(i + 1) * n]
    }

    fn set_codes(&mut self, dict: &Dictionary, codes: Vec<SparseCode>) {
        let n = self.samples.n();
        for (i, code) in codes.iter().enumerate() {
            let recon = code.reconstruct(dict);
            let s = self.samples.column(i);
            for ((r, a), b) in self.residual[i * n..(i + 1) * n].iter_mut().zip(s).zip(&recon) {
                *r = a - b;
            }
        }
        self.codes = codes;
    }
}

/// Recodes every sample with OMP, keeping a sample's previous code whenever
/// it is at least as good, so the objective cannot rise.
fn coding_stage(state: &mut State, dict: &Dictionary, sparsity: usize) -> Result<()> {
    let samples = state.samples;
    let fresh: Vec<SparseCode> = (0..samples.count())
        .into_par_iter()
        .map(|i| {
            let s = samples.column(i);
            let code = omp_encode(dict, s, sparsity)?;
            let old_err: f64 = state.residual_of(i).iter().map(|v| v * v).sum();
            if code.residual_energy(dict, s) < old_err {
                Ok(code)
            } else {
                Ok(state.codes[i].clone())
            }
        })
        .collect::<Result<_>>()?;
    state.set_codes(dict, fresh);
    Ok(())
}

/// Rank-one update of atom `k` and its coefficients over the samples using it.
/// Returns false when no sample uses the atom.
fn update_atom(state: &mut State, dict: &mut Dictionary, k: usize) -> bool {
    let n = dict.n();
    let users: Vec<(usize, usize)> = state
        .codes
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.support.iter().position(|&s| s == k).map(|p| (i, p)))
        .collect();
    if users.is_empty() {
        return false;
    }
    // E = R_omega + d_k alpha_k(omega)
    let atom = dict.atom(k).to_vec();
    let mut e = DMatrix::<f64>::zeros(n, users.len());
    for (c, &(i, p)) in users.iter().enumerate() {
        let a = state.codes[i].coeffs[p];
        let r = state.residual_of(i);
        for row in 0..n {
            e[(row, c)] = r[row] + atom[row] * a;
        }
    }
    let gram = &e * e.transpose();
    let eig = SymmetricEigen::new(gram);
    let top = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold(0, |b, (i, v)| if *v > eig.eigenvalues[b] { i } else { b });
    if !(eig.eigenvalues[top] > 0.0) {
        return true;
    }
    let mut u: Vec<f64> = eig.eigenvectors.column(top).iter().cloned().collect();
    let len = norm(&u);
    u.iter_mut().for_each(|v| *v /= len);
    // Sign convention: keep the orientation closest to the old atom.
    if dot(&u, &atom) < 0.0 {
        u.iter_mut().for_each(|v| *v = -*v);
    }
    dict.atom_mut(k).copy_from_slice(&u);
    for (c, &(i, p)) in users.iter().enumerate() {
        let col = e.column(c);
        let a: f64 = col.iter().zip(&u).map(|(x, y)| x * y).sum();
        state.codes[i].coeffs[p] = a;
        let r = &mut state.residual[i * n..(i + 1) * n];
        for row in 0..n {
            r[row] = col[row] - u[row] * a;
        }
    }
    true
}

/// Points an unused atom at the worst-reconstructed sample that is not
/// already (up to sign) an atom. Unused atoms carry no coefficients, so the
/// objective is unchanged.
fn replace_unused(state: &State, dict: &mut Dictionary, k: usize, taken: &mut Vec<usize>) {
    let n = dict.n();
    let mut order: Vec<(usize, f64)> = (0..state.samples.count())
        .map(|i| (i, state.residual_of(i).iter().map(|v| v * v).sum()))
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (i, err) in order {
        if err <= 1e-20 {
            break;
        }
        if taken.contains(&i) {
            continue;
        }
        let r = state.residual_of(i);
        let len = norm(r);
        let unit: Vec<f64> = r.iter().map(|v| v / len).collect();
        if (0..dict.t()).all(|j| j == k || dot(dict.atom(j), &unit).abs() < DUPLICATE_DOT) {
            dict.atom_mut(k)[..n].copy_from_slice(&unit);
            taken.push(i);
            return;
        }
    }
}

/// K-SVD: alternates OMP coding of every sample with rank-one updates of each
/// atom over the samples that use it. The objective is non-increasing across
/// sweeps and the result depends only on the inputs and `seed`.
///
/// Unused atoms are re-seeded from the current worst residual direction.
pub fn ksvd_train(samples: &PatchMatrix, opts: &KsvdOptions) -> Result<KsvdReport> {
    let t = opts.atoms;
    if t == 0 || opts.sparsity == 0 {
        return Err(DeblurError::Parameter("atom count and sparsity must be positive".into()));
    }
    if samples.count() < t {
        return Err(DeblurError::TrainingData(format!(
            "{} samples cannot train {t} atoms",
            samples.count()
        )));
    }
    if samples.as_slice().iter().all(|&v| v == 0.0) {
        return Err(DeblurError::DegenerateData("all training samples are zero".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let subset;
    let samples = if samples.count() > opts.max_samples.max(t) {
        let mut pick = sample(&mut rng, samples.count(), opts.max_samples.max(t)).into_vec();
        pick.sort_unstable();
        subset = samples.select(&pick);
        &subset
    } else {
        samples
    };
    let mut dict = initial_dictionary(samples, t, &mut rng)?;
    let mut state = State {
        samples,
        codes: vec![SparseCode::empty(opts.sparsity); samples.count()],
        residual: samples.as_slice().to_vec(),
    };
    coding_stage(&mut state, &dict, opts.sparsity)?;
    let mut objective = vec![state.objective()];
    for sweep in 0..opts.sweeps {
        let mut unused = Vec::new();
        for k in 0..t {
            if !update_atom(&mut state, &mut dict, k) {
                unused.push(k);
            }
        }
        let mut taken = Vec::new();
        for k in unused {
            replace_unused(&state, &mut dict, k, &mut taken);
        }
        coding_stage(&mut state, &dict, opts.sparsity)?;
        let obj = state.objective();
        debug!("ksvd sweep {sweep}: objective {obj:.6e}");
        objective.push(obj);
    }
    Ok(KsvdReport {
        dictionary: dict,
        objective,
        samples_used: samples.count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_samples(n: usize, m: usize, seed: u64) -> PatchMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PatchMatrix::from_columns(n, (0..n * m).map(|_| rng.random::<f64>() - 0.3).collect()).unwrap()
    }

    #[test]
    fn rank_one_data_gives_the_direction() {
        let v: Vec<f64> = (0..9).map(|i| (i as f64 - 3.0) * 0.1 + 0.05).collect();
        let data: Vec<f64> = (0..30).flat_map(|_| v.clone()).collect();
        let s = PatchMatrix::from_columns(9, data).unwrap();
        let opts = KsvdOptions { atoms: 1, sparsity: 1, sweeps: 3, ..Default::default() };
        let rep = ksvd_train(&s, &opts).unwrap();
        let len = norm(&v);
        let d = rep.dictionary.atom(0);
        let sign = dot(d, &v).signum();
        for (a, b) in d.iter().zip(&v) {
            assert!((a - sign * b / len).abs() < 1e-10);
        }
        assert!(*rep.objective.last().unwrap() < 1e-20);
    }

    #[test]
    fn orthonormal_generator_is_fitted() {
        // Samples c * q_k over a random orthonormal basis Q, T = 1.
        let n = 16;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
        let q = g.qr().q();
        let mut data = Vec::new();
        for i in 0..400 {
            let k = i % n;
            let c = (0.5 + rng.random::<f64>()) * if rng.random::<bool>() { 1.0 } else { -1.0 };
            data.extend(q.column(k).iter().map(|v| c * v));
        }
        let s = PatchMatrix::from_columns(n, data).unwrap();
        let opts = KsvdOptions { atoms: n, sparsity: 1, sweeps: 10, seed: 4, ..Default::default() };
        let rep = ksvd_train(&s, &opts).unwrap();
        let mean = rep.objective.last().unwrap() / 400.0;
        assert!(mean <= 1e-6, "mean error {mean}");
    }

    #[test]
    fn objective_is_monotone_and_atoms_stay_unit() {
        for seed in 0..3 {
            let s = random_samples(25, 600, seed);
            let opts = KsvdOptions { atoms: 40, sparsity: 3, sweeps: 6, seed, ..Default::default() };
            let rep = ksvd_train(&s, &opts).unwrap();
            for w in rep.objective.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", rep.objective);
            }
            for k in 0..40 {
                assert!((norm(rep.dictionary.atom(k)) - 1.0).abs() < 1e-10);
            }
            assert!(rep.dictionary.max_coherence() < DUPLICATE_DOT);
        }
    }

    #[test]
    fn deterministic_for_a_seed() {
        let s = random_samples(9, 300, 5);
        let opts = KsvdOptions { atoms: 20, sparsity: 2, sweeps: 4, seed: 9, ..Default::default() };
        let a = ksvd_train(&s, &opts).unwrap();
        let b = ksvd_train(&s, &opts).unwrap();
        assert_eq!(a.dictionary, b.dictionary);
        assert_eq!(a.objective, b.objective);
    }

    #[test]
    fn input_errors() {
        let s = random_samples(9, 10, 1);
        let opts = KsvdOptions { atoms: 20, ..Default::default() };
        assert!(matches!(ksvd_train(&s, &opts), Err(DeblurError::TrainingData(_))));
        let z = PatchMatrix::zeros(9, 50);
        let opts = KsvdOptions { atoms: 5, ..Default::default() };
        assert!(matches!(ksvd_train(&z, &opts), Err(DeblurError::DegenerateData(_))));
    }

    #[test]
    fn subsampling_caps_the_pool() {
        let s = random_samples(9, 500, 2);
        let opts = KsvdOptions { atoms: 10, sparsity: 2, sweeps: 1, max_samples: 100, seed: 1 };
        assert_eq!(ksvd_train(&s, &opts).unwrap().samples_used, 100);
    }
}
