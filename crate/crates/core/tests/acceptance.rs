//! Acceptance criteria, checked in order by a single test so that timings
//! are not disturbed by other tests of this binary. Each criterion prints
//! one `PASS` or `FAIL` line with its measurements. A failing criterion
//! fails the test only when `DEBLUR_ACCEPTANCE_STRICT=1`; otherwise the
//! verdicts are a report and a summary line lists the failures.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use deblur_core::blindestim::{
    compute_prior_targets, estimate, solve_kernel_full, solve_latent, update_kernel, EstimationConfig, PriorTargets,
};
use deblur_core::crossscale::weights_from_distances;
use deblur_core::edgesel::{init_threshold, salient_edge_mask, EdgeMask};
use deblur_core::evalprobe::{align_kernel, error_ratio, probe_regularizers};
use deblur_core::imgcore::io::load_image;
use deblur_core::imgcore::{conv2, conv2_fft, correlate2, gradients, gradients_adjoint, Boundary};
use deblur_core::patchops::{accumulate_patches, extract_patches, valid_centers, PatchIndex, PatchMatrix};
use deblur_core::restore::{deconvolve, RestoreConfig};
use deblur_core::solver::BicgOptions;
use deblur_core::sparsedict::{ksvd_train, omp_encode, Dictionary, KsvdOptions};
use deblur_core::synth::{blur_image, motion_kernel};
use deblur_core::{GradientPair, Image, Kernel};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Estimation support used for the 13 to 17 pixel test blurs.
const END_TO_END_KERNEL_SIZE: usize = 19;

/// `(image, blur side, kernel seed)` for the end-to-end set.
const END_TO_END: [(&str, usize, u64); 5] =
    [("camera", 13, 1), ("astronaut", 15, 2), ("coffee", 17, 3), ("chelsea", 13, 4), ("coins", 15, 5)];

const PROBE_IMAGES: [&str; 3] = ["camera", "astronaut", "coins"];

fn data(name: &str) -> Image {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "data", &format!("{name}.png")].iter().collect();
    load_image(p).expect("test image loads")
}

fn random_image(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Image {
    Image::from_fn(w, h, |_, _| rng.random::<f64>())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(no: usize, title: &str, run: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let o = run();
    let line = format!(
        "criterion {no} [{title}]: {} ({}; {:.1} s)\n",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        t.elapsed().as_secs_f64()
    );
    // Written past the test harness capture so the verdicts always show.
    let _ = std::io::stderr().write_all(line.as_bytes());
    o.pass
}

/// Dense normal equations of the kernel objective over every periodic shift:
/// `(A^T A + lambda I) h = A^T b`, where row `p` of `A` holds `m(p - s)`.
fn dense_kernel(gy: &GradientPair, gm: &GradientPair, lambda: f64) -> Vec<f64> {
    let (w, h) = gy.dims();
    let n = w * h;
    let idx = |x: usize, y: usize| (y % h) * w + (x % w);
    // Autocorrelation R(d) = sum_q m(q) m(q + d) and cross term c(s) = sum_q m(q) g(q + s).
    let mut r = vec![0.0; n];
    let mut c = vec![0.0; n];
    for (m, g) in [(&gm.gx, &gy.gx), (&gm.gy, &gy.gy)] {
        let (m, g) = (m.data(), g.data());
        for dy in 0..h {
            for dx in 0..w {
                let (mut acc_r, mut acc_c) = (0.0, 0.0);
                for qy in 0..h {
                    for qx in 0..w {
                        let mq = m[qy * w + qx];
                        acc_r += mq * m[idx(qx + dx, qy + dy)];
                        acc_c += mq * g[idx(qx + dx, qy + dy)];
                    }
                }
                r[dy * w + dx] += acc_r;
                c[dy * w + dx] += acc_c;
            }
        }
    }
    let a = DMatrix::from_fn(n, n, |s, t| {
        let (sy, sx) = (s / w, s % w);
        let (ty, tx) = (t / w, t % w);
        let d = idx(sx + w - tx, sy + h - ty);
        r[d] + if s == t { lambda } else { 0.0 }
    });
    let b = DVector::from_vec(c);
    a.cholesky().expect("regularized normal matrix is positive definite").solve(&b).as_slice().to_vec()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let x = random_image(32, 32, &mut rng);
        let k = Kernel::new(5, (0..25).map(|_| rng.random::<f64>()).collect()).unwrap().normalized().unwrap();
        let mut y = conv2_fft(&x, &k);
        y.data_mut().iter_mut().for_each(|v| *v += 0.01 * (rng.random::<f64>() - 0.5));
        let (gy, gm) = (gradients(&y).unwrap(), gradients(&x).unwrap());
        let lambda = 0.0003 * 1024.0;
        let fast = solve_kernel_full(&gy, &gm, lambda).unwrap();
        let dense = dense_kernel(&gy, &gm, lambda);
        worst = worst.max(fast.iter().zip(&dense).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    Outcome {
        pass: worst <= 1e-6,
        detail: format!("max abs difference {worst:.2e} over 20 instances, limit 1e-6"),
    }
}

/// Periodic forward-difference matrices.
fn difference_matrices(w: usize, h: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = w * h;
    let mut gx = DMatrix::zeros(n, n);
    let mut gy = DMatrix::zeros(n, n);
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            gx[(p, p)] -= 1.0;
            gx[(p, y * w + (x + 1) % w)] += 1.0;
            gy[(p, p)] -= 1.0;
            gy[(p, ((y + 1) % h) * w + x)] += 1.0;
        }
    }
    (gx, gy)
}

/// Periodic convolution matrix, `(H x)(p) = sum_s k(s) x(p - s)`.
fn convolution_matrix(k: &Kernel, w: usize, h: usize) -> DMatrix<f64> {
    let r = k.radius() as isize;
    let mut m = DMatrix::zeros(w * h, w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            for sy in -r..=r {
                for sx in -r..=r {
                    let q = (y - sy).rem_euclid(h as isize) as usize * w + (x - sx).rem_euclid(w as isize) as usize;
                    m[(y as usize * w + x as usize, q)] += k.get((sy + r) as usize, (sx + r) as usize);
                }
            }
        }
    }
    m
}

fn scatter(targets: &PatchMatrix, at: &[PatchIndex], side: usize, w: usize, n: usize) -> DVector<f64> {
    let mut out = DVector::zeros(n);
    let r = side / 2;
    for (j, c) in at.iter().enumerate() {
        for dy in 0..side {
            for dx in 0..side {
                out[(c.y + dy - r) * w + c.x + dx - r] += targets.column(j)[dy * side + dx];
            }
        }
    }
    out
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (w, h) = (16, 16);
    let n = w * h;
    let (gxm, gym) = difference_matrices(w, h);
    let g = gxm.transpose() * &gxm + gym.transpose() * &gym;
    let cfg = EstimationConfig {
        bicg: BicgOptions { tolerance: 1e-14, max_iterations: 5000 },
        ..Default::default()
    };
    let side = cfg.patch_side;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let y = random_image(w, h, &mut rng);
        let x_prev = random_image(w, h, &mut rng);
        let k = Kernel::new(3, (0..9).map(|_| rng.random::<f64>()).collect()).unwrap().normalized().unwrap();
        let atoms: Vec<f64> = (0..25 * 40).map(|_| rng.random::<f64>() - 0.5).collect();
        let dict = Dictionary::from_atoms(25, atoms).unwrap();
        let mut centers = valid_centers(w, h, side);
        let mut bits = vec![false; n];
        for _ in 0..10 {
            let c = centers.swap_remove(rng.random_range(0..centers.len()));
            bits[c.y * w + c.x] = true;
        }
        let mask = EdgeMask::from_bits(w, h, bits).unwrap();
        let targets: PriorTargets = compute_prior_targets(&x_prev, &dict, &mask, &cfg).unwrap();
        let nonlocal = targets.nonlocal.as_ref().expect("16x16 keeps the cross-scale term");

        let grad_y = gradients(&y).unwrap();
        let (fast, _) = solve_latent(&grad_y, &k, &x_prev, &targets, &cfg).unwrap();

        let hm = convolution_matrix(&k, w, h);
        let scale = n as f64 / targets.indices.len() as f64;
        let ones = PatchMatrix::from_columns(25, vec![1.0; 25 * targets.indices.len()]).unwrap();
        let cover = scatter(&ones, &targets.indices, side, w, n);
        let mut a = (hm.transpose() * &hm + DMatrix::identity(n, n) * cfg.lambda_g) * &g;
        for i in 0..n {
            a[(i, i)] += (cfg.lambda_c + cfg.lambda_s) * scale * cover[i];
        }
        let yv = DVector::from_column_slice(y.data());
        let b = hm.transpose() * (&g * yv)
            + scatter(&targets.sparse, &targets.indices, side, w, n) * (cfg.lambda_c * scale)
            + scatter(nonlocal, &targets.indices, side, w, n) * (cfg.lambda_s * scale);
        let dense = a.lu().solve(&b).expect("system is nonsingular");
        worst = worst.max(fast.data().iter().zip(dense.iter()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max));
    }
    Outcome {
        pass: worst <= 1e-5,
        detail: format!("max abs difference {worst:.2e} over 20 instances, limit 1e-5"),
    }
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let x = random_image(32, 32, &mut rng);
        let truth = motion_kernel(5, seed).unwrap().project().unwrap();
        let y = conv2_fft(&x, &truth);
        let k = update_kernel(&gradients(&y).unwrap(), &gradients(&x).unwrap(), 1e-8, 5).unwrap();
        worst = worst.max(k.weights().iter().zip(truth.weights()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    Outcome {
        pass: worst <= 1e-3,
        detail: format!("max abs tap error {worst:.2e} over 5 kernels, limit 1e-3"),
    }
}

fn criterion_4() -> Outcome {
    let cfg = EstimationConfig { kernel_size: END_TO_END_KERNEL_SIZE, ..Default::default() };
    let rc = RestoreConfig::default();
    let mut ratios = Vec::new();
    let mut slowest: f64 = 0.0;
    for (name, size, seed) in END_TO_END {
        let t = Instant::now();
        let x = data(name);
        let truth = motion_kernel(size, seed).unwrap();
        let y = blur_image(&x, &truth, 1.0, seed + 100).unwrap();
        let est = estimate(&y, &cfg).unwrap().kernel;
        let aligned = align_kernel(&est, &truth).unwrap();
        let er = error_ratio(&x, &deconvolve(&y, &aligned, &rc).unwrap(), &deconvolve(&y, &truth, &rc).unwrap()).unwrap();
        slowest = slowest.max(t.elapsed().as_secs_f64());
        ratios.push(format!("{name} {er:.2}"));
        if er <= 3.0 {
            ratios.last_mut().unwrap().push('*');
        }
    }
    let ok = ratios.iter().filter(|r| r.ends_with('*')).count();
    Outcome {
        pass: ok >= 4 && slowest <= 600.0,
        detail: format!(
            "{ok}/5 with ER <= 3 (need 4): {}; slowest image {slowest:.0} s",
            ratios.join(", ")
        ),
    }
}

fn criterion_5() -> Outcome {
    let cfg = EstimationConfig { kernel_size: 17, ..Default::default() };
    let mut worst: f64 = 1.0;
    let mut parts = Vec::new();
    for name in ["camera", "coins", "astronaut"] {
        let k = estimate(&data(name), &cfg).unwrap().kernel;
        let c = k.normalized_correlation(&Kernel::delta(k.size()).unwrap());
        parts.push(format!("{name} {c:.3}"));
        worst = worst.min(c);
    }
    Outcome {
        pass: worst >= 0.95,
        detail: format!("correlation with the delta kernel: {}; limit 0.95", parts.join(", ")),
    }
}

fn criterion_6_and_7() -> (Outcome, Outcome) {
    let cfg = EstimationConfig::default();
    let blurs: Vec<Kernel> = [2, 3, 5].iter().map(|&k| Kernel::box_blur(k).unwrap()).collect();
    let mut order_ok = true;
    let mut edge_ok = true;
    let mut order_detail = Vec::new();
    let mut edge_detail = Vec::new();
    for name in PROBE_IMAGES {
        let r = probe_regularizers(&data(name), &blurs, &cfg).unwrap();
        let c: Vec<f64> = r.rows.iter().map(|row| row.reg_c).collect();
        let s: Vec<f64> = r.rows.iter().map(|row| row.reg_s).collect();
        let dec = |v: &[f64]| v.windows(2).all(|p| p[0] > p[1]);
        order_ok &= dec(&c) && dec(&s);
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(">");
        order_detail.push(format!("{name} c {} s {}", fmt(&c), fmt(&s)));
        for set in &r.sets {
            edge_ok &= set.r_s_on_edges >= set.r_s_fraction;
            edge_detail.push(format!("{name} {} {:.2}/{:.2}", set.label, set.r_s_on_edges, set.r_s_fraction));
        }
    }
    (
        Outcome { pass: order_ok, detail: order_detail.join("; ") },
        Outcome {
            pass: edge_ok,
            detail: format!("|R_s & M|/|M| vs |R_s|/N: {}", edge_detail.join(", ")),
        },
    )
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut failed = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failed.push(name.to_string());
        }
    };

    // Exact recovery of 4-sparse vectors over the canonical basis.
    let id = Dictionary::identity(25);
    let mut omp_ok = true;
    for _ in 0..50 {
        let mut v = vec![0.0; 25];
        for _ in 0..4 {
            v[rng.random_range(0..25)] = rng.random::<f64>() + 0.5;
        }
        let code = omp_encode(&id, &v, 4).unwrap();
        omp_ok &= code.reconstruct(&id).iter().zip(&v).all(|(a, b)| (a - b).abs() <= 1e-12);
    }
    check("omp exact recovery", omp_ok);

    // K-SVD objective never increases.
    let pool = PatchMatrix::from_columns(25, (0..25 * 600).map(|_| rng.random::<f64>()).collect()).unwrap();
    let rep = ksvd_train(&pool, &KsvdOptions { atoms: 40, sweeps: 6, ..Default::default() }).unwrap();
    check(
        "ksvd monotone",
        rep.objective.windows(2).all(|p| p[1] <= p[0] * (1.0 + 1e-12)),
    );

    // Non-local weights form a convex combination.
    let mut conv_ok = true;
    for _ in 0..50 {
        let d: Vec<f64> = (0..rng.random_range(1..8)).map(|_| 10.0 * rng.random::<f64>()).collect();
        let wts = weights_from_distances(&d, 2.5).unwrap();
        conv_ok &= wts.iter().all(|&x| x >= 0.0) && (wts.iter().sum::<f64>() - 1.0).abs() <= 1e-12;
    }
    check("non-local convexity", conv_ok);

    // Adjointness of patch extraction, convolution and differences.
    let x = random_image(20, 17, &mut rng);
    let z = random_image(20, 17, &mut rng);
    let idx: Vec<PatchIndex> = valid_centers(20, 17, 5).into_iter().filter(|_| rng.random::<f64>() < 0.3).collect();
    let p = PatchMatrix::from_columns(25, (0..25 * idx.len()).map(|_| rng.random::<f64>()).collect()).unwrap();
    let lhs = dot(extract_patches(&x, 5, &idx).unwrap().as_slice(), p.as_slice());
    let rhs = dot(x.data(), accumulate_patches(&p, &idx, 5, (20, 17)).unwrap().0.data());
    check("patch adjoint", (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    let k = Kernel::new(5, (0..25).map(|_| rng.random::<f64>()).collect()).unwrap();
    let lhs = dot(conv2(&x, &k, Boundary::Periodic).unwrap().data(), z.data());
    let rhs = dot(x.data(), correlate2(&z, &k, Boundary::Periodic).unwrap().data());
    check("convolution adjoint", (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    let gz = gradients(&z).unwrap();
    let gx = gradients(&x).unwrap();
    let lhs = dot(gx.gx.data(), gz.gx.data()) + dot(gx.gy.data(), gz.gy.data());
    let rhs = dot(x.data(), gradients_adjoint(&gz).unwrap().data());
    check("difference adjoint", (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));

    // Mask cardinality on distinct responses.
    let img = random_image(40, 30, &mut rng);
    let m = salient_edge_mask(&img, 0.02, &Default::default(), 5).unwrap();
    let eligible = valid_centers(40, 30, 5).len();
    check("mask cardinality", m.count() == (0.02 * eligible as f64).round() as usize);

    // Threshold schedule.
    let mut tau = init_threshold(&gradients(&data("camera")).unwrap(), 25, 2.0).unwrap();
    let tau0 = tau.tau;
    let mut sched_ok = tau0 > 0.0;
    for k in 1..=14 {
        tau.advance();
        sched_ok &= (tau.tau - tau0 / 1.1f64.powi(k)).abs() <= 1e-12 * tau0;
    }
    check("threshold schedule", sched_ok);

    // Projection invariants.
    let mut proj_ok = true;
    for _ in 0..50 {
        let raw = Kernel::new(7, (0..49).map(|_| rng.random::<f64>() - 0.3).collect()).unwrap();
        let pk = raw.project().unwrap();
        let peak = pk.weights().iter().cloned().fold(0.0, f64::max);
        proj_ok &= pk.is_normalized()
            && pk.weights().iter().all(|v| v.is_finite() && (*v == 0.0 || *v >= peak * 0.05 - 1e-15));
    }
    check("projection invariants", proj_ok);

    // Bit-identical estimates across thread counts.
    let sharp = data("coins").crop(80, 80, 72, 72).unwrap();
    let y = blur_image(&sharp, &motion_kernel(5, 9).unwrap(), 1.0, 9).unwrap();
    let cfg = EstimationConfig { kernel_size: 7, inner_iters: 4, seed: 3, ..Default::default() };
    let runs: Vec<Kernel> = [1, 2, 4]
        .iter()
        .map(|&t| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap();
            pool.install(|| estimate(&y, &cfg).unwrap().kernel)
        })
        .collect();
    check("thread-count determinism", runs.windows(2).all(|p| p[0] == p[1]));

    Outcome {
        pass: failed.is_empty(),
        detail: if failed.is_empty() {
            "omp recovery, k-svd monotonicity, weight convexity, adjoints at 1e-10, mask cardinality, \
             threshold schedule, projection invariants, thread-count determinism"
                .into()
        } else {
            format!("failed: {}", failed.join(", "))
        },
    }
}

#[test]
fn acceptance_criteria() {
    let mut verdicts = Vec::new();
    verdicts.push(report(1, "kernel-update oracle", || {
        let t = Instant::now();
        let mut o = criterion_1();
        o.pass &= t.elapsed().as_secs_f64() < 10.0;
        o.detail.push_str(", runtime limit 10 s");
        o
    }));
    verdicts.push(report(2, "latent-update oracle", || {
        let t = Instant::now();
        let mut o = criterion_2();
        o.pass &= t.elapsed().as_secs_f64() < 30.0;
        o.detail.push_str(", runtime limit 30 s");
        o
    }));
    verdicts.push(report(3, "noiseless kernel recovery", criterion_3));
    verdicts.push(report(4, "end-to-end error ratio", criterion_4));
    verdicts.push(report(5, "delta sanity", criterion_5));
    // Both criteria come from the same probe runs, timed under criterion 6.
    let mut seven = None;
    verdicts.push(report(6, "probe ordering", || {
        let (six, s) = criterion_6_and_7();
        seven = Some(s);
        six
    }));
    verdicts.push(report(7, "edge concentration", || seven.take().expect("probes ran")));
    verdicts.push(report(8, "component properties", criterion_8));
    let failed: Vec<usize> = verdicts.iter().enumerate().filter(|(_, &ok)| !ok).map(|(i, _)| i + 1).collect();
    let summary = format!("acceptance: {} of {} criteria pass; failing: {failed:?}\n", verdicts.len() - failed.len(), verdicts.len());
    let _ = std::io::stderr().write_all(summary.as_bytes());
    if std::env::var("DEBLUR_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        assert!(failed.is_empty(), "failed criteria: {failed:?}");
    }
}
