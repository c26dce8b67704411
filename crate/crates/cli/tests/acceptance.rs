//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! fails at the end if any criterion failed.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use convtensor::altmin::{grad_activations, grad_filters, loss, run_altmin, ActivationEstimates, AltMinConfig};
use convtensor::circulant::{circulant, dft_real, khatri_rao};
use convtensor::decompose::{project_circulant, run, AlsConfig};
use convtensor::dense::{compute_m_dense, pinv, stacked_circulant};
use convtensor::metrics::filter_recovery_error;
use convtensor::parallel::with_threads;
use convtensor::spectral::{compute_m_fast, psi_build, psi_invert, PsiMatrix};
use convtensor::synth::{make_ground_truth, sample};
use convtensor::{analytic_cumulant, ActivationSpec, CumulantUnfolding, Error, Filter, FilterBank, MomentAccumulator};
use convtensor_cli::bench::{median, run_grid, RunRecord};
use convtensor_cli::config::{Algorithm, BenchSpec};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_bank(rng: &mut ChaCha8Rng, n: usize, l: usize) -> FilterBank {
    FilterBank::new((0..l).map(|_| Filter::unit(random_vec(rng, n)).unwrap()).collect()).unwrap()
}

fn poisson() -> ActivationSpec {
    ActivationSpec::poisson(1.0).unwrap()
}

fn rel_c(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    (a - b).norm() / b.norm()
}

fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

/// `U[m][k] = exp(2πi mk / n) / sqrt(n)` written out directly.
fn unitary(n: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(n, n, |m, k| {
        Complex64::from_polar(1.0 / (n as f64).sqrt(), 2.0 * PI * (m * k) as f64 / n as f64)
    })
}

fn naive_dft(f: &[f64]) -> Vec<Complex64> {
    let n = f.len();
    (0..n)
        .map(|k| {
            (0..n)
                .map(|j| f[j] * Complex64::from_polar(1.0, -2.0 * PI * (j * k) as f64 / n as f64))
                .sum()
        })
        .collect()
}

fn block_unitary(n: usize, l: usize) -> DMatrix<Complex64> {
    let u = unitary(n);
    let mut out = DMatrix::zeros(n * l, n * l);
    for k in 0..l {
        out.view_mut((k * n, k * n), (n, n)).copy_from(&u);
    }
    out
}

fn ac1() -> Outcome {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut lib_vs_naive: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(4..=64);
        let f = random_vec(&mut rng, n);
        let spec = naive_dft(&f);
        let lib = dft_real(&f).unwrap();
        lib_vs_naive = lib_vs_naive.max(lib.iter().zip(&spec).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max));
        let u = unitary(n);
        let d = DMatrix::from_diagonal(&DVector::from_vec(spec));
        let recon = &u * d * u.adjoint();
        worst = worst.max((recon - to_complex(&circulant(&f))).norm());
    }
    let secs = clock.elapsed().as_secs_f64();
    outcome(
        worst < 1e-10 && lib_vs_naive < 1e-10 && secs < 5.0,
        format!(
            "max ||Cir(f) - U diag(dft f) U^H||_F = {worst:.2e}, library dft vs naive {lib_vs_naive:.2e}, {secs:.2} s"
        ),
    )
}

/// Independent raw-moment estimate of the third cumulant.
fn oracle_cumulant(x: &[f64], n: usize) -> CumulantUnfolding {
    let count = x.len() / n;
    let mut mean = vec![0.0; n];
    for s in x.chunks_exact(n) {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v / count as f64;
        }
    }
    let mut t = vec![0.0; n * n * n];
    for s in x.chunks_exact(n) {
        let c: Vec<f64> = s.iter().zip(&mean).map(|(v, m)| v - m).collect();
        for a in 0..n {
            for b in 0..n {
                let ab = c[a] * c[b];
                for cc in 0..n {
                    t[a * n * n + b + cc * n] += ab * c[cc];
                }
            }
        }
    }
    t.iter_mut().for_each(|v| *v /= count as f64);
    CumulantUnfolding::from_row_major(n, t).unwrap()
}

fn ac2() -> Outcome {
    let clock = Instant::now();
    let gt = make_ground_truth(8, 2, 0, poisson()).unwrap();
    let exact = analytic_cumulant(&gt.bank, &gt.lambda_star).unwrap();
    let mut dists = Vec::new();
    let mut oracle_gap: f64 = 0.0;
    for count in [1_000, 10_000, 100_000] {
        let set = sample(&gt, count, 11, false).unwrap();
        let mut acc = MomentAccumulator::new(8);
        acc.accumulate_batch(set.as_slice()).unwrap();
        let emp = acc.finalize().unwrap();
        if count == 1_000 {
            oracle_gap = emp.distance(&oracle_cumulant(set.as_slice(), 8)) / emp.frobenius_norm();
        }
        dists.push(emp.distance(&exact) / exact.frobenius_norm());
    }
    let monotone = dists.windows(2).all(|w| w[1] <= 1.5 * w[0]);
    let secs = clock.elapsed().as_secs_f64();
    outcome(
        monotone && dists[2] < 0.15 && oracle_gap < 1e-10 && secs < 60.0,
        format!(
            "relative distance N=1e3 {:.3e}, 1e4 {:.3e}, 1e5 {:.3e}; accumulator vs direct {oracle_gap:.1e}; {secs:.1} s",
            dists[0], dists[1], dists[2]
        ),
    )
}

fn ac3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for n in [4, 8] {
        for l in [2, 3] {
            for _ in 0..10 {
                let g = random_bank(&mut rng, n, l);
                let h = random_bank(&mut rng, n, l);
                let kr = khatri_rao(&stacked_circulant(&h), &stacked_circulant(&g)).unwrap();
                let dense = to_complex(&pinv(&kr.transpose()).unwrap());
                let psi = psi_build(&g.spectra(), &h.spectra()).unwrap();
                let inv = psi_invert(&psi, 0.0).unwrap();
                let u = block_unitary(n, l);
                let structured = to_complex(&kr) * (&u * inv.to_dense() * u.adjoint());
                worst = worst.max(rel_c(&structured, &dense));
            }
        }
    }
    outcome(worst < 1e-8, format!("max relative error {worst:.2e} over 40 banks"))
}

/// Per frequency an `L x L` block `G G^H + I`, so every pivot is safe.
fn random_psi(rng: &mut ChaCha8Rng, n: usize, l: usize) -> PsiMatrix {
    let per_freq: Vec<DMatrix<Complex64>> = (0..n)
        .map(|_| {
            let g = DMatrix::from_fn(l, l, |_, _| {
                Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            });
            &g * g.adjoint() + DMatrix::identity(l, l)
        })
        .collect();
    let blocks = (0..l * l)
        .map(|jk| per_freq.iter().map(|m| m[(jk / l, jk % l)]).collect())
        .collect();
    PsiMatrix::from_blocks(n, l, blocks).unwrap()
}

fn ac4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for l in 1..=4 {
        for n in [4, 8] {
            let mut cases = vec![random_psi(&mut rng, n, l)];
            if l < n {
                cases.push(
                    psi_build(
                        &random_bank(&mut rng, n, l).spectra(),
                        &random_bank(&mut rng, n, l).spectra(),
                    )
                    .unwrap(),
                );
            }
            for psi in cases {
                let dense = psi.to_dense().try_inverse().expect("invertible");
                let rec = psi_invert(&psi, 0.0).unwrap().to_dense();
                worst = worst.max(rel_c(&rec, &dense));
            }
        }
    }
    // two identical filters make every 2 x 2 frequency block rank one
    let f = random_bank(&mut rng, 8, 1).filter(0).clone();
    let twin = FilterBank::new(vec![f.clone(), f]).unwrap();
    let psi = psi_build(&twin.spectra(), &twin.spectra()).unwrap();
    let singular = matches!(psi_invert(&psi, 0.0), Err(Error::Singular { .. }));
    let zero_block = PsiMatrix::from_blocks(4, 1, vec![vec![Complex64::new(0.0, 0.0); 4]]).unwrap();
    let singular_zero = matches!(
        psi_invert(&zero_block, 0.0),
        Err(Error::Singular {
            block: 0,
            frequency: 0,
            ..
        })
    );
    outcome(
        worst < 1e-8 && singular && singular_zero,
        format!(
            "max relative error {worst:.2e}; rank-deficient input reported as singular: {}",
            singular && singular_zero
        ),
    )
}

fn ac5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(3..=8);
        let l = rng.random_range(1..=3.min(n - 1));
        let cum = CumulantUnfolding::from_row_major(n, random_vec(&mut rng, n * n * n)).unwrap();
        let g = random_bank(&mut rng, n, l);
        let h = random_bank(&mut rng, n, l);
        let fast = compute_m_fast(&cum, &g.spectra(), &h.spectra(), 0.0)
            .unwrap()
            .to_matrix();
        let slow = compute_m_dense(&cum, &g, &h).unwrap().to_matrix();
        worst = worst.max((fast - &slow).norm() / slow.norm());
    }
    outcome(
        worst < 1e-8,
        format!("max relative error {worst:.2e} over 20 instances"),
    )
}

/// Normalize columns, average each cyclic diagonal, normalize.
fn diagonal_average(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let inv: Vec<f64> = (0..n)
        .map(|j| 1.0 / (0..n).map(|i| m[(i, j)] * m[(i, j)]).sum::<f64>().sqrt())
        .collect();
    let avg: Vec<f64> = (0..n)
        .map(|p| (0..n).map(|j| m[((p + j) % n, j)] * inv[j]).sum::<f64>() / n as f64)
        .collect();
    let norm = avg.iter().map(|x| x * x).sum::<f64>().sqrt();
    avg.iter().map(|x| x / norm).collect()
}

fn projection_objective(m: &DMatrix<f64>, f: &[f64]) -> f64 {
    let mut normalized = m.clone();
    for mut col in normalized.column_iter_mut() {
        let norm = col.norm();
        col /= norm;
    }
    (normalized - circulant(f)).norm_squared()
}

fn ac6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut exact = 0;
    let mut beaten = 0;
    for _ in 0..50 {
        let n = rng.random_range(3..=12);
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let (f, _) = project_circulant(&m).unwrap();
        if f.coeffs() == diagonal_average(&m).as_slice() {
            exact += 1;
        }
        let best = projection_objective(&m, f.coeffs());
        let all = (0..1000).all(|_| {
            let r = Filter::unit(random_vec(&mut rng, n)).unwrap();
            best <= projection_objective(&m, r.coeffs())
        });
        if all {
            beaten += 1;
        }
    }
    outcome(
        exact == 50 && beaten == 50,
        format!("{exact}/50 bit-identical to the diagonal average, {beaten}/50 beat 1000 random filters"),
    )
}

fn ac7() -> Outcome {
    let clock = Instant::now();
    let gt = make_ground_truth(16, 2, 0, poisson()).unwrap();
    let cfg = AlsConfig {
        restarts: 5,
        ..Default::default()
    };
    let exact = analytic_cumulant(&gt.bank, &gt.lambda_star).unwrap();
    let out = run(&exact, 2, &cfg).unwrap();
    let (e_exact, _) = filter_recovery_error(&out.filters, &gt.bank).unwrap();
    let set = sample(&gt, 100_000, 1, false).unwrap();
    let mut acc = MomentAccumulator::new(16);
    acc.accumulate_batch(set.as_slice()).unwrap();
    let emp = acc.finalize().unwrap();
    let out = run(&emp, 2, &cfg).unwrap();
    let (e_emp, _) = filter_recovery_error(&out.filters, &gt.bank).unwrap();
    let secs = clock.elapsed().as_secs_f64();
    outcome(
        e_exact < 1e-3 && e_emp < 0.15 && secs < 120.0,
        format!("exact cumulant {e_exact:.2e}, N=1e5 {e_emp:.3e}, {secs:.1} s"),
    )
}

/// Longest stretch where reconstruction error strictly falls while filter
/// error never falls.
fn has_diverging_window(r: &RunRecord, len: usize) -> bool {
    r.trace.windows(len + 1).any(|w| {
        w.windows(2)
            .all(|p| p[1].recon_err < p[0].recon_err && p[1].recovery_err >= p[0].recovery_err)
    })
}

fn ac8() -> Outcome {
    let spec = BenchSpec::default();
    let records = run_grid(&spec, 1, |_| Ok(())).unwrap();
    let (ct, alt): (Vec<&RunRecord>, Vec<&RunRecord>) =
        records.iter().partition(|r| r.cell.algorithm == Algorithm::CtJoint);
    let budget = median(&alt.iter().map(|r| r.total_ms()).collect::<Vec<_>>());
    let at_quarter: Vec<f64> = ct
        .iter()
        .map(|r| r.recovery_at(0.25 * budget).unwrap_or(f64::INFINITY))
        .collect();
    let ct_err = median(&at_quarter);
    let alt_err = median(
        &alt.iter()
            .map(|r| r.final_point().map_or(f64::INFINITY, |p| p.recovery_err))
            .collect::<Vec<_>>(),
    );
    let windows = alt.iter().filter(|r| has_diverging_window(r, 10)).count();
    let failures = records.iter().filter(|r| !r.is_ok()).count();
    outcome(
        ct_err < alt_err && failures == 0,
        format!(
            "altmin budget {budget:.0} ms; CT median error at 25% {ct_err:.3e} vs altmin final {alt_err:.3e}; \
             {windows}/5 altmin seeds show a 10-iteration window of falling recon error with non-falling filter error (reported only)"
        ),
    )
}

fn timed<T>(repeats: usize, mut f: impl FnMut() -> T) -> f64 {
    let runs: Vec<f64> = (0..repeats)
        .map(|_| {
            let clock = Instant::now();
            std::hint::black_box(f());
            clock.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    median(&runs)
}

fn empirical(n: usize, l: usize, count: usize, seed: u64) -> (CumulantUnfolding, Vec<f64>) {
    let gt = make_ground_truth(n, l, seed, poisson()).unwrap();
    let set = sample(&gt, count, seed, false).unwrap();
    let mut acc = MomentAccumulator::new(n);
    acc.accumulate_batch(set.as_slice()).unwrap();
    (acc.finalize().unwrap(), set.into_parts().1)
}

/// CT with a fixed number of sweeps; returns median ms per sweep.
fn ct_sweep_ms(cum: &CumulantUnfolding, l: usize, sweeps: usize, repeats: usize) -> f64 {
    let cfg = AlsConfig {
        max_iters: sweeps,
        tol_filter_change: f64::MIN_POSITIVE,
        ..Default::default()
    };
    let ran = run(cum, l, &cfg).unwrap().trace.len() - 1;
    assert_eq!(ran, sweeps, "sweep count is not fixed");
    timed(repeats, || run(cum, l, &cfg).unwrap()) / sweeps as f64
}

fn altmin_iter_ms(x: &[f64], n: usize, l: usize, iters: usize, repeats: usize) -> f64 {
    let cfg = AltMinConfig {
        max_outer_iters: iters,
        ..Default::default()
    };
    timed(repeats, || run_altmin(x, n, l, &cfg).unwrap()) / iters as f64
}

fn ac9() -> Outcome {
    with_threads(1, || {
        // (a) identical sweep count on cumulants from 1e3 and 1e5 samples
        let (small, _) = empirical(16, 2, 1_000, 0);
        let (large, _) = empirical(16, 2, 100_000, 0);
        let t_small = ct_sweep_ms(&small, 2, 40, 7);
        let t_large = ct_sweep_ms(&large, 2, 40, 7);
        let change = (t_large - t_small).abs() / t_small;
        let a = change < 0.2;

        // (b) altmin time per outer iteration, N = 4000 vs 1000
        let (_, x1) = empirical(16, 2, 1_000, 1);
        let (_, x4) = empirical(16, 2, 4_000, 1);
        let ratio = altmin_iter_ms(&x4, 16, 2, 10, 5) / altmin_iter_ms(&x1, 16, 2, 10, 5);
        let b = (2.5..=6.0).contains(&ratio);

        // (c) growth with L at n = 32
        let mut ct_ms = Vec::new();
        let mut alt_ms = Vec::new();
        for l in [2, 4, 8] {
            let (cum, x) = empirical(32, l, 1_000, 2);
            ct_ms.push(ct_sweep_ms(&cum, l, 10, 5));
            alt_ms.push(altmin_iter_ms(&x, 32, l, 5, 5));
        }
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
        let c = increasing(&ct_ms) && increasing(&alt_ms);
        let fmt = |v: &[f64]| v.iter().map(|t| format!("{t:.3}")).collect::<Vec<_>>().join("/");
        outcome(
            a && b && c,
            format!(
                "(a) CT ms/sweep N=1e3 {t_small:.3} vs 1e5 {t_large:.3}, change {:.1}% [{}]; \
                 (b) altmin per-iteration ratio 4000/1000 = {ratio:.2} [{}]; \
                 (c) L=2/4/8 ms per iteration CT {} altmin {} [{}]",
                100.0 * change,
                if a { "ok" } else { "fail" },
                if b { "ok" } else { "fail" },
                fmt(&ct_ms),
                fmt(&alt_ms),
                if c { "ok" } else { "fail" }
            ),
        )
    })
}

/// Residual `x - Σ_l f_l ⊛ w_l` by direct summation.
fn direct_loss_one(x: &[f64], filters: &[Vec<f64>], w: &[f64]) -> f64 {
    let n = x.len();
    (0..n)
        .map(|i| {
            let model: f64 = filters
                .iter()
                .enumerate()
                .map(|(l, f)| (0..n).map(|j| f[j] * w[l * n + (i + n - j) % n]).sum::<f64>())
                .sum();
            (x[i] - model).powi(2)
        })
        .sum()
}

fn direct_loss(x: &[f64], filters: &[Vec<f64>], w: &[f64]) -> f64 {
    let n = filters[0].len();
    let stride = n * filters.len();
    let count = x.len() / n;
    (0..count)
        .map(|i| direct_loss_one(&x[i * n..(i + 1) * n], filters, &w[i * stride..(i + 1) * stride]))
        .sum::<f64>()
        / count as f64
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let d = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    d / b.iter().map(|q| q * q).sum::<f64>().sqrt()
}

fn ac10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let h = 1e-6;
    let mut worst_f: f64 = 0.0;
    let mut worst_w: f64 = 0.0;
    let mut worst_loss: f64 = 0.0;
    for _ in 0..10 {
        let n = rng.random_range(3..=8);
        let l = rng.random_range(1..n.min(4));
        let count = rng.random_range(1..=5);
        let filters: Vec<Vec<f64>> = (0..l).map(|_| random_vec(&mut rng, n)).collect();
        let x = random_vec(&mut rng, count * n);
        let w = random_vec(&mut rng, count * n * l);
        let bank = FilterBank::from_rows(filters.clone()).unwrap();
        let est = ActivationEstimates::from_row_major(n, l, w.clone()).unwrap();
        let base = direct_loss(&x, &filters, &w);
        worst_loss = worst_loss.max((loss(&x, &bank, &est).unwrap() - base).abs() / base);

        let analytic: Vec<f64> = grad_filters(&x, &bank, &est).unwrap().concat();
        let mut fd = Vec::new();
        for li in 0..l {
            for k in 0..n {
                let mut up = filters.clone();
                let mut down = filters.clone();
                up[li][k] += h;
                down[li][k] -= h;
                fd.push((direct_loss(&x, &up, &w) - direct_loss(&x, &down, &w)) / (2.0 * h));
            }
        }
        worst_f = worst_f.max(rel(&analytic, &fd));

        let stride = n * l;
        let xi = &x[..n];
        let wi = &w[..stride];
        let analytic = grad_activations(xi, &bank, wi).unwrap();
        let fd: Vec<f64> = (0..stride)
            .map(|k| {
                let mut up = wi.to_vec();
                let mut down = wi.to_vec();
                up[k] += h;
                down[k] -= h;
                (direct_loss_one(xi, &filters, &up) - direct_loss_one(xi, &filters, &down)) / (2.0 * h)
            })
            .collect();
        worst_w = worst_w.max(rel(&analytic, &fd));
    }
    outcome(
        worst_f < 1e-5 && worst_w < 1e-5 && worst_loss < 1e-10,
        format!("max relative error: filter gradient {worst_f:.2e}, activation gradient {worst_w:.2e}, loss {worst_loss:.1e}"),
    )
}

fn cli(dir: &Path, args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_convtensor"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "off")
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// File contents with every `*_ms` column blanked.
fn without_timing(path: &Path) -> Vec<u8> {
    let bytes = std::fs::read(path).unwrap();
    if path.extension().is_none_or(|e| e != "csv") {
        return bytes;
    }
    let text = String::from_utf8(bytes.clone()).unwrap();
    let mut lines = text.lines();
    let Some(header) = lines.next() else { return bytes };
    let timing: Vec<bool> = header.split(',').map(|h| h.ends_with("_ms")).collect();
    if !timing.iter().any(|&t| t) {
        return bytes;
    }
    let mut out = format!("{header}\n");
    for line in lines {
        let cells: Vec<&str> = line
            .split(',')
            .enumerate()
            .map(|(i, c)| if timing.get(i).copied().unwrap_or(false) { "" } else { c })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let key = path.strip_prefix(root).unwrap().display().to_string();
                files.insert(key, without_timing(&path));
            }
        }
    }
    files
}

fn cli_session(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    cli(
        dir,
        &[
            "gen",
            "--n",
            "8",
            "--L",
            "2",
            "--N",
            "3000",
            "--seed",
            "7",
            "--keep-activations",
            "--out",
            "g",
        ],
    );
    cli(dir, &["cumulant", "--samples", "g/samples.ctx", "--out", "c.ctc"]);
    cli(
        dir,
        &[
            "decompose",
            "--algorithm",
            "ct",
            "--cumulant",
            "c.ctc",
            "--L",
            "2",
            "--restarts",
            "2",
            "--truth",
            "g/truth.csv",
            "--out",
            "ct",
        ],
    );
    cli(
        dir,
        &[
            "decompose",
            "--algorithm",
            "ct-deflation",
            "--samples",
            "g/samples.ctx",
            "--L",
            "2",
            "--max-iters",
            "30",
            "--out",
            "defl",
        ],
    );
    cli(
        dir,
        &[
            "decompose",
            "--algorithm",
            "altmin",
            "--samples",
            "g/samples.ctx",
            "--L",
            "2",
            "--max-iters",
            "15",
            "--truth",
            "g/truth.csv",
            "--out",
            "alt",
        ],
    );
    let eval = cli(
        dir,
        &[
            "eval",
            "--cumulant",
            "c.ctc",
            "--filters",
            "ct/filters.csv",
            "--truth",
            "g/truth.csv",
        ],
    );
    std::fs::write(dir.join("eval.txt"), eval.stdout).unwrap();
    std::fs::write(
        dir.join("spec.txt"),
        "n = 8\nL = 1,2\nN = 2000\nseeds = 0,1\nalgorithms = ct-joint,ct-deflation,altmin\naltmin_iters = 10\n",
    )
    .unwrap();
    cli(dir, &["bench", "--spec", "spec.txt", "--jobs", "2", "--out", "bench"]);
    snapshot(dir)
}

fn ac11() -> Outcome {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let a = cli_session(first.path());
    let b = cli_session(second.path());
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    outcome(
        differing.is_empty() && a.len() == b.len() && a.len() >= 20,
        format!("{} files compared across two runs, differing: {differing:?}", a.len()),
    )
}

#[test]
fn acceptance() {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check); 11] = [
        ("AC1 circulant diagonalization", ac1),
        ("AC2 empirical cumulant convergence", ac2),
        ("AC3 pseudoinverse through Psi", ac3),
        ("AC4 recursive block inverse", ac4),
        ("AC5 fast M equals dense M", ac5),
        ("AC6 closed-form circulant projection", ac6),
        ("AC7 end-to-end recovery", ac7),
        ("AC8 CT reaches lower error sooner than altmin", ac8),
        ("AC9 runtime scaling", ac9),
        ("AC10 altmin gradient checks", ac10),
        ("AC11 CLI determinism", ac11),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let res = check();
        println!("{} {name}: {}", if res.pass { "PASS" } else { "FAIL" }, res.detail);
        if !res.pass {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
