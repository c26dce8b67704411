//! Error metrics: relative cumulant reconstruction error, and filter
//! recovery error modulo cyclic shift, sign and permutation.

use std::time::{Duration, Instant};

use crate::circulant::{inverse_real, real_spectrum, FilterBank};
use crate::cumulant::{analytic_cumulant, CumulantUnfolding};
use crate::error::{invalid, Error, Result};
use crate::parallel;

/// `||C - F Λ (F ⊙ F)^T||_F / ||C||_F`.
pub fn reconstruction_error(cum: &CumulantUnfolding, bank: &FilterBank, lambda: &[f64]) -> Result<f64> {
    if bank.n() != cum.n() {
        return Err(invalid("filter length does not match the cumulant"));
    }
    let norm = cum.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::UndefinedMetric("reference cumulant is zero".into()));
    }
    Ok(cum.distance(&analytic_cumulant(bank, lambda)?) / norm)
}

/// Best match of estimate filters onto the truth: truth filter `l` is matched
/// by `sign[l] * shift(est[permutation[l]], shift[l])`.
#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    pub permutation: Vec<usize>,
    pub shifts: Vec<usize>,
    pub signs: Vec<i8>,
    pub residuals: Vec<f64>,
}

impl Alignment {
    pub fn mean(&self) -> f64 {
        self.residuals.iter().sum::<f64>() / self.residuals.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug)]
struct PairCost {
    residual: f64,
    shift: usize,
    sign: i8,
}

/// `min over s, sign of ||sign * shift_s(est) - truth||`. The shift and sign
/// come from one circular cross-correlation; the residual is then summed
/// directly, since `sqrt(|e|^2 + |t|^2 - 2c)` loses half the digits near a
/// perfect match.
fn pair_cost(est: &[f64], truth: &[f64]) -> PairCost {
    let n = est.len();
    let e = real_spectrum(est);
    let t = real_spectrum(truth);
    let spec: Vec<_> = e.iter().zip(&t).map(|(a, b)| a.conj() * b).collect();
    // corr[s] = <shift_s(est), truth> with shift_s(est)[i] = est[i - s]
    let corr = inverse_real(&spec);
    let (shift, c) = corr
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(s, &c)| (s, c))
        .expect("nonempty filters");
    let sign = if c < 0.0 { -1.0 } else { 1.0 };
    let residual = (0..n)
        .map(|i| (sign * est[(i + n - shift) % n] - truth[i]).powi(2))
        .sum::<f64>()
        .sqrt();
    PairCost {
        residual,
        shift,
        sign: sign as i8,
    }
}

/// Minimum-cost perfect matching on a square row-major cost matrix
/// (shortest augmenting paths with potentials, `O(k^3)`). Returns the column
/// assigned to each row.
pub fn min_cost_assignment(cost: &[f64], k: usize) -> Vec<usize> {
    assert_eq!(cost.len(), k * k, "cost matrix must be k x k");
    // 1-based internally; index 0 is the virtual source column.
    let mut u = vec![0.0; k + 1];
    let mut v = vec![0.0; k + 1];
    let mut row_of = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    for row in 1..=k {
        row_of[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[col0] = true;
            let r = row_of[col0];
            let mut delta = f64::INFINITY;
            let mut next = 0;
            for col in 1..=k {
                if used[col] {
                    continue;
                }
                let reduced = cost[(r - 1) * k + col - 1] - u[r] - v[col];
                if reduced < minv[col] {
                    minv[col] = reduced;
                    way[col] = col0;
                }
                if minv[col] < delta {
                    delta = minv[col];
                    next = col;
                }
            }
            for col in 0..=k {
                if used[col] {
                    u[row_of[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = next;
            if row_of[col0] == 0 {
                break;
            }
        }
        while col0 != 0 {
            let prev = way[col0];
            row_of[col0] = row_of[prev];
            col0 = prev;
        }
    }
    let mut assignment = vec![0; k];
    for col in 1..=k {
        assignment[row_of[col] - 1] = col - 1;
    }
    assignment
}

/// Mean matched residual and the alignment that achieves it.
pub fn filter_recovery_error(est: &FilterBank, truth: &FilterBank) -> Result<(f64, Alignment)> {
    if est.n() != truth.n() || est.len() != truth.len() {
        return Err(invalid(format!(
            "estimate is {} filters of length {}, truth is {} of length {}",
            est.len(),
            est.n(),
            truth.len(),
            truth.n()
        )));
    }
    let l = truth.len();
    let costs = parallel::map_range(l * l, |idx| pair_cost(est.filter(idx % l), truth.filter(idx / l)));
    let residuals: Vec<f64> = costs.iter().map(|c| c.residual).collect();
    let permutation = min_cost_assignment(&residuals, l);
    let picked: Vec<PairCost> = permutation.iter().enumerate().map(|(t, &e)| costs[t * l + e]).collect();
    let alignment = Alignment {
        shifts: picked.iter().map(|c| c.shift).collect(),
        signs: picked.iter().map(|c| c.sign).collect(),
        residuals: picked.iter().map(|c| c.residual).collect(),
        permutation,
    };
    Ok((alignment.mean(), alignment))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingRecord {
    pub label: String,
    pub runs: Vec<Duration>,
}

impl TimingRecord {
    pub fn median(&self) -> Duration {
        let mut sorted = self.runs.clone();
        sorted.sort();
        let k = sorted.len();
        if k % 2 == 1 {
            sorted[k / 2]
        } else {
            (sorted[k / 2 - 1] + sorted[k / 2]) / 2
        }
    }

    pub fn median_ms(&self) -> f64 {
        self.median().as_secs_f64() * 1e3
    }
}

/// Times `thunk` `repeats` times on the monotonic clock.
pub fn timing_probe<T>(label: &str, repeats: usize, mut thunk: impl FnMut() -> T) -> TimingRecord {
    let runs = (0..repeats.max(1))
        .map(|_| {
            let start = Instant::now();
            std::hint::black_box(thunk());
            start.elapsed()
        })
        .collect();
    TimingRecord {
        label: label.to_string(),
        runs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circulant::Filter;
    use crate::decompose::random_unit_bank;

    fn transform(bank: &FilterBank, shift: usize, negate: bool, perm: &[usize]) -> FilterBank {
        FilterBank::new(
            perm.iter()
                .map(|&k| {
                    let f = bank.filter(k).shifted(shift);
                    if negate {
                        f.negated()
                    } else {
                        f
                    }
                })
                .collect(),
        )
        .unwrap()
    }

    /// Every permutation, shift and sign, straight from the definition.
    fn brute_force(est: &FilterBank, truth: &FilterBank) -> f64 {
        let n = truth.n();
        let dist = |e: &Filter, t: &Filter| {
            let mut best = f64::INFINITY;
            for s in 0..n {
                for sign in [-1.0, 1.0] {
                    let d = e
                        .shifted(s)
                        .iter()
                        .zip(t.iter())
                        .map(|(a, b)| (sign * a - b).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    best = best.min(d);
                }
            }
            best
        };
        let direct = (dist(est.filter(0), truth.filter(0)) + dist(est.filter(1), truth.filter(1))) / 2.0;
        let swapped = (dist(est.filter(1), truth.filter(0)) + dist(est.filter(0), truth.filter(1))) / 2.0;
        direct.min(swapped)
    }

    #[test]
    fn identical_banks() {
        let truth = random_unit_bank(16, 3, 1).unwrap();
        let (err, al) = filter_recovery_error(&truth, &truth).unwrap();
        assert!(err < 1e-7, "{err}");
        assert_eq!(al.permutation, vec![0, 1, 2]);
        assert_eq!(al.shifts, vec![0, 0, 0]);
        assert_eq!(al.signs, vec![1, 1, 1]);
    }

    #[test]
    fn shifted_and_negated() {
        let truth = random_unit_bank(16, 2, 2).unwrap();
        let est = transform(&truth, 3, true, &[0, 1]);
        let (err, al) = filter_recovery_error(&est, &truth).unwrap();
        assert!(err < 1e-7, "{err}");
        // undoing a shift by 3 is a shift by n - 3
        assert_eq!(al.shifts, vec![13, 13]);
        assert_eq!(al.signs, vec![-1, -1]);
    }

    #[test]
    fn matches_exhaustive_search() {
        for seed in 0..10 {
            let truth = random_unit_bank(16, 2, seed).unwrap();
            let est = random_unit_bank(16, 2, seed + 100).unwrap();
            let (err, al) = filter_recovery_error(&est, &truth).unwrap();
            assert!((err - brute_force(&est, &truth)).abs() < 1e-10);
            assert!(al.residuals.iter().all(|&r| r >= 0.0));
            assert!(al.max() >= al.mean());
        }
    }

    #[test]
    fn invariant_under_ambiguity_group() {
        let truth = random_unit_bank(12, 3, 4).unwrap();
        let est = random_unit_bank(12, 3, 5).unwrap();
        let (base, _) = filter_recovery_error(&est, &truth).unwrap();
        for (shift, negate, perm) in [(1, false, [2, 0, 1]), (7, true, [1, 2, 0]), (0, true, [0, 2, 1])] {
            let (e1, _) = filter_recovery_error(&transform(&est, shift, negate, &perm), &truth).unwrap();
            let (e2, _) = filter_recovery_error(&est, &transform(&truth, shift, negate, &perm)).unwrap();
            assert!((e1 - base).abs() < 1e-10 && (e2 - base).abs() < 1e-10);
        }
    }

    #[test]
    fn assignment_matches_enumeration() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        fn perms(k: usize) -> Vec<Vec<usize>> {
            if k == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for p in perms(k - 1) {
                for pos in 0..k {
                    let mut q = p.clone();
                    q.insert(pos, k - 1);
                    out.push(q);
                }
            }
            out
        }
        for k in 1..=6 {
            for _ in 0..20 {
                let cost: Vec<f64> = (0..k * k).map(|_| rng.random_range(0.0..2.0)).collect();
                let total = |a: &[usize]| a.iter().enumerate().map(|(r, &c)| cost[r * k + c]).sum::<f64>();
                let best = perms(k).iter().map(|p| total(p)).fold(f64::INFINITY, f64::min);
                let got = min_cost_assignment(&cost, k);
                let mut seen = got.clone();
                seen.sort();
                assert_eq!(seen, (0..k).collect::<Vec<_>>());
                assert!((total(&got) - best).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn recovery_shape_mismatch() {
        let a = random_unit_bank(8, 2, 0).unwrap();
        let b = random_unit_bank(8, 3, 0).unwrap();
        assert!(filter_recovery_error(&a, &b).is_err());
    }

    #[test]
    fn reconstruction_examples() {
        let bank = random_unit_bank(6, 2, 3).unwrap();
        let lambda = vec![1.5; 12];
        let cum = analytic_cumulant(&bank, &lambda).unwrap();
        assert!(reconstruction_error(&cum, &bank, &lambda).unwrap() < 1e-10);
        assert!((reconstruction_error(&cum, &bank, &[0.0; 12]).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            reconstruction_error(&CumulantUnfolding::zeros(6), &bank, &lambda),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn reconstruction_matches_dense() {
        use crate::circulant::khatri_rao;
        use crate::dense::stacked_circulant;
        let bank = random_unit_bank(4, 2, 9).unwrap();
        let other = random_unit_bank(4, 2, 10).unwrap();
        let lambda = vec![0.3, 1.0, 2.0, 0.7, 1.1, 0.2, 0.9, 1.4];
        let cum = analytic_cumulant(&other, &[1.0; 8]).unwrap();
        let f = stacked_circulant(&bank);
        let model = &f
            * nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(lambda.clone()))
            * khatri_rao(&f, &f).unwrap().transpose();
        let dense = (cum.to_matrix() - model).norm() / cum.to_matrix().norm();
        assert!((reconstruction_error(&cum, &bank, &lambda).unwrap() - dense).abs() < 1e-10);
    }

    #[test]
    fn timing() {
        let noop = timing_probe("noop", 5, || ());
        assert_eq!(noop.runs.len(), 5);
        assert!(noop.median() < Duration::from_millis(1));
        let d = Duration::from_millis(20);
        let sleep = timing_probe("sleep", 3, || std::thread::sleep(d));
        let m = sleep.median();
        assert!(m >= d.mul_f64(0.8) && m <= d.mul_f64(1.5), "{m:?}");
    }
}
