use convtensor::circulant::circulant;
use convtensor::cumulant::MomentAccumulator;
use convtensor::decompose::project_circulant;
use convtensor::dense::compute_m_dense;
use convtensor::formats::{read_cumulant, read_filters, write_cumulant, write_filters};
use convtensor::metrics::{filter_recovery_error, reconstruction_error};
use convtensor::spectral::{compute_m_fast, psi_build, psi_invert, PsiMatrix};
use convtensor::{analytic_cumulant, CumulantUnfolding, Filter, FilterBank};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bank_from(seed: u64, n: usize, l: usize) -> FilterBank {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FilterBank::new(
        (0..l)
            .map(|_| Filter::unit((0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
            .collect(),
    )
    .unwrap()
}

fn sizes() -> impl Strategy<Value = (usize, usize)> {
    (3usize..10).prop_flat_map(|n| (Just(n), 1..n.min(4)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn model_cumulant_ignores_shifts_and_order((n, l) in sizes(), seed in any::<u64>(), shift in 0usize..16) {
        let bank = bank_from(seed, n, l);
        let lambda = vec![1.3; n * l];
        let moved = FilterBank::new(bank.iter().rev().map(|f| f.shifted(shift % n)).collect()).unwrap();
        let a = analytic_cumulant(&bank, &lambda).unwrap();
        let b = analytic_cumulant(&moved, &lambda).unwrap();
        prop_assert!(a.distance(&b) <= 1e-12 * a.frobenius_norm());
        prop_assert!(a.asymmetry() <= 1e-12 * a.frobenius_norm());
        prop_assert!(reconstruction_error(&a, &moved, &lambda).unwrap() < 1e-12);
    }

    #[test]
    fn recovery_error_is_zero_on_the_orbit((n, l) in sizes(), seed in any::<u64>(), shift in 0usize..16, flips in any::<u8>()) {
        let truth = bank_from(seed, n, l);
        let est = FilterBank::new(
            truth
                .iter()
                .enumerate()
                .rev()
                .map(|(i, f)| {
                    let g = f.shifted((shift + i) % n);
                    if flips >> i & 1 == 1 { g.negated() } else { g }
                })
                .collect(),
        )
        .unwrap();
        let (err, align) = filter_recovery_error(&est, &truth).unwrap();
        prop_assert!(err < 1e-12, "{}", err);
        let mut perm = align.permutation.clone();
        perm.sort_unstable();
        prop_assert_eq!(perm, (0..l).collect::<Vec<_>>());
        let other = bank_from(seed ^ 0x5555, n, l);
        let (e, _) = filter_recovery_error(&other, &truth).unwrap();
        prop_assert!((0.0..=2.0f64.sqrt() + 1e-12).contains(&e));
    }

    #[test]
    fn fast_target_matches_dense((n, l) in sizes(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cum = CumulantUnfolding::from_row_major(n, (0..n * n * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let g = bank_from(seed.wrapping_add(1), n, l);
        let h = bank_from(seed.wrapping_add(2), n, l);
        let fast = compute_m_fast(&cum, &g.spectra(), &h.spectra(), 0.0).unwrap().to_matrix();
        let dense = compute_m_dense(&cum, &g, &h).unwrap().to_matrix();
        prop_assert!((fast - &dense).norm() <= 1e-7 * dense.norm());
    }

    #[test]
    fn psi_inverse_is_an_inverse((n, l) in sizes(), seed in any::<u64>()) {
        let g = bank_from(seed, n, l);
        let h = bank_from(seed.wrapping_add(7), n, l);
        let psi = psi_build(&g.spectra(), &h.spectra()).unwrap();
        let inv = psi_invert(&psi, 0.0).unwrap();
        let eye = PsiMatrix::identity(n, l).to_dense();
        prop_assert!((psi.mul(&inv).unwrap().to_dense() - &eye).norm() < 1e-6);
    }

    #[test]
    fn projection_fixes_scaled_circulants(n in 2usize..12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = bank_from(seed, n, 1).filter(0).clone();
        let scales = nalgebra::DVector::from_fn(n, |_, _| rng.random_range(0.1..5.0));
        let (g, obj) = project_circulant(&(circulant(&f) * nalgebra::DMatrix::from_diagonal(&scales))).unwrap();
        let dev = g.iter().zip(f.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(dev < 1e-12 && obj < 1e-20);
    }

    #[test]
    fn accumulator_merge_is_order_free(n in 2usize..6, split in 1usize..400, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..400 * n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut whole = MomentAccumulator::new(n);
        whole.accumulate_batch(&x).unwrap();
        let mut a = MomentAccumulator::new(n);
        let mut b = MomentAccumulator::new(n);
        a.accumulate_batch(&x[..split * n]).unwrap();
        b.accumulate_batch(&x[split * n..]).unwrap();
        b.merge(&a).unwrap();
        let (w, m) = (whole.finalize().unwrap(), b.finalize().unwrap());
        prop_assert_eq!(b.count(), 400);
        prop_assert!(w.distance(&m) <= 1e-12 * w.frobenius_norm().max(1e-300));
    }

    #[test]
    fn files_round_trip_byte_for_byte((n, l) in sizes(), seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let bank = bank_from(seed, n, l);
        let cum = analytic_cumulant(&bank, &vec![0.7; n * l]).unwrap();
        let (f1, f2, c1, c2) = (
            dir.path().join("a.csv"),
            dir.path().join("b.csv"),
            dir.path().join("a.ctc"),
            dir.path().join("b.ctc"),
        );
        write_filters(&f1, &bank).unwrap();
        let back = read_filters(&f1).unwrap();
        prop_assert_eq!(&back, &bank);
        write_filters(&f2, &back).unwrap();
        prop_assert_eq!(std::fs::read(&f1).unwrap(), std::fs::read(&f2).unwrap());
        write_cumulant(&c1, &cum).unwrap();
        write_cumulant(&c2, &read_cumulant(&c1).unwrap()).unwrap();
        prop_assert_eq!(std::fs::read(&c1).unwrap(), std::fs::read(&c2).unwrap());
    }
}
