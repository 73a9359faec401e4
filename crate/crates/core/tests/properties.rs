use mcrb_core::bounds::{congruence_metric, mcrb_sandwich};
use mcrb_core::estimation::{BoundsBox, FitOptions, Fitter, VoxelSeries};
use mcrb_core::experiments::{bootstrap_indices, subset_partition_indices};
use mcrb_core::matrix::Matrix2;
use mcrb_core::noise::{add_noise, NoiseKind, NoiseSpec, StreamId};
use mcrb_core::signal::{signal_curve, KineticParams, Protocol};
use proptest::prelude::*;

fn spd() -> impl Strategy<Value = Matrix2> {
    (0.1f64..10.0, 0.1f64..10.0, -0.9f64..0.9).prop_map(|(a, c, r)| Matrix2::new(a, r * (a * c).sqrt(), c))
}

fn pld_grid() -> impl Strategy<Value = Vec<f64>> {
    (proptest::bool::ANY, proptest::collection::vec(0.01f64..0.5, 4..30)).prop_map(|(zero, steps)| {
        let mut t = if zero { 0.0 } else { steps[0] };
        let mut out = vec![t];
        for s in &steps[1..] {
            t += s;
            out.push(t);
        }
        out
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn subset_partition_is_a_partition(plds in pld_grid()) {
        let n = plds.len();
        let (a, b) = subset_partition_indices(&plds).unwrap();
        prop_assert_eq!(a.len(), n.div_ceil(2));
        prop_assert_eq!(b.len(), n / 2);
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        if plds[0] == 0.0 {
            prop_assert!(a.contains(&0));
        }
    }

    #[test]
    fn correct_specification_gives_unit_congruence(a in spd(), m in 2usize..100) {
        let s = mcrb_sandwich(&(-a), &a, m).unwrap();
        let c = congruence_metric(&s.c_crb, &s.c_mcrb).unwrap();
        prop_assert!((c.kappa - 1.0).abs() < 1e-10);
        prop_assert!((c.lambda_max - 1.0).abs() < 1e-10);
    }

    #[test]
    fn congruence_is_invariant_to_joint_scaling(c in spd(), mm in spd(), e in -8i32..8) {
        let s = 10f64.powi(e);
        let base = congruence_metric(&c, &mm).unwrap();
        let scaled = congruence_metric(&c.scale(s), &mm.scale(s)).unwrap();
        prop_assert!((base.kappa - scaled.kappa).abs() <= 1e-10 * base.kappa);
        prop_assert!((base.lambda_min - scaled.lambda_min).abs() <= 1e-10 * base.lambda_max);
    }

    #[test]
    fn signal_is_non_negative_and_vanishes_at_zero_flow(f in 0.0f64..900.0, att in 0.0f64..2.0) {
        let p = Protocol::brain(1e-3);
        let c = signal_curve(KineticParams::new(f, att), &p);
        prop_assert!(c.values.iter().all(|v| *v >= 0.0));
        let z = signal_curve(KineticParams::new(0.0, att), &p);
        prop_assert!(z.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn noise_streams_are_reproducible(seed in any::<u64>(), v in 0u64..1000, r in 0u64..100) {
        let clean = signal_curve(KineticParams::new(60.0, 0.8), &Protocol::brain(1e-3));
        let spec = NoiseSpec::new(1e-3, NoiseKind::Rician, seed);
        let a = add_noise(&clean, &spec, StreamId::new(v, r, 0));
        prop_assert_eq!(&a, &add_noise(&clean, &spec, StreamId::new(v, r, 0)));
        prop_assert_ne!(&a, &add_noise(&clean, &spec, StreamId::new(v, r + 1, 0)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fit_ignores_repetition_order(seed in any::<u64>(), shift in 1usize..6) {
        let p = Protocol::brain(5e-4);
        let clean = signal_curve(KineticParams::new(70.0, 0.9), &p);
        let spec = NoiseSpec::new(5e-4, NoiseKind::Gaussian, seed);
        let reps: Vec<Vec<f64>> = (0..6).map(|r| add_noise(&clean, &spec, StreamId::new(0, r, 0)).values).collect();
        let mut rotated = reps.clone();
        rotated.rotate_left(shift);
        let fitter = Fitter::new(&p, &BoundsBox::brain(), &FitOptions::default()).unwrap();
        let a = fitter.fit(&VoxelSeries::from_repetitions(&reps).unwrap()).unwrap();
        let b = fitter.fit(&VoxelSeries::from_repetitions(&rotated).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn bootstrap_index_frequencies_are_uniform() {
    let m = 10;
    // 10^4 resamples of 10 indices = 10^5 draws
    let draws = bootstrap_indices(m, 10_000, 2024).unwrap();
    let mut counts = vec![0usize; m];
    for d in draws.iter().flatten() {
        counts[*d] += 1;
    }
    let total: usize = counts.iter().sum();
    assert_eq!(total, 100_000);
    for c in counts {
        let freq = c as f64 / total as f64;
        // within one percentage point of 1/m
        assert!((freq - 0.1).abs() <= 0.01, "frequency {freq}");
    }
}
