//! Phantom generation, bootstrap resampling and the three studies.

pub mod bootstrap;
pub mod convergence;
pub mod phantom;
pub mod subsets;
pub mod t1;

pub use bootstrap::bootstrap_indices;
pub use convergence::{convergence_study, ConvergenceConfig, ConvergenceRow, Reference};
pub use phantom::{generate_phantom, sigma_for_snr, Generator, PhantomSpec};
pub use subsets::{subset_consistency, subset_partition, subset_partition_indices, SubsetConfig, SubsetReport};
pub use t1::{t1_experiment, T1Config, T1Report, VoxelMetrics};

/// Running mean and centred sum of squares; exact for constant input.
fn welford(values: &[f64]) -> (f64, f64) {
    let mut mu = 0.0;
    let mut m2 = 0.0;
    for (i, &x) in values.iter().enumerate() {
        let d = x - mu;
        mu += d / (i + 1) as f64;
        m2 += d * (x - mu);
    }
    (mu, m2)
}

/// Arithmetic mean; NaN for an empty slice.
pub(crate) fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    welford(values).0
}

/// Median (average of the middle pair for even length); NaN when empty.
pub(crate) fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Unbiased sample variance; NaN below two samples.
pub(crate) fn sample_variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return f64::NAN;
    }
    welford(values).1 / (values.len() - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
        assert!((sample_variance(&[1.0, 2.0, 3.0, 4.0]) - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(sample_variance(&[0.1, 0.1, 0.1]), 0.0);
        assert_eq!(mean(&[0.1; 7]), 0.1);
        assert!(sample_variance(&[1.0]).is_nan());
    }
}
