use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::BoundsContext;
use crate::error::{Error, Result};
use crate::estimation::{BoundsBox, FitOptions, Fitter};
use crate::experiments::{bootstrap_indices, mean, median, sample_variance};
use crate::io::dataset::VoxelDataset;
use crate::io::table::{Column, ExperimentTable, UNIT_ATT, UNIT_ATT2, UNIT_COUNT, UNIT_F, UNIT_F2, UNIT_NONE};
use crate::matrix::Matrix2;
use crate::signal::{KineticParams, Protocol};

/// What the bootstrap estimates are compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// Phantom truth maps.
    Truth,
    /// Fit using all repetitions of the dataset.
    FullFit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceConfig {
    pub ms: Vec<usize>,
    pub k: usize,
    pub seed: u64,
    pub reference: Reference,
    pub bounds: BoundsBox,
    pub fit: FitOptions,
}

impl ConvergenceConfig {
    pub fn new(ms: Vec<usize>, k: usize, seed: u64, reference: Reference, bounds: BoundsBox) -> Self {
        Self {
            ms,
            k,
            seed,
            reference,
            bounds,
            fit: FitOptions::default(),
        }
    }
}

/// Voxel-aggregated statistics for one repetition count.
///
/// Bias and variance use every voxel with a reference; eigenvalue summaries
/// pool the valid (voxel, bootstrap) pairs. Empty aggregates are NaN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub m: usize,
    pub bias_f: f64,
    pub bias_att: f64,
    pub abs_bias_f_mean: f64,
    pub abs_bias_att_mean: f64,
    pub abs_bias_f_median: f64,
    pub abs_bias_att_median: f64,
    pub var_f: f64,
    pub var_att: f64,
    pub var_f_median: f64,
    pub var_att_median: f64,
    pub crb_f_median: f64,
    pub crb_att_median: f64,
    /// Median over voxels of variance / CRB.
    pub ratio_f_median: f64,
    pub ratio_att_median: f64,
    pub lambda_max_mean: f64,
    pub lambda_min_mean: f64,
    pub lambda_max_median: f64,
    pub lambda_min_median: f64,
    pub kappa_mean: f64,
    pub kappa_median: f64,
    /// Eigenvalues of the voxel-averaged congruence matrix.
    pub pooled_lambda_max: f64,
    pub pooled_lambda_min: f64,
    pub n_voxels: usize,
    pub excluded_fraction: f64,
}

impl ConvergenceRow {
    pub fn table(rows: &[ConvergenceRow]) -> ExperimentTable {
        let mut t = ExperimentTable::new(vec![
            Column::new("m", UNIT_COUNT),
            Column::new("bias_f", UNIT_F),
            Column::new("bias_att", UNIT_ATT),
            Column::new("abs_bias_f_mean", UNIT_F),
            Column::new("abs_bias_att_mean", UNIT_ATT),
            Column::new("abs_bias_f_median", UNIT_F),
            Column::new("abs_bias_att_median", UNIT_ATT),
            Column::new("var_f", UNIT_F2),
            Column::new("var_att", UNIT_ATT2),
            Column::new("var_f_median", UNIT_F2),
            Column::new("var_att_median", UNIT_ATT2),
            Column::new("crb_f_median", UNIT_F2),
            Column::new("crb_att_median", UNIT_ATT2),
            Column::new("ratio_f_median", UNIT_NONE),
            Column::new("ratio_att_median", UNIT_NONE),
            Column::new("lambda_max_mean", UNIT_NONE),
            Column::new("lambda_min_mean", UNIT_NONE),
            Column::new("lambda_max_median", UNIT_NONE),
            Column::new("lambda_min_median", UNIT_NONE),
            Column::new("kappa_mean", UNIT_NONE),
            Column::new("kappa_median", UNIT_NONE),
            Column::new("pooled_lambda_max", UNIT_NONE),
            Column::new("pooled_lambda_min", UNIT_NONE),
            Column::new("n_voxels", UNIT_COUNT),
            Column::new("excluded_fraction", UNIT_NONE),
        ]);
        for r in rows {
            t.push_row(vec![
                r.m as f64,
                r.bias_f,
                r.bias_att,
                r.abs_bias_f_mean,
                r.abs_bias_att_mean,
                r.abs_bias_f_median,
                r.abs_bias_att_median,
                r.var_f,
                r.var_att,
                r.var_f_median,
                r.var_att_median,
                r.crb_f_median,
                r.crb_att_median,
                r.ratio_f_median,
                r.ratio_att_median,
                r.lambda_max_mean,
                r.lambda_min_mean,
                r.lambda_max_median,
                r.lambda_min_median,
                r.kappa_mean,
                r.kappa_median,
                r.pooled_lambda_max,
                r.pooled_lambda_min,
                r.n_voxels as f64,
                r.excluded_fraction,
            ])
            .expect("row width matches header");
        }
        t
    }
}

struct VoxelOutcome {
    estimates: Vec<[f64; 2]>,
    reference: [f64; 2],
    crb: Option<Matrix2>,
    metrics: Vec<(Matrix2, f64, f64, f64)>,
}

pub(crate) fn check_same_plds(dataset: &VoxelDataset, protocol: &Protocol) -> Result<()> {
    if dataset.protocol.plds != protocol.plds || dataset.protocol.tau != protocol.tau {
        return Err(Error::InvalidInput(
            "protocol sampling times differ from the dataset's".into(),
        ));
    }
    Ok(())
}

/// Reference parameters per voxel (`None` when unavailable).
pub(crate) fn reference_thetas(
    dataset: &VoxelDataset,
    fitter: &Fitter,
    reference: Reference,
) -> Result<Vec<Option<KineticParams>>> {
    match reference {
        Reference::Truth => {
            let truth = dataset.truth.as_ref().ok_or_else(|| {
                Error::InvalidInput("reference = truth requires truth maps".into())
            })?;
            Ok((0..dataset.n_voxels)
                .map(|v| {
                    dataset.mask[v]
                        .then(|| KineticParams::new(truth.f[v] as f64, truth.att[v] as f64))
                })
                .collect())
        }
        Reference::FullFit => Ok((0..dataset.n_voxels)
            .into_par_iter()
            .map(|v| {
                if !dataset.mask[v] {
                    return None;
                }
                fitter.fit(&dataset.series(v)).ok().map(|r| r.theta_hat)
            })
            .collect()),
    }
}

/// Bias, variance and congruence eigenvalues as a function of the number
/// of repetitions, using the first `m` repetitions and `k` bootstraps.
pub fn convergence_study(
    dataset: &VoxelDataset,
    protocol: &Protocol,
    config: &ConvergenceConfig,
) -> Result<Vec<ConvergenceRow>> {
    dataset.validate()?;
    check_same_plds(dataset, protocol)?;
    if config.ms.is_empty() {
        return Err(Error::InvalidInput("no repetition counts requested".into()));
    }
    if let Some(&bad) = config.ms.iter().find(|&&m| m < 2 || m > dataset.n_reps) {
        return Err(Error::InvalidInput(format!(
            "m = {bad} outside [2, {}]",
            dataset.n_reps
        )));
    }
    let fitter = Fitter::new(protocol, &config.bounds, &config.fit)?;
    let context = BoundsContext::new(protocol);
    let references = reference_thetas(dataset, &fitter, config.reference)?;
    let n_masked = dataset.masked_voxels().count();

    config
        .ms
        .iter()
        .map(|&m| {
            let resamples = bootstrap_indices(m, config.k, config.seed)?;
            let outcomes: Vec<VoxelOutcome> = (0..dataset.n_voxels)
                .into_par_iter()
                .filter_map(|v| {
                    let reference = references[v]?;
                    let mut estimates = Vec::with_capacity(resamples.len());
                    let mut metrics = Vec::with_capacity(resamples.len());
                    for reps in &resamples {
                        let series = dataset.series_with_reps(v, reps);
                        let Ok(fit) = fitter.fit(&series) else { continue };
                        estimates.push(fit.theta_hat.as_array());
                        if fit.is_valid() {
                            if let Ok(rep) = context.report(&series, fit.theta_hat) {
                                metrics.push((rep.p_hat, rep.lambda_max, rep.lambda_min, rep.kappa));
                            }
                        }
                    }
                    Some(VoxelOutcome {
                        estimates,
                        reference: reference.as_array(),
                        crb: context.crb_theoretical(reference, m).ok(),
                        metrics,
                    })
                })
                .collect();
            Ok(aggregate(m, config.k, n_masked, &outcomes))
        })
        .collect()
}

fn aggregate(m: usize, k: usize, n_masked: usize, outcomes: &[VoxelOutcome]) -> ConvergenceRow {
    let mut bias = [Vec::new(), Vec::new()];
    let mut var = [Vec::new(), Vec::new()];
    let mut crb = [Vec::new(), Vec::new()];
    let mut ratio = [Vec::new(), Vec::new()];
    let (mut lmax, mut lmin, mut kappa) = (Vec::new(), Vec::new(), Vec::new());
    let mut p_sum = Matrix2::ZERO;
    for o in outcomes {
        if o.estimates.is_empty() {
            continue;
        }
        let crb_diag = o.crb.map(|c| [c.a, c.c]);
        for i in 0..2 {
            let column: Vec<f64> = o.estimates.iter().map(|e| e[i]).collect();
            bias[i].push(mean(&column) - o.reference[i]);
            let v = sample_variance(&column);
            if v.is_finite() {
                var[i].push(v);
                if let Some(c) = crb_diag {
                    ratio[i].push(v / c[i]);
                }
            }
            if let Some(c) = crb_diag {
                crb[i].push(c[i]);
            }
        }
        for &(p, hi, lo, kap) in &o.metrics {
            p_sum = p_sum + p;
            lmax.push(hi);
            lmin.push(lo);
            kappa.push(kap);
        }
    }
    let abs = |v: &[f64]| v.iter().map(|x| x.abs()).collect::<Vec<_>>();
    let (pooled_lambda_max, pooled_lambda_min) = if lmax.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let [hi, lo] = p_sum.scale(1.0 / lmax.len() as f64).eigenvalues();
        (hi, lo)
    };
    let total_pairs = (n_masked * k) as f64;
    ConvergenceRow {
        m,
        bias_f: mean(&bias[0]),
        bias_att: mean(&bias[1]),
        abs_bias_f_mean: mean(&abs(&bias[0])),
        abs_bias_att_mean: mean(&abs(&bias[1])),
        abs_bias_f_median: median(&abs(&bias[0])),
        abs_bias_att_median: median(&abs(&bias[1])),
        var_f: mean(&var[0]),
        var_att: mean(&var[1]),
        var_f_median: median(&var[0]),
        var_att_median: median(&var[1]),
        crb_f_median: median(&crb[0]),
        crb_att_median: median(&crb[1]),
        ratio_f_median: median(&ratio[0]),
        ratio_att_median: median(&ratio[1]),
        lambda_max_mean: mean(&lmax),
        lambda_min_mean: mean(&lmin),
        lambda_max_median: median(&lmax),
        lambda_min_median: median(&lmin),
        kappa_mean: mean(&kappa),
        kappa_median: median(&kappa),
        pooled_lambda_max,
        pooled_lambda_min,
        n_voxels: bias[0].len(),
        excluded_fraction: if total_pairs > 0.0 {
            1.0 - lmax.len() as f64 / total_pairs
        } else {
            f64::NAN
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{generate_phantom, PhantomSpec};
    use crate::noise::{NoiseKind, NoiseSpec};

    #[test]
    fn noiseless_truth_reference_has_no_bias_or_variance() {
        let p = Protocol::brain(1e-4);
        let mut spec = PhantomSpec::brain(12, 4, NoiseSpec::new(0.0, NoiseKind::Gaussian, 5));
        spec.f_range = (20.0, 120.0);
        spec.att_range = (0.2, 1.8);
        let d = generate_phantom(&spec, &p).unwrap();
        let cfg = ConvergenceConfig::new(vec![2, 3, 4], 3, 9, Reference::Truth, BoundsBox::brain());
        let rows = convergence_study(&d, &d.protocol.clone(), &cfg).unwrap();
        assert_eq!(rows.len(), 3);
        for r in rows {
            assert_eq!(r.var_f, 0.0);
            assert_eq!(r.var_att, 0.0);
            assert!(r.abs_bias_f_median < 1e-6 * 120.0, "{}", r.abs_bias_f_median);
            assert!(r.abs_bias_att_median < 1e-6, "{}", r.abs_bias_att_median);
            assert_eq!(r.n_voxels, 12);
        }
    }

    #[test]
    fn rejects_out_of_range_m() {
        let p = Protocol::brain(1e-4);
        let d = generate_phantom(&PhantomSpec::brain(2, 3, NoiseSpec::new(1e-4, NoiseKind::Gaussian, 5)), &p).unwrap();
        let bad = ConvergenceConfig::new(vec![4], 2, 0, Reference::Truth, BoundsBox::brain());
        assert!(convergence_study(&d, &p, &bad).is_err());
        let bad = ConvergenceConfig::new(vec![1], 2, 0, Reference::FullFit, BoundsBox::brain());
        assert!(convergence_study(&d, &p, &bad).is_err());
    }

    #[test]
    fn table_has_one_row_per_m() {
        let p = Protocol::brain(2e-4);
        let d = generate_phantom(&PhantomSpec::brain(6, 3, NoiseSpec::new(2e-4, NoiseKind::Gaussian, 5)), &p).unwrap();
        let cfg = ConvergenceConfig::new(vec![2, 3], 2, 1, Reference::FullFit, BoundsBox::brain());
        let rows = convergence_study(&d, &p, &cfg).unwrap();
        let t = ConvergenceRow::table(&rows);
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.column("m").unwrap(), vec![2.0, 3.0]);
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.excluded_fraction)));
    }
}
