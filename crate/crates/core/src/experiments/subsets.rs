use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::BoundsContext;
use crate::error::{Error, Result};
use crate::estimation::{BoundsBox, FitOptions, Fitter};
use crate::experiments::convergence::check_same_plds;
use crate::experiments::{bootstrap_indices, mean, median, sample_variance};
use crate::io::dataset::VoxelDataset;
use crate::io::table::{Column, ExperimentTable, UNIT_ATT2, UNIT_COUNT, UNIT_F2, UNIT_NONE};
use crate::signal::{KineticParams, Protocol};

/// Floor of the relative-error denominator, native units.
pub const RELATIVE_ERROR_EPS: f64 = 1e-3;

/// Split PLD indices into an early-weighted set and its complement.
///
/// Set 1 gets `ceil(N/2)` entries. A zero PLD goes to set 1 first; the
/// remaining slots take the nearest unassigned PLD to each geometric target
/// `t_lo * (t_hi / t_lo)^(k / slots)`, `k = 0..slots`, ties to the earlier PLD.
pub fn subset_partition_indices(plds: &[f64]) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = plds.len();
    if n < 4 {
        return Err(Error::InvalidInput(format!("subset partition needs N >= 4, got {n}")));
    }
    if plds.windows(2).any(|w| !(w[1] > w[0])) || !(plds[0] >= 0.0) {
        return Err(Error::InvalidInput("PLDs must be non-negative and strictly increasing".into()));
    }
    let n1 = n.div_ceil(2);
    let mut taken = vec![false; n];
    let mut slots = n1;
    if plds[0] == 0.0 {
        taken[0] = true;
        slots -= 1;
    }
    let positive = if plds[0] == 0.0 { &plds[1..] } else { plds };
    let t_lo = positive[0];
    let t_hi = positive[positive.len() - 1];
    for k in 0..slots {
        let target = t_lo * (t_hi / t_lo).powf(k as f64 / slots as f64);
        let pick = (0..n)
            .filter(|&i| !taken[i])
            .min_by(|&a, &b| {
                (plds[a] - target)
                    .abs()
                    .total_cmp(&(plds[b] - target).abs())
                    .then(a.cmp(&b))
            })
            .expect("fewer targets than PLDs");
        taken[pick] = true;
    }
    let set1 = (0..n).filter(|&i| taken[i]).collect();
    let set2 = (0..n).filter(|&i| !taken[i]).collect();
    Ok((set1, set2))
}

/// [`subset_partition_indices`] returning PLD values.
pub fn subset_partition(plds: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (a, b) = subset_partition_indices(plds)?;
    Ok((a.iter().map(|&i| plds[i]).collect(), b.iter().map(|&i| plds[i]).collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetConfig {
    pub ms: Vec<usize>,
    pub k: usize,
    pub seed: u64,
    pub bounds: BoundsBox,
    pub fit: FitOptions,
}

impl SubsetConfig {
    /// All `m` in `2..=m_total`.
    pub fn new(m_total: usize, k: usize, seed: u64, bounds: BoundsBox) -> Self {
        Self {
            ms: (2..=m_total).collect(),
            k,
            seed,
            bounds,
            fit: FitOptions::default(),
        }
    }
}

/// Median bootstrap variance and theoretical CRB for one subset at one `m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetVarianceRow {
    pub m: usize,
    pub var_f_median: f64,
    pub var_att_median: f64,
    pub crb_f_median: f64,
    pub crb_att_median: f64,
    /// Median over voxels of `var / crb`.
    pub ratio_f_median: f64,
    pub ratio_att_median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    pub set1_plds: Vec<f64>,
    pub set2_plds: Vec<f64>,
    pub theta_map_1: Vec<Option<KineticParams>>,
    pub theta_map_2: Vec<Option<KineticParams>>,
    /// Per voxel `[f, att]`; `None` where either fit failed.
    pub relative_error_map: Vec<Option<[f64; 2]>>,
    /// Voxel average using all repetitions.
    pub mean_relative_error: [f64; 2],
    /// `(m, [f, att])`: voxel-averaged relative error using the first `m` repetitions.
    pub relative_error_per_m: Vec<(usize, [f64; 2])>,
    pub set1_variance: Vec<SubsetVarianceRow>,
    pub set2_variance: Vec<SubsetVarianceRow>,
}

impl SubsetReport {
    /// Variance, CRB and relative error against `m` for both sets.
    pub fn per_m_table(&self) -> ExperimentTable {
        let mut cols = vec![
            Column::new("m", UNIT_COUNT),
            Column::new("rel_err_f", UNIT_NONE),
            Column::new("rel_err_att", UNIT_NONE),
        ];
        for set in ["set1", "set2"] {
            cols.push(Column::new(&format!("{set}_var_f"), UNIT_F2));
            cols.push(Column::new(&format!("{set}_var_att"), UNIT_ATT2));
            cols.push(Column::new(&format!("{set}_crb_f"), UNIT_F2));
            cols.push(Column::new(&format!("{set}_crb_att"), UNIT_ATT2));
            cols.push(Column::new(&format!("{set}_ratio_f"), UNIT_NONE));
            cols.push(Column::new(&format!("{set}_ratio_att"), UNIT_NONE));
        }
        let mut t = ExperimentTable::new(cols);
        for ((&(m, rel), a), b) in self
            .relative_error_per_m
            .iter()
            .zip(&self.set1_variance)
            .zip(&self.set2_variance)
        {
            let mut row = vec![m as f64, rel[0], rel[1]];
            for r in [a, b] {
                row.extend([
                    r.var_f_median,
                    r.var_att_median,
                    r.crb_f_median,
                    r.crb_att_median,
                    r.ratio_f_median,
                    r.ratio_att_median,
                ]);
            }
            t.push_row(row).expect("row width matches header");
        }
        t
    }

    /// Per-voxel estimates from both sets and their relative errors.
    pub fn voxel_table(&self) -> ExperimentTable {
        let mut t = ExperimentTable::new(vec![
            Column::new("voxel", UNIT_COUNT),
            Column::new("f_set1", crate::io::table::UNIT_F),
            Column::new("att_set1", crate::io::table::UNIT_ATT),
            Column::new("f_set2", crate::io::table::UNIT_F),
            Column::new("att_set2", crate::io::table::UNIT_ATT),
            Column::new("rel_err_f", UNIT_NONE),
            Column::new("rel_err_att", UNIT_NONE),
        ]);
        let nan2 = [f64::NAN; 2];
        for v in 0..self.theta_map_1.len() {
            let a = self.theta_map_1[v].map_or(nan2, |t| t.as_array());
            let b = self.theta_map_2[v].map_or(nan2, |t| t.as_array());
            let r = self.relative_error_map[v].unwrap_or(nan2);
            t.push_row(vec![v as f64, a[0], a[1], b[0], b[1], r[0], r[1]])
                .expect("row width matches header");
        }
        t
    }
}

fn relative_error(a: KineticParams, b: KineticParams) -> [f64; 2] {
    let rel = |x: f64, y: f64| (x - y).abs() / y.abs().max(RELATIVE_ERROR_EPS);
    [rel(a.f, b.f), rel(a.att, b.att)]
}

fn fit_all(dataset: &VoxelDataset, fitter: &Fitter, reps: Option<usize>) -> Vec<Option<KineticParams>> {
    let first: Vec<usize> = (0..reps.unwrap_or(dataset.n_reps)).collect();
    (0..dataset.n_voxels)
        .into_par_iter()
        .map(|v| {
            if !dataset.mask[v] {
                return None;
            }
            fitter
                .fit(&dataset.series_with_reps(v, &first))
                .ok()
                .map(|r| r.theta_hat)
        })
        .collect()
}

fn mean_relative_error(a: &[Option<KineticParams>], b: &[Option<KineticParams>]) -> (Vec<Option<[f64; 2]>>, [f64; 2]) {
    let map: Vec<Option<[f64; 2]>> = a
        .iter()
        .zip(b)
        .map(|(x, y)| Some(relative_error((*x)?, (*y)?)))
        .collect();
    let valid: Vec<[f64; 2]> = map.iter().flatten().copied().collect();
    let col = |i: usize| mean(&valid.iter().map(|r| r[i]).collect::<Vec<_>>());
    (map, [col(0), col(1)])
}

struct SubsetArm {
    data: VoxelDataset,
    fitter: Fitter,
    context: BoundsContext,
}

impl SubsetArm {
    fn new(dataset: &VoxelDataset, protocol: &Protocol, idx: &[usize], config: &SubsetConfig) -> Result<Self> {
        let data = dataset.restrict_plds(idx)?;
        let proto = protocol.with_plds(data.protocol.plds.clone());
        Ok(Self {
            fitter: Fitter::new(&proto, &config.bounds, &config.fit)?,
            context: BoundsContext::new(&proto),
            data,
        })
    }

    fn variance_row(
        &self,
        m: usize,
        resamples: &[Vec<usize>],
        reference: &[Option<KineticParams>],
    ) -> SubsetVarianceRow {
        let per_voxel: Vec<([f64; 2], Option<[f64; 2]>)> = (0..self.data.n_voxels)
            .into_par_iter()
            .filter_map(|v| {
                let theta = reference[v]?;
                let est: Vec<[f64; 2]> = resamples
                    .iter()
                    .filter_map(|reps| self.fitter.fit(&self.data.series_with_reps(v, reps)).ok())
                    .map(|r| r.theta_hat.as_array())
                    .collect();
                let var = |i: usize| sample_variance(&est.iter().map(|e| e[i]).collect::<Vec<_>>());
                let var = [var(0), var(1)];
                if !var.iter().all(|x| x.is_finite()) {
                    return None;
                }
                let crb = self.context.crb_theoretical(theta, m).ok().map(|c| [c.a, c.c]);
                Some((var, crb))
            })
            .collect();
        let pick = |f: &dyn Fn(&([f64; 2], Option<[f64; 2]>)) -> Option<f64>| {
            median(&per_voxel.iter().filter_map(f).collect::<Vec<_>>())
        };
        SubsetVarianceRow {
            m,
            var_f_median: pick(&|(v, _)| Some(v[0])),
            var_att_median: pick(&|(v, _)| Some(v[1])),
            crb_f_median: pick(&|(_, c)| c.map(|c| c[0])),
            crb_att_median: pick(&|(_, c)| c.map(|c| c[1])),
            ratio_f_median: pick(&|(v, c)| c.map(|c| v[0] / c[0])),
            ratio_att_median: pick(&|(v, c)| c.map(|c| v[1] / c[1])),
        }
    }
}

/// Fit each PLD subset separately, compare the estimates and track bootstrap
/// variance against the theoretical CRB per `m`.
pub fn subset_consistency(dataset: &VoxelDataset, protocol: &Protocol, config: &SubsetConfig) -> Result<SubsetReport> {
    dataset.validate()?;
    check_same_plds(dataset, protocol)?;
    if let Some(&bad) = config.ms.iter().find(|&&m| m < 2 || m > dataset.n_reps) {
        return Err(Error::InvalidInput(format!("m = {bad} outside [2, {}]", dataset.n_reps)));
    }
    let (idx1, idx2) = subset_partition_indices(&protocol.plds)?;
    let arm1 = SubsetArm::new(dataset, protocol, &idx1, config)?;
    let arm2 = SubsetArm::new(dataset, protocol, &idx2, config)?;

    let theta_map_1 = fit_all(&arm1.data, &arm1.fitter, None);
    let theta_map_2 = fit_all(&arm2.data, &arm2.fitter, None);
    let (relative_error_map, mean_rel) = mean_relative_error(&theta_map_1, &theta_map_2);

    let mut relative_error_per_m = Vec::with_capacity(config.ms.len());
    let mut set1_variance = Vec::with_capacity(config.ms.len());
    let mut set2_variance = Vec::with_capacity(config.ms.len());
    for &m in &config.ms {
        let a = fit_all(&arm1.data, &arm1.fitter, Some(m));
        let b = fit_all(&arm2.data, &arm2.fitter, Some(m));
        relative_error_per_m.push((m, mean_relative_error(&a, &b).1));
        let resamples = bootstrap_indices(m, config.k, config.seed)?;
        set1_variance.push(arm1.variance_row(m, &resamples, &theta_map_1));
        set2_variance.push(arm2.variance_row(m, &resamples, &theta_map_2));
    }

    Ok(SubsetReport {
        set1_plds: arm1.data.protocol.plds.clone(),
        set2_plds: arm2.data.protocol.plds.clone(),
        theta_map_1,
        theta_map_2,
        relative_error_map,
        mean_relative_error: mean_rel,
        relative_error_per_m,
        set1_variance,
        set2_variance,
    })
}
