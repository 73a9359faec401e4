use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::BoundsContext;
use crate::error::{Error, Result};
use crate::estimation::{BoundsBox, FitOptions, FitterBank};
use crate::experiments::convergence::check_same_plds;
use crate::experiments::mean;
use crate::experiments::phantom::top_indices;
use crate::io::dataset::VoxelDataset;
use crate::io::table::{Column, ExperimentTable, UNIT_COUNT, UNIT_NONE, UNIT_ATT};
use crate::signal::Protocol;

#[derive(Debug, Clone, PartialEq)]
pub struct T1Config {
    pub t1_global: f64,
    pub t1_alt: f64,
    pub top_fraction: f64,
    pub bounds: BoundsBox,
    pub fit: FitOptions,
}

impl T1Config {
    pub fn new(t1_global: f64, t1_alt: f64, bounds: BoundsBox) -> Self {
        Self {
            t1_global,
            t1_alt,
            top_fraction: 0.10,
            bounds,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelMetrics {
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub kappa: f64,
}

impl VoxelMetrics {
    fn minus(&self, other: &VoxelMetrics) -> VoxelMetrics {
        VoxelMetrics {
            lambda_max: self.lambda_max - other.lambda_max,
            lambda_min: self.lambda_min - other.lambda_min,
            kappa: self.kappa - other.kappa,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T1Report {
    /// Tissue T1 used per voxel in the voxelwise arm.
    pub t1_map: Vec<f64>,
    pub global: Vec<Option<VoxelMetrics>>,
    pub voxelwise: Vec<Option<VoxelMetrics>>,
    /// `global - voxelwise` where both arms succeeded.
    pub difference: Vec<Option<VoxelMetrics>>,
    /// Means over voxels valid in both arms.
    pub mean_global: VoxelMetrics,
    pub mean_voxelwise: VoxelMetrics,
    pub excluded_fraction: f64,
}

impl T1Report {
    pub fn table(&self) -> ExperimentTable {
        let mut cols = vec![Column::new("voxel", UNIT_COUNT), Column::new("t1", UNIT_ATT)];
        for arm in ["global", "voxelwise", "diff"] {
            for m in ["lambda_max", "lambda_min", "kappa"] {
                cols.push(Column::new(&format!("{m}_{arm}"), UNIT_NONE));
            }
        }
        let mut t = ExperimentTable::new(cols);
        let cells = |m: &Option<VoxelMetrics>| {
            m.map_or([f64::NAN; 3], |m| [m.lambda_max, m.lambda_min, m.kappa])
        };
        for v in 0..self.t1_map.len() {
            let mut row = vec![v as f64, self.t1_map[v]];
            row.extend(cells(&self.global[v]));
            row.extend(cells(&self.voxelwise[v]));
            row.extend(cells(&self.difference[v]));
            t.push_row(row).expect("row width matches header");
        }
        t
    }
}

fn arm_metrics(
    dataset: &VoxelDataset,
    protocol: &Protocol,
    config: &T1Config,
    t1_map: &[f64],
) -> Result<Vec<Option<VoxelMetrics>>> {
    let bank = FitterBank::new(protocol, &config.bounds, &config.fit, t1_map.iter().copied())?;
    let contexts: BTreeMap<u64, BoundsContext> = t1_map
        .iter()
        .map(|&t| (t.to_bits(), BoundsContext::new(&protocol.with_t1_tissue(t))))
        .collect();
    Ok((0..dataset.n_voxels)
        .into_par_iter()
        .map(|v| {
            if !dataset.mask[v] {
                return None;
            }
            let series = dataset.series(v);
            let fit = bank.get(t1_map[v]).fit(&series).ok().filter(|r| r.is_valid())?;
            let rep = contexts[&t1_map[v].to_bits()].report(&series, fit.theta_hat).ok()?;
            Some(VoxelMetrics {
                lambda_max: rep.lambda_max,
                lambda_min: rep.lambda_min,
                kappa: rep.kappa,
            })
        })
        .collect())
}

/// Congruence maps under a global tissue T1 and under a map that assigns
/// `t1_alt` to the brightest `top_fraction` of voxels.
pub fn t1_experiment(dataset: &VoxelDataset, protocol: &Protocol, config: &T1Config) -> Result<T1Report> {
    dataset.validate()?;
    check_same_plds(dataset, protocol)?;
    if !(config.top_fraction > 0.0 && config.top_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "top_fraction {} outside (0, 1)",
            config.top_fraction
        )));
    }
    if !(config.t1_global > 0.0 && config.t1_alt > 0.0) {
        return Err(Error::InvalidInput("T1 values must be positive".into()));
    }
    let intensity: Vec<(usize, f64)> = dataset
        .masked_voxels()
        .map(|v| {
            let n = dataset.n_plds() * dataset.n_reps;
            let start = dataset.index(v, 0, 0);
            let sum: f64 = dataset.data[start..start + n].iter().map(|&x| x as f64).sum();
            (v, sum / n as f64)
        })
        .collect();
    let mut t1_map = vec![config.t1_global; dataset.n_voxels];
    for v in top_indices(&intensity, config.top_fraction) {
        t1_map[v] = config.t1_alt;
    }

    let global = arm_metrics(dataset, protocol, config, &vec![config.t1_global; dataset.n_voxels])?;
    let voxelwise = arm_metrics(dataset, protocol, config, &t1_map)?;
    let difference: Vec<Option<VoxelMetrics>> = global
        .iter()
        .zip(&voxelwise)
        .map(|(a, b)| Some(a.as_ref()?.minus(b.as_ref()?)))
        .collect();

    let both: Vec<(VoxelMetrics, VoxelMetrics)> = global
        .iter()
        .zip(&voxelwise)
        .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
        .collect();
    let summarize = |pick: &dyn Fn(&(VoxelMetrics, VoxelMetrics)) -> VoxelMetrics| {
        let ms: Vec<VoxelMetrics> = both.iter().map(pick).collect();
        VoxelMetrics {
            lambda_max: mean(&ms.iter().map(|m| m.lambda_max).collect::<Vec<_>>()),
            lambda_min: mean(&ms.iter().map(|m| m.lambda_min).collect::<Vec<_>>()),
            kappa: mean(&ms.iter().map(|m| m.kappa).collect::<Vec<_>>()),
        }
    };
    let n_masked = intensity.len();
    Ok(T1Report {
        t1_map,
        mean_global: summarize(&|p| p.0),
        mean_voxelwise: summarize(&|p| p.1),
        excluded_fraction: if n_masked > 0 {
            1.0 - both.len() as f64 / n_masked as f64
        } else {
            f64::NAN
        },
        global,
        voxelwise,
        difference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{generate_phantom, PhantomSpec};
    use crate::noise::{NoiseKind, NoiseSpec};

    #[test]
    fn identical_t1_gives_zero_difference() {
        let p = Protocol::brain(2e-4);
        let d = generate_phantom(&PhantomSpec::brain(20, 6, NoiseSpec::new(2e-4, NoiseKind::Gaussian, 1)), &p).unwrap();
        let cfg = T1Config::new(1.2, 1.2, BoundsBox::brain());
        let r = t1_experiment(&d, &p, &cfg).unwrap();
        assert_eq!(r.t1_map.iter().filter(|&&t| t == 1.2).count(), 20);
        for diff in r.difference.iter().flatten() {
            assert_eq!((diff.lambda_max, diff.lambda_min, diff.kappa), (0.0, 0.0, 0.0));
        }
        assert!(r.difference.iter().flatten().count() > 0);
    }

    #[test]
    fn top_fraction_count() {
        let p = Protocol::brain(2e-4);
        let d = generate_phantom(&PhantomSpec::brain(25, 3, NoiseSpec::new(2e-4, NoiseKind::Gaussian, 1)), &p).unwrap();
        let r = t1_experiment(&d, &p, &T1Config::new(1.2, 1.5, BoundsBox::brain())).unwrap();
        assert_eq!(r.t1_map.iter().filter(|&&t| t == 1.5).count(), 3);
        let mut bad = T1Config::new(1.2, 1.5, BoundsBox::brain());
        bad.top_fraction = 1.0;
        assert!(t1_experiment(&d, &p, &bad).is_err());
    }
}
