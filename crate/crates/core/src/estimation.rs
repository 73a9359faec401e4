//! Maximum-likelihood fitting of `(f, att)` under the Gaussian measurement
//! model. With known sigma the MLE is the least-squares solution, so the
//! fitter minimizes the sum of squared residuals over all `N x M` samples.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::dataset::VoxelDataset;
use crate::signal::{sample_times, KineticParams, Kinetics, Protocol};

/// Normal equations with a larger condition number fall back to a gradient step.
pub const NORMAL_EQUATIONS_MAX_CONDITION: f64 = 1e12;

/// Relative distance to a bound below which a component counts as on it.
pub const BOUNDARY_TOL: f64 = 1e-9;

/// `N x M` measurements of one voxel, stored PLD-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelSeries {
    n_plds: usize,
    n_reps: usize,
    data: Vec<f64>,
}

impl VoxelSeries {
    pub fn new(n_plds: usize, n_reps: usize, data: Vec<f64>) -> Result<Self> {
        if n_reps == 0 || n_plds == 0 {
            return Err(Error::InvalidInput("series needs N >= 1 and M >= 1".into()));
        }
        if data.len() != n_plds * n_reps {
            return Err(Error::InvalidInput(format!(
                "series data has {} entries, expected {n_plds} x {n_reps}",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("series contains non-finite values".into()));
        }
        Ok(Self {
            n_plds,
            n_reps,
            data,
        })
    }

    /// Build from a list of repetitions, each of length N.
    pub fn from_repetitions(reps: &[Vec<f64>]) -> Result<Self> {
        let m = reps.len();
        let n = reps.first().map_or(0, |r| r.len());
        if reps.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput("repetitions differ in length".into()));
        }
        let mut data = Vec::with_capacity(n * m);
        for pld in 0..n {
            data.extend(reps.iter().map(|r| r[pld]));
        }
        Self::new(n, m, data)
    }

    pub fn n_plds(&self) -> usize {
        self.n_plds
    }

    pub fn n_reps(&self) -> usize {
        self.n_reps
    }

    #[inline]
    pub fn value(&self, pld: usize, rep: usize) -> f64 {
        self.data[pld * self.n_reps + rep]
    }

    pub fn pld_row(&self, pld: usize) -> &[f64] {
        &self.data[pld * self.n_reps..(pld + 1) * self.n_reps]
    }

    pub fn repetition(&self, rep: usize) -> Vec<f64> {
        (0..self.n_plds).map(|p| self.value(p, rep)).collect()
    }

    /// Series restricted to the listed repetitions (repeats allowed).
    pub fn select_reps(&self, reps: &[usize]) -> VoxelSeries {
        let mut data = Vec::with_capacity(self.n_plds * reps.len());
        for p in 0..self.n_plds {
            let row = self.pld_row(p);
            data.extend(reps.iter().map(|&r| row[r]));
        }
        VoxelSeries {
            n_plds: self.n_plds,
            n_reps: reps.len(),
            data,
        }
    }

    pub fn check_protocol(&self, protocol: &Protocol) -> Result<()> {
        if self.n_plds != protocol.n_samples() {
            return Err(Error::InvalidInput(format!(
                "series has {} PLDs, protocol has {}",
                self.n_plds,
                protocol.n_samples()
            )));
        }
        Ok(())
    }

    /// Per-PLD mean and the within-PLD scatter `sum (x - mean)^2`.
    ///
    /// Values are summed in sorted order so the result is bitwise invariant
    /// to permutations of the repetitions.
    pub fn moments(&self) -> (Vec<f64>, f64) {
        let m = self.n_reps as f64;
        let mut scratch = Vec::with_capacity(self.n_reps);
        let mut means = Vec::with_capacity(self.n_plds);
        let mut scatter = 0.0;
        for p in 0..self.n_plds {
            scratch.clear();
            scratch.extend_from_slice(self.pld_row(p));
            scratch.sort_by(f64::total_cmp);
            let mean = scratch.iter().sum::<f64>() / m;
            scatter += scratch.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
            means.push(mean);
        }
        (means, scatter)
    }
}

/// Box constraint on the fitted parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsBox {
    pub f_min: f64,
    pub f_max: f64,
    pub att_min: f64,
    pub att_max: f64,
}

impl BoundsBox {
    pub fn new(f_min: f64, f_max: f64, att_min: f64, att_max: f64) -> Result<Self> {
        let b = Self {
            f_min,
            f_max,
            att_min,
            att_max,
        };
        b.validate()?;
        Ok(b)
    }

    /// 0-150 mL/min/100g, 0-2 s.
    pub fn brain() -> Self {
        Self {
            f_min: 0.0,
            f_max: 150.0,
            att_min: 0.0,
            att_max: 2.0,
        }
    }

    /// 0-900 mL/min/100g, 0-2 s.
    pub fn kidney() -> Self {
        Self {
            f_max: 900.0,
            ..Self::brain()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.f_min, self.f_max, self.att_min, self.att_max]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
            && self.f_min < self.f_max
            && self.att_min < self.att_max;
        if !ok {
            return Err(Error::InvalidInput(format!("invalid bounds box {self:?}")));
        }
        Ok(())
    }

    pub fn lower(&self) -> [f64; 2] {
        [self.f_min, self.att_min]
    }

    pub fn range(&self) -> [f64; 2] {
        [self.f_max - self.f_min, self.att_max - self.att_min]
    }

    pub fn contains(&self, p: KineticParams) -> bool {
        p.f >= self.f_min && p.f <= self.f_max && p.att >= self.att_min && p.att <= self.att_max
    }

    fn to_unit(&self, p: KineticParams) -> [f64; 2] {
        let lo = self.lower();
        let r = self.range();
        [(p.f - lo[0]) / r[0], (p.att - lo[1]) / r[1]]
    }

    fn from_unit(&self, u: [f64; 2]) -> KineticParams {
        let lo = self.lower();
        let r = self.range();
        // exact endpoints at the bounds
        let map = |x: f64, lo: f64, r: f64, hi: f64| {
            if x <= 0.0 {
                lo
            } else if x >= 1.0 {
                hi
            } else {
                lo + x * r
            }
        };
        KineticParams::new(
            map(u[0], lo[0], r[0], self.f_max),
            map(u[1], lo[1], r[1], self.att_max),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Grid nodes along `(f, att)` for initialization.
    pub grid_shape: (usize, usize),
    pub tol_g: f64,
    pub tol_x: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            grid_shape: (32, 32),
            tol_g: 1e-8,
            tol_x: 1e-10,
            max_iter: 200,
            max_halvings: 30,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.grid_shape.0 < 16 || self.grid_shape.1 < 16 {
            return Err(Error::InvalidInput(format!(
                "grid shape must be at least 16 x 16, got {:?}",
                self.grid_shape
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: KineticParams,
    /// Sum of squared residuals over all `N x M` samples.
    pub sse: f64,
    pub converged: bool,
    pub at_boundary: bool,
    /// Peak fitted amplitude below `3 sigma / sqrt(M)`.
    pub low_signal: bool,
    /// Descent stalled while the normal equations were singular.
    pub singular: bool,
    pub n_iterations: usize,
}

impl FitResult {
    /// Usable for bound computations.
    pub fn is_valid(&self) -> bool {
        !self.at_boundary && !self.low_signal && !self.singular
    }
}

/// `sum (x - F)^2 / (2 sigma^2) + (N M / 2) ln(2 pi sigma^2)`.
pub fn negative_log_likelihood(
    series: &VoxelSeries,
    params: KineticParams,
    protocol: &Protocol,
    sigma: f64,
) -> f64 {
    let kin = Kinetics::from_protocol(protocol);
    let times = sample_times(protocol);
    let mut sse = 0.0;
    for (p, &t) in times.iter().enumerate() {
        let model = kin.signal(params, t);
        sse += series
            .pld_row(p)
            .iter()
            .map(|x| (x - model) * (x - model))
            .sum::<f64>();
    }
    let n = (series.n_plds() * series.n_reps()) as f64;
    sse / (2.0 * sigma * sigma) + 0.5 * n * (2.0 * std::f64::consts::PI * sigma * sigma).ln()
}

fn grid_nodes(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let step = (hi - lo) / (count - 1) as f64;
    (0..count)
        .map(|i| if i + 1 == count { hi } else { lo + i as f64 * step })
        .collect()
}

/// Grid node with the smallest SSE against the per-PLD mean; ties go to the
/// lowest `(f, att)` in lexicographic order.
pub fn grid_initialize(
    series: &VoxelSeries,
    protocol: &Protocol,
    bounds: &BoundsBox,
    grid_shape: (usize, usize),
) -> Result<KineticParams> {
    FitOptions {
        grid_shape,
        ..FitOptions::default()
    }
    .validate()?;
    series.check_protocol(protocol)?;
    bounds.validate()?;
    let grid = InitGrid::new(&Kinetics::from_protocol(protocol), &sample_times(protocol), bounds, grid_shape);
    let (means, _) = series.moments();
    Ok(grid.best(&means))
}

/// Model curves precomputed on the initialization grid.
#[derive(Debug, Clone)]
struct InitGrid {
    nodes: Vec<KineticParams>,
    curves: Vec<f64>,
    n: usize,
}

impl InitGrid {
    fn new(kin: &Kinetics, times: &[f64], bounds: &BoundsBox, shape: (usize, usize)) -> Self {
        let fs = grid_nodes(bounds.f_min, bounds.f_max, shape.0);
        let atts = grid_nodes(bounds.att_min, bounds.att_max, shape.1);
        let n = times.len();
        let mut nodes = Vec::with_capacity(fs.len() * atts.len());
        let mut curves = vec![0.0; fs.len() * atts.len() * n];
        for &f in &fs {
            for &att in &atts {
                let node = KineticParams::new(f, att);
                let k = nodes.len();
                kin.curve_into(node, times, &mut curves[k * n..(k + 1) * n]);
                nodes.push(node);
            }
        }
        Self { nodes, curves, n }
    }

    fn best(&self, means: &[f64]) -> KineticParams {
        let mut best = (f64::INFINITY, 0);
        for (k, curve) in self.curves.chunks_exact(self.n).enumerate() {
            let sse: f64 = curve
                .iter()
                .zip(means)
                .map(|(c, x)| (x - c) * (x - c))
                .sum();
            if sse < best.0 {
                best = (sse, k);
            }
        }
        self.nodes[best.1]
    }
}

/// Reusable per-protocol fitting context (grid curves are computed once).
#[derive(Debug, Clone)]
pub struct Fitter {
    kinetics: Kinetics,
    times: Vec<f64>,
    sigma: f64,
    bounds: BoundsBox,
    options: FitOptions,
    grid: InitGrid,
}

struct Linearization {
    gradient: [f64; 2],
    normal: [[f64; 2]; 2],
}

impl Fitter {
    pub fn new(protocol: &Protocol, bounds: &BoundsBox, options: &FitOptions) -> Result<Self> {
        protocol.validate()?;
        bounds.validate()?;
        options.validate()?;
        Ok(Self::with_kinetics(
            Kinetics::from_protocol(protocol),
            sample_times(protocol),
            protocol.sigma,
            bounds,
            options,
        ))
    }

    fn with_kinetics(
        kinetics: Kinetics,
        times: Vec<f64>,
        sigma: f64,
        bounds: &BoundsBox,
        options: &FitOptions,
    ) -> Self {
        let grid = InitGrid::new(&kinetics, &times, bounds, options.grid_shape);
        Self {
            kinetics,
            times,
            sigma,
            bounds: *bounds,
            options: *options,
            grid,
        }
    }

    pub fn bounds(&self) -> &BoundsBox {
        &self.bounds
    }

    fn objective(&self, theta: KineticParams, means: &[f64]) -> f64 {
        self.times
            .iter()
            .zip(means)
            .map(|(&t, x)| {
                let r = x - self.kinetics.signal(theta, t);
                r * r
            })
            .sum()
    }

    fn linearize(&self, theta: KineticParams, means: &[f64]) -> Linearization {
        let range = self.bounds.range();
        let mut g = [0.0; 2];
        let mut jtj = [[0.0; 2]; 2];
        for (&t, x) in self.times.iter().zip(means) {
            let d = self.kinetics.derivatives_unchecked(theta, t);
            let r = x - d.value;
            let j = [d.d_f * range[0], d.d_att * range[1]];
            g[0] += j[0] * r;
            g[1] += j[1] * r;
            jtj[0][0] += j[0] * j[0];
            jtj[0][1] += j[0] * j[1];
            jtj[1][1] += j[1] * j[1];
        }
        jtj[1][0] = jtj[0][1];
        Linearization {
            gradient: g,
            normal: jtj,
        }
    }

    pub fn fit(&self, series: &VoxelSeries) -> Result<FitResult> {
        self.fit_traced(series, None)
    }

    /// As [`Fitter::fit`], recording the total SSE after initialization and
    /// after every accepted step.
    pub fn fit_traced(
        &self,
        series: &VoxelSeries,
        mut history: Option<&mut Vec<f64>>,
    ) -> Result<FitResult> {
        if series.n_plds() != self.times.len() {
            return Err(Error::InvalidInput(format!(
                "series has {} PLDs, protocol has {}",
                series.n_plds(),
                self.times.len()
            )));
        }
        let (means, scatter) = series.moments();
        let m = series.n_reps() as f64;
        let total_sse = |obj: f64| scatter + m * obj;
        let opts = &self.options;

        let mut theta = self.grid.best(&means);
        let mut unit = self.bounds.to_unit(theta);
        let mut obj = self.objective(theta, &means);
        if let Some(h) = history.as_deref_mut() {
            h.push(total_sse(obj));
        }

        let x_norm = means.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut converged = false;
        let mut singular = false;
        let mut iterations = 0;

        for _ in 0..opts.max_iter {
            let lin = self.linearize(theta, &means);
            let g = lin.gradient;
            let a = lin.normal;

            // components pinned at a bound with the descent direction pointing out
            let blocked = [0, 1].map(|j| (unit[j] <= 0.0 && g[j] < 0.0) || (unit[j] >= 1.0 && g[j] > 0.0));
            let pg = [0, 1].map(|j| if blocked[j] { 0.0 } else { g[j] });

            let j_norm = (a[0][0] + a[1][1]).sqrt();
            let scale = (j_norm * x_norm).max(f64::MIN_POSITIVE);
            if pg[0].abs().max(pg[1].abs()) <= opts.tol_g * scale {
                converged = true;
                break;
            }

            let cauchy = {
                let num = pg[0] * pg[0] + pg[1] * pg[1];
                let den = pg[0] * (a[0][0] * pg[0] + a[0][1] * pg[1])
                    + pg[1] * (a[1][0] * pg[0] + a[1][1] * pg[1]);
                let alpha = if den > 0.0 { num / den } else { 1.0 };
                [alpha * pg[0], alpha * pg[1]]
            };
            let (gauss_newton, is_singular) = match blocked {
                [false, false] => {
                    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
                    let tr = a[0][0] + a[1][1];
                    let disc = ((a[0][0] - a[1][1]) * 0.5).hypot(a[0][1]);
                    let lo = 0.5 * tr - disc;
                    let hi = 0.5 * tr + disc;
                    if !(lo > 0.0) || hi / lo > NORMAL_EQUATIONS_MAX_CONDITION || det <= 0.0 {
                        (None, true)
                    } else {
                        (
                            Some([
                                (a[1][1] * g[0] - a[0][1] * g[1]) / det,
                                (a[0][0] * g[1] - a[1][0] * g[0]) / det,
                            ]),
                            false,
                        )
                    }
                }
                [true, true] => (None, false),
                _ => {
                    let j = if blocked[0] { 1 } else { 0 };
                    if a[j][j] > 0.0 {
                        let mut d = [0.0; 2];
                        d[j] = g[j] / a[j][j];
                        (Some(d), false)
                    } else {
                        (None, true)
                    }
                }
            };

            let mut directions = Vec::with_capacity(2);
            if let Some(d) = gauss_newton {
                directions.push(d);
            }
            directions.push(cauchy);

            let mut accepted = None;
            'search: for dir in directions {
                let mut step = 1.0;
                for _ in 0..=opts.max_halvings {
                    let cand = [
                        (unit[0] + step * dir[0]).clamp(0.0, 1.0),
                        (unit[1] + step * dir[1]).clamp(0.0, 1.0),
                    ];
                    let cand_theta = self.bounds.from_unit(cand);
                    let cand_obj = self.objective(cand_theta, &means);
                    if cand_obj < obj {
                        accepted = Some((cand, cand_theta, cand_obj));
                        break 'search;
                    }
                    step *= 0.5;
                }
            }

            match accepted {
                None => {
                    // no descent at machine precision along either direction
                    singular = is_singular;
                    converged = !is_singular;
                    break;
                }
                Some((cand, cand_theta, cand_obj)) => {
                    let moved = (cand[0] - unit[0]).abs().max((cand[1] - unit[1]).abs());
                    unit = cand;
                    theta = cand_theta;
                    obj = cand_obj;
                    iterations += 1;
                    if let Some(h) = history.as_deref_mut() {
                        h.push(total_sse(obj));
                    }
                    if moved < opts.tol_x {
                        converged = true;
                        break;
                    }
                }
            }
        }

        let at_boundary = unit
            .iter()
            .any(|&u| u <= BOUNDARY_TOL || u >= 1.0 - BOUNDARY_TOL);
        let peak = self
            .times
            .iter()
            .map(|&t| self.kinetics.signal(theta, t).abs())
            .fold(0.0, f64::max);
        let low_signal = peak < 3.0 * self.sigma / m.sqrt();

        Ok(FitResult {
            theta_hat: theta,
            sse: total_sse(obj).max(0.0),
            converged,
            at_boundary,
            low_signal,
            singular,
            n_iterations: iterations,
        })
    }
}

/// Fit one voxel: grid initialization followed by projected Gauss-Newton.
pub fn mle_fit(
    series: &VoxelSeries,
    protocol: &Protocol,
    bounds: &BoundsBox,
    options: &FitOptions,
) -> Result<FitResult> {
    series.check_protocol(protocol)?;
    Fitter::new(protocol, bounds, options)?.fit(series)
}

/// Fit results per voxel; `None` for unmasked voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterMaps {
    pub fits: Vec<Option<FitResult>>,
}

impl ParameterMaps {
    pub fn n_voxels(&self) -> usize {
        self.fits.len()
    }

    pub fn theta(&self, voxel: usize) -> Option<KineticParams> {
        self.fits[voxel].map(|r| r.theta_hat)
    }

    /// Perfusion map with `fill` for unmasked voxels.
    pub fn f_map(&self, fill: f64) -> Vec<f64> {
        self.fits
            .iter()
            .map(|r| r.map_or(fill, |r| r.theta_hat.f))
            .collect()
    }

    pub fn att_map(&self, fill: f64) -> Vec<f64> {
        self.fits
            .iter()
            .map(|r| r.map_or(fill, |r| r.theta_hat.att))
            .collect()
    }
}

/// Fit every masked voxel with the dataset's global protocol.
pub fn fit_map(
    dataset: &VoxelDataset,
    bounds: &BoundsBox,
    options: &FitOptions,
) -> Result<ParameterMaps> {
    let fitter = Fitter::new(&dataset.protocol, bounds, options)?;
    let fits = (0..dataset.n_voxels)
        .into_par_iter()
        .map(|v| {
            if dataset.mask[v] {
                fitter.fit(&dataset.series(v)).ok()
            } else {
                None
            }
        })
        .collect();
    Ok(ParameterMaps { fits })
}

/// One fitter per distinct tissue T1 value in a voxelwise map.
#[derive(Debug, Clone)]
pub struct FitterBank {
    fitters: BTreeMap<u64, Fitter>,
}

impl FitterBank {
    pub fn new(
        protocol: &Protocol,
        bounds: &BoundsBox,
        options: &FitOptions,
        t1_values: impl IntoIterator<Item = f64>,
    ) -> Result<Self> {
        let mut fitters = BTreeMap::new();
        for t1 in t1_values {
            if let std::collections::btree_map::Entry::Vacant(e) = fitters.entry(t1.to_bits()) {
                e.insert(Fitter::new(&protocol.with_t1_tissue(t1), bounds, options)?);
            }
        }
        Ok(Self { fitters })
    }

    pub fn get(&self, t1: f64) -> &Fitter {
        &self.fitters[&t1.to_bits()]
    }
}

/// Fit with a voxelwise tissue T1 map.
pub fn fit_map_with_t1(
    dataset: &VoxelDataset,
    bounds: &BoundsBox,
    options: &FitOptions,
    t1_map: &[f64],
) -> Result<ParameterMaps> {
    if t1_map.len() != dataset.n_voxels {
        return Err(Error::InvalidInput("T1 map length differs from voxel count".into()));
    }
    let bank = FitterBank::new(&dataset.protocol, bounds, options, t1_map.iter().copied())?;
    let fits = (0..dataset.n_voxels)
        .into_par_iter()
        .map(|v| {
            if dataset.mask[v] {
                bank.get(t1_map[v]).fit(&dataset.series(v)).ok()
            } else {
                None
            }
        })
        .collect();
    Ok(ParameterMaps { fits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::signal_curve;

    fn noiseless(theta: KineticParams, protocol: &Protocol, m: usize) -> VoxelSeries {
        let c = signal_curve(theta, protocol).values;
        VoxelSeries::from_repetitions(&vec![c; m]).unwrap()
    }

    #[test]
    fn nll_with_zero_residual_is_log_term() {
        let p = Protocol::brain(0.01);
        let theta = KineticParams::new(60.0, 0.75);
        let s = noiseless(theta, &p, 3);
        let n = 21.0 * 3.0;
        for sigma in [0.01, 0.02] {
            let nll = negative_log_likelihood(&s, theta, &p, sigma);
            let log_term = 0.5 * n * (2.0 * std::f64::consts::PI * sigma * sigma).ln();
            assert!((nll - log_term).abs() < 1e-9 * log_term.abs());
        }
    }

    #[test]
    fn nll_matches_direct_sum() {
        let p = Protocol::brain(0.02);
        let theta = KineticParams::new(40.0, 0.5);
        let reps: Vec<Vec<f64>> = (0..4)
            .map(|m| (0..21).map(|n| ((n * 7 + m * 3) % 11) as f64 * 1e-3).collect())
            .collect();
        let s = VoxelSeries::from_repetitions(&reps).unwrap();
        let times = sample_times(&p);
        let mut direct = 0.0;
        for rep in &reps {
            for (n, x) in rep.iter().enumerate() {
                let r = x - crate::signal::buxton_signal(theta, &p, times[n]);
                direct += r * r / (2.0 * 0.02 * 0.02);
            }
        }
        direct += 0.5 * 84.0 * (2.0 * std::f64::consts::PI * 0.0004f64).ln();
        let nll = negative_log_likelihood(&s, theta, &p, 0.02);
        assert!((nll - direct).abs() < 1e-10 * direct.abs());
    }

    #[test]
    fn grid_init_recovers_node() {
        let p = Protocol::brain(0.001);
        let b = BoundsBox::brain();
        let f = grid_nodes(0.0, 150.0, 32)[13];
        let att = grid_nodes(0.0, 2.0, 32)[9];
        let s = noiseless(KineticParams::new(f, att), &p, 2);
        let init = grid_initialize(&s, &p, &b, (32, 32)).unwrap();
        assert_eq!(init, KineticParams::new(f, att));
    }

    #[test]
    fn grid_init_all_zero_data() {
        let p = Protocol::brain(0.001);
        let s = VoxelSeries::new(21, 2, vec![0.0; 42]).unwrap();
        let init = grid_initialize(&s, &p, &BoundsBox::brain(), (16, 16)).unwrap();
        assert_eq!(init, KineticParams::new(0.0, 0.0));
        assert!(grid_initialize(&s, &p, &BoundsBox::brain(), (8, 32)).is_err());
    }

    #[test]
    fn noiseless_fit_recovers_truth() {
        let p = Protocol::brain(0.001);
        let truth = KineticParams::new(63.7, 0.83);
        let r = mle_fit(&noiseless(truth, &p, 4), &p, &BoundsBox::brain(), &FitOptions::default())
            .unwrap();
        assert!(r.converged);
        assert!(!r.at_boundary);
        assert!(((r.theta_hat.f - truth.f) / truth.f).abs() < 1e-6);
        assert!(((r.theta_hat.att - truth.att) / truth.att).abs() < 1e-6);
    }

    #[test]
    fn unidentifiable_when_bolus_never_arrives() {
        let p = Protocol::brain(0.001);
        let mut b = BoundsBox::brain();
        b.att_max = 4.0;
        let s = noiseless(KineticParams::new(60.0, 3.5), &p, 3);
        let r = mle_fit(&s, &p, &b, &FitOptions::default()).unwrap();
        assert!(r.at_boundary);
        assert!(r.low_signal);
    }

    #[test]
    fn sse_history_is_monotone() {
        let p = Protocol::brain(0.0005);
        let truth = KineticParams::new(80.0, 0.66);
        let clean = signal_curve(truth, &p).values;
        let reps: Vec<Vec<f64>> = (0..5)
            .map(|m| {
                clean
                    .iter()
                    .enumerate()
                    .map(|(n, c)| c + 4e-4 * (((n * 13 + m * 29) % 17) as f64 / 8.0 - 1.0))
                    .collect()
            })
            .collect();
        let s = VoxelSeries::from_repetitions(&reps).unwrap();
        let fitter = Fitter::new(&p, &BoundsBox::brain(), &FitOptions::default()).unwrap();
        let mut h = Vec::new();
        let r = fitter.fit_traced(&s, Some(&mut h)).unwrap();
        assert!(h.len() >= 2);
        assert!(h.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(*h.last().unwrap(), r.sse);
    }

    #[test]
    fn rejects_mismatched_series() {
        let p = Protocol::brain(0.001);
        let s = VoxelSeries::new(3, 1, vec![0.0; 3]).unwrap();
        assert!(mle_fit(&s, &p, &BoundsBox::brain(), &FitOptions::default()).is_err());
        assert!(VoxelSeries::new(3, 1, vec![0.0; 2]).is_err());
        assert!(VoxelSeries::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn grid_init_between_nodes_picks_lowest_sse_node() {
        let p = Protocol::brain(0.001);
        let b = BoundsBox::brain();
        let s = noiseless(KineticParams::new(47.3, 1.13), &p, 2);
        let init = grid_initialize(&s, &p, &b, (32, 32)).unwrap();
        let mut best = (f64::INFINITY, KineticParams::new(0.0, 0.0));
        for &f in &grid_nodes(0.0, 150.0, 32) {
            for &att in &grid_nodes(0.0, 2.0, 32) {
                let theta = KineticParams::new(f, att);
                let nll = negative_log_likelihood(&s, theta, &p, 0.001);
                if nll < best.0 {
                    best = (nll, theta);
                }
            }
        }
        assert_eq!(init, best.1);
    }

    #[test]
    fn estimate_does_not_depend_on_sigma() {
        let p = Protocol::brain(0.001);
        let truth = KineticParams::new(63.7, 0.83);
        let c = signal_curve(truth, &p).values;
        let reps: Vec<Vec<f64>> = (0..3)
            .map(|m| c.iter().enumerate().map(|(n, v)| v + 2e-4 * (((n * 5 + m * 3) % 7) as f64 - 3.0)).collect())
            .collect();
        let s = VoxelSeries::from_repetitions(&reps).unwrap();
        let b = BoundsBox::brain();
        let a = mle_fit(&s, &p, &b, &FitOptions::default()).unwrap();
        let p2 = Protocol { sigma: 0.004, ..p };
        let z = mle_fit(&s, &p2, &b, &FitOptions::default()).unwrap();
        assert_eq!(a.theta_hat, z.theta_hat);
    }
}
