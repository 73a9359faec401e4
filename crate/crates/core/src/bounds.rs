//! Classical and misspecified Cramér–Rao bounds from repeated measurements.
//!
//! Under the assumed Gaussian model the per-repetition log-likelihood has
//! score `J^T r / sigma^2` and Hessian `(sum_n r_n T_n - J^T J) / sigma^2`,
//! where `r` are residuals, `J` the model Jacobian and `T_n` the per-sample
//! model Hessians. Averaging these over the `M` repetitions at the fitted
//! parameters gives the empirical `A` (expected Hessian) and `B` (score outer
//! product). The classical bound is `-A^{-1}`, the misspecified bound the
//! sandwich `A^{-1} B A^{-1}`; both are divided by `M` to compare against the
//! variance of an estimate built from `M` repetitions.
//!
//! The two bounds are compared through `P = W C_M W` with `W = C_C^{-1/2}`.
//! Its eigenvalues are the generalized eigenvalues of `(C_M, C_C)` and tend to
//! one when the model is correctly specified.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::VoxelSeries;
use crate::matrix::Matrix2;
use crate::signal::{sample_times, KineticParams, Kinetics, Protocol, KINK_EPS};

/// Fisher information with a larger condition number is treated as singular.
pub const INFORMATION_MAX_CONDITION: f64 = 1e12;

/// Eigenvalue ratio below which the congruence metric is degenerate.
pub const DEGENERATE_EIGEN_RATIO: f64 = 1e-15;

/// Model values, Jacobian rows and per-sample Hessians at one parameter point.
#[derive(Debug, Clone)]
pub struct LocalModel {
    pub values: Vec<f64>,
    pub jacobian: Vec<[f64; 2]>,
    pub hessians: Vec<Matrix2>,
}

impl LocalModel {
    pub fn at(kinetics: &Kinetics, times: &[f64], theta: KineticParams) -> Result<Self> {
        kinetics.check_kinks(theta, times)?;
        let mut values = Vec::with_capacity(times.len());
        let mut jacobian = Vec::with_capacity(times.len());
        let mut hessians = Vec::with_capacity(times.len());
        for &t in times {
            let d = kinetics.derivatives_unchecked(theta, t);
            // same evaluation path as the fitter, so residuals vanish at the model
            values.push(kinetics.signal(theta, t));
            jacobian.push([d.d_f, d.d_att]);
            hessians.push(Matrix2::new(d.d_ff, d.d_f_att, d.d_att_att));
        }
        Ok(Self {
            values,
            jacobian,
            hessians,
        })
    }

    /// `J^T J`
    pub fn gram(&self) -> Matrix2 {
        self.jacobian
            .iter()
            .fold(Matrix2::ZERO, |acc, j| acc + Matrix2::outer(*j))
    }

    fn score(&self, x: &[f64], inv_var: f64) -> [f64; 2] {
        let mut s = [0.0; 2];
        for ((xi, fi), j) in x.iter().zip(&self.values).zip(&self.jacobian) {
            let r = xi - fi;
            s[0] += j[0] * r;
            s[1] += j[1] * r;
        }
        [s[0] * inv_var, s[1] * inv_var]
    }

    fn hessian(&self, x: &[f64], inv_var: f64, gram: &Matrix2) -> Matrix2 {
        let curvature = x
            .iter()
            .zip(&self.values)
            .zip(&self.hessians)
            .fold(Matrix2::ZERO, |acc, ((xi, fi), t)| acc + t.scale(xi - fi));
        (curvature - *gram).scale(inv_var)
    }
}

fn local_model(theta: KineticParams, protocol: &Protocol) -> Result<LocalModel> {
    LocalModel::at(&Kinetics::from_protocol(protocol), &sample_times(protocol), theta)
}

/// Score of one repetition under the Gaussian model.
pub fn score_gaussian(x_m: &[f64], theta: KineticParams, protocol: &Protocol) -> Result<[f64; 2]> {
    check_len(x_m, protocol)?;
    let lm = local_model(theta, protocol)?;
    Ok(lm.score(x_m, 1.0 / (protocol.sigma * protocol.sigma)))
}

/// Hessian of one repetition's log-likelihood.
pub fn hessian_loglik_gaussian(
    x_m: &[f64],
    theta: KineticParams,
    protocol: &Protocol,
) -> Result<Matrix2> {
    check_len(x_m, protocol)?;
    let lm = local_model(theta, protocol)?;
    Ok(lm.hessian(x_m, 1.0 / (protocol.sigma * protocol.sigma), &lm.gram()))
}

fn check_len(x: &[f64], protocol: &Protocol) -> Result<()> {
    if x.len() != protocol.n_samples() {
        return Err(Error::InvalidInput(format!(
            "repetition has {} samples, protocol has {}",
            x.len(),
            protocol.n_samples()
        )));
    }
    Ok(())
}

fn require_reps(series: &VoxelSeries) -> Result<()> {
    if series.n_reps() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: series.n_reps(),
        });
    }
    Ok(())
}

fn mean_hessian(series: &VoxelSeries, lm: &LocalModel, inv_var: f64) -> Matrix2 {
    let gram = lm.gram();
    let m = series.n_reps();
    let sum = (0..m).fold(Matrix2::ZERO, |acc, rep| {
        acc + lm.hessian(&series.repetition(rep), inv_var, &gram)
    });
    sum.scale(1.0 / m as f64)
}

fn mean_score_outer(series: &VoxelSeries, lm: &LocalModel, inv_var: f64) -> Matrix2 {
    let m = series.n_reps();
    let sum = (0..m).fold(Matrix2::ZERO, |acc, rep| {
        acc + Matrix2::outer(lm.score(&series.repetition(rep), inv_var))
    });
    sum.scale(1.0 / m as f64)
}

/// Mean per-repetition Hessian at `theta_hat`; must be negative definite.
pub fn empirical_a(series: &VoxelSeries, theta_hat: KineticParams, protocol: &Protocol) -> Result<Matrix2> {
    require_reps(series)?;
    series.check_protocol(protocol)?;
    let lm = local_model(theta_hat, protocol)?;
    let a = mean_hessian(series, &lm, 1.0 / (protocol.sigma * protocol.sigma));
    a.require_negative_definite()?;
    Ok(a)
}

/// Mean per-repetition score outer product at `theta_hat`.
pub fn empirical_b(series: &VoxelSeries, theta_hat: KineticParams, protocol: &Protocol) -> Result<Matrix2> {
    require_reps(series)?;
    series.check_protocol(protocol)?;
    let lm = local_model(theta_hat, protocol)?;
    Ok(mean_score_outer(series, &lm, 1.0 / (protocol.sigma * protocol.sigma)))
}

fn crb_from_gram(gram: &Matrix2, sigma: f64, m: usize) -> Result<Matrix2> {
    let condition = gram.condition();
    if !(condition <= INFORMATION_MAX_CONDITION) {
        return Err(Error::SingularInformation { condition });
    }
    Ok(gram.inverse()?.scale(sigma * sigma / m as f64))
}

/// `sigma^2 (J^T J)^{-1} / m`.
pub fn crb_theoretical(theta: KineticParams, protocol: &Protocol, m: usize) -> Result<Matrix2> {
    if m == 0 {
        return Err(Error::InvalidInput("repetition count must be positive".into()));
    }
    let lm = local_model(theta, protocol)?;
    crb_from_gram(&lm.gram(), protocol.sigma, m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sandwich {
    /// `A^{-1} B A^{-1} / m`
    pub c_mcrb: Matrix2,
    /// `-A^{-1} / m`
    pub c_crb: Matrix2,
}

pub fn mcrb_sandwich(a_hat: &Matrix2, b_hat: &Matrix2, m: usize) -> Result<Sandwich> {
    if m == 0 {
        return Err(Error::InvalidInput("repetition count must be positive".into()));
    }
    a_hat.require_negative_definite()?;
    let a_inv = a_hat.inverse()?;
    let scale = 1.0 / m as f64;
    Ok(Sandwich {
        c_mcrb: a_inv.sandwich(b_hat).scale(scale),
        c_crb: a_inv.scale(-scale),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Congruence {
    pub p_hat: Matrix2,
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub kappa: f64,
}

/// Whiten `c_mcrb` by `c_crb^{-1/2}` and summarize its spectrum.
pub fn congruence_metric(c_crb: &Matrix2, c_mcrb: &Matrix2) -> Result<Congruence> {
    let w = c_crb.inv_sqrt()?;
    let p_hat = c_mcrb.congruence(&w);
    let [lambda_max, lambda_min] = p_hat.eigenvalues();
    if !(lambda_max > 0.0) || !(lambda_min >= DEGENERATE_EIGEN_RATIO * lambda_max) {
        return Err(Error::DegenerateEigen {
            lambda_min,
            lambda_max,
        });
    }
    Ok(Congruence {
        p_hat,
        lambda_max,
        lambda_min,
        kappa: lambda_max / lambda_min,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub a_hat: Matrix2,
    pub b_hat: Matrix2,
    pub c_crb_empirical: Matrix2,
    pub c_crb_theoretical: Matrix2,
    pub c_mcrb: Matrix2,
    pub p_hat: Matrix2,
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub kappa: f64,
    pub m_used: usize,
    /// Parameter point actually used (att may be nudged off a kink).
    pub theta_eval: KineticParams,
}

/// Precomputed model context for bounds over many voxels.
#[derive(Debug, Clone)]
pub struct BoundsContext {
    kinetics: Kinetics,
    times: Vec<f64>,
    sigma: f64,
}

impl BoundsContext {
    pub fn new(protocol: &Protocol) -> Self {
        Self {
            kinetics: Kinetics::from_protocol(protocol),
            times: sample_times(protocol),
            sigma: protocol.sigma,
        }
    }

    /// Local model at `theta`, stepping att by `2 * KINK_EPS` off a kink
    /// (forward first, then backward).
    fn local_model_nudged(&self, theta: KineticParams) -> Result<(LocalModel, KineticParams)> {
        match LocalModel::at(&self.kinetics, &self.times, theta) {
            Err(Error::KinkProximity { .. }) => {
                let mut last = None;
                for shift in [2.0 * KINK_EPS, -2.0 * KINK_EPS] {
                    let moved = KineticParams::new(theta.f, (theta.att + shift).max(0.0));
                    match LocalModel::at(&self.kinetics, &self.times, moved) {
                        Ok(lm) => return Ok((lm, moved)),
                        Err(e) => last = Some(e),
                    }
                }
                Err(last.expect("at least one retry"))
            }
            other => other.map(|lm| (lm, theta)),
        }
    }

    /// Theoretical CRB for `m` repetitions at `theta` (kink-nudged like [`BoundsContext::report`]).
    pub fn crb_theoretical(&self, theta: KineticParams, m: usize) -> Result<Matrix2> {
        if m == 0 {
            return Err(Error::InvalidInput("repetition count must be positive".into()));
        }
        let (lm, _) = self.local_model_nudged(theta)?;
        crb_from_gram(&lm.gram(), self.sigma, m)
    }

    pub fn report(&self, series: &VoxelSeries, theta_hat: KineticParams) -> Result<BoundsReport> {
        require_reps(series)?;
        if series.n_plds() != self.times.len() {
            return Err(Error::InvalidInput("series and protocol disagree on N".into()));
        }
        let (lm, theta_eval) = self.local_model_nudged(theta_hat)?;
        let inv_var = 1.0 / (self.sigma * self.sigma);
        let m = series.n_reps();
        let a_hat = mean_hessian(series, &lm, inv_var);
        let b_hat = mean_score_outer(series, &lm, inv_var);
        let sandwich = mcrb_sandwich(&a_hat, &b_hat, m)?;
        let c_crb_theoretical = crb_from_gram(&lm.gram(), self.sigma, m)?;
        let cong = congruence_metric(&sandwich.c_crb, &sandwich.c_mcrb)?;
        Ok(BoundsReport {
            a_hat,
            b_hat,
            c_crb_empirical: sandwich.c_crb,
            c_crb_theoretical,
            c_mcrb: sandwich.c_mcrb,
            p_hat: cong.p_hat,
            lambda_max: cong.lambda_max,
            lambda_min: cong.lambda_min,
            kappa: cong.kappa,
            m_used: m,
            theta_eval,
        })
    }
}

/// Full per-voxel bound pipeline at the fitted parameters.
pub fn voxel_bounds_report(
    series: &VoxelSeries,
    theta_hat: KineticParams,
    protocol: &Protocol,
) -> Result<BoundsReport> {
    BoundsContext::new(protocol).report(series, theta_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::signal_curve;

    fn proto() -> Protocol {
        Protocol::brain(5e-4)
    }

    #[test]
    fn score_vanishes_at_model_and_scales_with_variance() {
        let p = proto();
        let theta = KineticParams::new(60.0, 0.75);
        let clean = signal_curve(theta, &p).values;
        assert_eq!(score_gaussian(&clean, theta, &p).unwrap(), [0.0, 0.0]);
        let shifted: Vec<f64> = clean.iter().map(|x| x + 1e-4).collect();
        let s1 = score_gaussian(&shifted, theta, &p).unwrap();
        let p2 = Protocol { sigma: 1e-3, ..p };
        let s2 = score_gaussian(&shifted, theta, &p2).unwrap();
        assert!((s1[0] / 4.0 - s2[0]).abs() < 1e-12 * s1[0].abs());
        assert!((s1[1] / 4.0 - s2[1]).abs() < 1e-12 * s1[1].abs());
    }

    #[test]
    fn hessian_at_model_is_negative_gram() {
        let p = proto();
        let theta = KineticParams::new(60.0, 0.75);
        let clean = signal_curve(theta, &p).values;
        let h = hessian_loglik_gaussian(&clean, theta, &p).unwrap();
        let gram = local_model(theta, &p).unwrap().gram();
        let expect = -gram.scale(1.0 / (p.sigma * p.sigma));
        assert!((h - expect).max_abs() <= 1e-12 * expect.max_abs());
    }

    #[test]
    fn identical_repetitions_match_single() {
        let p = proto();
        let theta = KineticParams::new(60.0, 0.75);
        let x: Vec<f64> = signal_curve(theta, &p).values.iter().map(|v| v * 1.01).collect();
        let s2 = VoxelSeries::from_repetitions(&vec![x.clone(); 2]).unwrap();
        let s5 = VoxelSeries::from_repetitions(&vec![x.clone(); 5]).unwrap();
        let a2 = mean_hessian(&s2, &local_model(theta, &p).unwrap(), 1.0 / (p.sigma * p.sigma));
        let a5 = empirical_a(&s5, theta, &p).unwrap();
        assert!((a2 - a5).max_abs() <= 1e-12 * a5.max_abs());
        let single = hessian_loglik_gaussian(&x, theta, &p).unwrap();
        assert!((single - a5).max_abs() <= 1e-12 * a5.max_abs());
    }

    #[test]
    fn noiseless_b_is_zero_and_report_degenerate() {
        let p = proto();
        let theta = KineticParams::new(60.0, 0.75);
        let clean = signal_curve(theta, &p).values;
        let s = VoxelSeries::from_repetitions(&vec![clean; 3]).unwrap();
        assert_eq!(empirical_b(&s, theta, &p).unwrap(), Matrix2::ZERO);
        let a = empirical_a(&s, theta, &p).unwrap();
        assert_eq!(mcrb_sandwich(&a, &Matrix2::ZERO, 3).unwrap().c_mcrb, Matrix2::ZERO);
        assert!(matches!(
            voxel_bounds_report(&s, theta, &p),
            Err(Error::DegenerateEigen { .. })
        ));
    }

    #[test]
    fn single_repetition_rejected() {
        let p = proto();
        let theta = KineticParams::new(60.0, 0.75);
        let s = VoxelSeries::from_repetitions(&[signal_curve(theta, &p).values]).unwrap();
        assert!(matches!(
            empirical_b(&s, theta, &p),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn crb_scaling() {
        let p = proto();
        let theta = KineticParams::new(60.0, 0.75);
        let c1 = crb_theoretical(theta, &p, 4).unwrap();
        let c2 = crb_theoretical(theta, &p, 8).unwrap();
        assert!((c1.scale(0.5) - c2).max_abs() <= 1e-15 * c1.max_abs());
        let p2 = Protocol { sigma: 1e-3, ..p.clone() };
        let c3 = crb_theoretical(theta, &p2, 4).unwrap();
        assert!((c1.scale(4.0) - c3).max_abs() <= 1e-14 * c3.max_abs());
    }

    #[test]
    fn crb_singular_without_signal() {
        let p = proto();
        let theta = KineticParams::new(0.0, 0.75);
        assert!(matches!(
            crb_theoretical(theta, &p, 4),
            Err(Error::SingularInformation { .. })
        ));
    }

    #[test]
    fn sandwich_identities() {
        let a = Matrix2::new(-4.0, 1.0, -2.0);
        let s = mcrb_sandwich(&a, &(-a), 5).unwrap();
        assert!((s.c_mcrb - s.c_crb).max_abs() < 1e-15);
        let c = congruence_metric(&s.c_crb, &s.c_mcrb).unwrap();
        assert!((c.kappa - 1.0).abs() < 1e-12);
        assert!(mcrb_sandwich(&Matrix2::new(1.0, 0.0, -1.0), &a, 2).is_err());
    }

    #[test]
    fn congruence_of_scaled_bound() {
        let c = Matrix2::new(3.0, 0.4, 0.7);
        let id = congruence_metric(&c, &c).unwrap();
        assert!((id.p_hat - Matrix2::IDENTITY).max_abs() < 1e-12);
        let two = congruence_metric(&c, &c.scale(2.0)).unwrap();
        assert!((two.lambda_max - 2.0).abs() < 1e-12);
        assert!((two.lambda_min - 2.0).abs() < 1e-12);
        assert!((two.kappa - 1.0).abs() < 1e-12);
        assert!(matches!(
            congruence_metric(&Matrix2::new(1.0, 2.0, 1.0), &c),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    fn random_spd(rng: &mut rand_chacha::ChaCha8Rng) -> Matrix2 {
        use rand::Rng;
        let a: f64 = rng.random_range(0.1..10.0);
        let c: f64 = rng.random_range(0.1..10.0);
        let r: f64 = rng.random_range(-0.95..0.95);
        Matrix2::new(a, r * (a * c).sqrt(), c)
    }

    #[test]
    fn sandwich_matches_direct_algebra() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for m in 2..40 {
            let a = -random_spd(&mut rng);
            let b = random_spd(&mut rng);
            let s = mcrb_sandwich(&a, &b, m).unwrap();
            // inverse and products written out entry by entry
            let det = a.a * a.c - a.b * a.b;
            let (ia, ib, ic) = (a.c / det, -a.b / det, a.a / det);
            let (t11, t12) = (ia * b.a + ib * b.b, ia * b.b + ib * b.c);
            let (t21, t22) = (ib * b.a + ic * b.b, ib * b.b + ic * b.c);
            let mf = m as f64;
            let direct = Matrix2::new(
                (t11 * ia + t12 * ib) / mf,
                (t11 * ib + t12 * ic) / mf,
                (t21 * ib + t22 * ic) / mf,
            );
            assert!((s.c_mcrb - direct).max_abs() <= 1e-12 * direct.max_abs());
            let crb = Matrix2::new(-ia / mf, -ib / mf, -ic / mf);
            assert!((s.c_crb - crb).max_abs() <= 1e-12 * crb.max_abs());
        }
    }

    #[test]
    fn congruence_eigenvalues_solve_generalized_problem() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let c = random_spd(&mut rng);
            let m = random_spd(&mut rng);
            let r = congruence_metric(&c, &m).unwrap();
            // det(M - l C) = 0 as a quadratic in l
            let qa = c.a * c.c - c.b * c.b;
            let qb = -(m.a * c.c + m.c * c.a - 2.0 * m.b * c.b);
            let qc = m.a * m.c - m.b * m.b;
            let disc = (qb * qb - 4.0 * qa * qc).max(0.0).sqrt();
            let hi = (-qb + disc) / (2.0 * qa);
            let lo = qc / (qa * hi);
            assert!((r.lambda_max - hi).abs() <= 1e-9 * hi, "{} vs {hi}", r.lambda_max);
            assert!((r.lambda_min - lo).abs() <= 1e-9 * hi, "{} vs {lo}", r.lambda_min);
            assert!(r.kappa >= 1.0);
        }
    }
}
