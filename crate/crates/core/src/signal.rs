//! Buxton single-compartment ASL kinetic model.
//!
//! The perfusion-weighted difference signal is the convolution of a
//! box-shaped arterial input (arriving at ATT, lasting `tau`) with the
//! product of the residue function `exp(-f t / lambda)` and tissue
//! relaxation `exp(-t / T1)`. Because every factor is an exponential the
//! convolution has a closed form:
//!
//! ```text
//! dM(t) = 2 alpha f M0b exp(-(t - att) R1app) Phi(k, min(t - att, tau))   t > att
//! R1app = 1/T1 + f/lambda,   k = R1app - 1/T1b,   Phi(k, u) = (e^{k u} - 1) / k
//! ```
//!
//! Perfusion is carried in mL/min/100g at the interface and converted to a
//! per-second rate (`f / 6000`, tissue density 1 g/mL) internally.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// mL/min/100g -> mL/s/mL, assuming tissue density 1 g/mL.
pub const PERFUSION_UNIT_SCALE: f64 = 6000.0;

/// Sample times closer than this to `att` or `att + tau` count as kinks.
pub const KINK_EPS: f64 = 1e-6;

const PHI_SERIES_THRESHOLD: f64 = 1e-6;
const PHI_DERIV_SERIES_THRESHOLD: f64 = 0.5;
const PHI_DERIV_SERIES_TERMS: usize = 24;

/// Physiological parameters of one voxel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KineticParams {
    /// Perfusion, mL/min/100g.
    pub f: f64,
    /// Arterial transit time, seconds.
    pub att: f64,
}

impl KineticParams {
    pub fn new(f: f64, att: f64) -> Self {
        Self { f, att }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.f, self.att]
    }

    pub fn from_array(v: [f64; 2]) -> Self {
        Self { f: v[0], att: v[1] }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f.is_finite() && self.att.is_finite()) || self.f < 0.0 || self.att < 0.0 {
            return Err(Error::InvalidInput(format!(
                "kinetic parameters must be finite and non-negative, got f = {}, att = {}",
                self.f, self.att
            )));
        }
        Ok(())
    }
}

/// How the protocol's PLD list maps onto model time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeConvention {
    /// Sample time equals the PLD.
    #[default]
    PldIsTime,
    /// Readout after the bolus: sample time is `PLD + tau`.
    PldPlusTau,
}

/// Acquisition settings plus the fixed constants of the kinetic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub plds: Vec<f64>,
    pub tau: f64,
    pub alpha: f64,
    pub m0b: f64,
    pub lambda_bt: f64,
    pub t1b: f64,
    pub t1_tissue: f64,
    pub sigma: f64,
    #[serde(default)]
    pub time_convention: TimeConvention,
}

/// The 21-point PLD grid: 0..1 s in 0.1 s steps, then 1.2..3 s in 0.2 s steps.
pub fn standard_plds() -> Vec<f64> {
    let early = (0..=10).map(|i| i as f64 / 10.0);
    let late = (6..=15).map(|i| i as f64 / 5.0);
    early.chain(late).collect()
}

impl Protocol {
    /// Brain protocol: 21 PLDs, tau = 1.5 s, tissue T1 = 1.2 s.
    pub fn brain(sigma: f64) -> Self {
        Self {
            plds: standard_plds(),
            tau: 1.5,
            alpha: 0.85,
            m0b: 1.0,
            lambda_bt: 0.9,
            t1b: 1.65,
            t1_tissue: 1.2,
            sigma,
            time_convention: TimeConvention::PldIsTime,
        }
    }

    /// Kidney protocol: same acquisition, tissue T1 = 1.4 s.
    pub fn kidney(sigma: f64) -> Self {
        Self {
            t1_tissue: 1.4,
            ..Self::brain(sigma)
        }
    }

    pub fn n_samples(&self) -> usize {
        self.plds.len()
    }

    pub fn with_t1_tissue(&self, t1_tissue: f64) -> Self {
        Self {
            t1_tissue,
            ..self.clone()
        }
    }

    pub fn with_plds(&self, plds: Vec<f64>) -> Self {
        Self {
            plds,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(format!("protocol: {what}")));
        if self.plds.len() < 2 {
            return bad("at least two PLDs are required");
        }
        if self.plds.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return bad("PLDs must be finite and non-negative");
        }
        if self.plds.windows(2).any(|w| w[1] <= w[0]) {
            return bad("PLDs must be strictly increasing");
        }
        let positive = [
            ("tau", self.tau),
            ("m0b", self.m0b),
            ("lambda_bt", self.lambda_bt),
            ("t1b", self.t1b),
            ("t1_tissue", self.t1_tissue),
            ("sigma", self.sigma),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "protocol: {name} must be positive, got {v}"
                )));
            }
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0, 1]");
        }
        Ok(())
    }
}

/// Model time of each sample.
pub fn sample_times(protocol: &Protocol) -> Vec<f64> {
    match protocol.time_convention {
        TimeConvention::PldIsTime => protocol.plds.clone(),
        TimeConvention::PldPlusTau => protocol.plds.iter().map(|t| t + protocol.tau).collect(),
    }
}

/// Noise-free signal sampled at the protocol's sample times.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalCurve {
    pub values: Vec<f64>,
}

impl SignalCurve {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_amplitude(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }
}

/// Signal value and its first and second derivatives with respect to
/// `(f, att)` in native units.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SampleDerivatives {
    pub value: f64,
    pub d_f: f64,
    pub d_att: f64,
    pub d_ff: f64,
    pub d_f_att: f64,
    pub d_att_att: f64,
}

/// Precomputed constants for evaluating the kinetic model.
///
/// `outflow` adds a venous clearance rate (1/s) to the residue function;
/// zero recovers the plain Buxton model bit for bit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinetics {
    prefactor: f64,
    inv_lambda: f64,
    r1_base: f64,
    r1b: f64,
    tau: f64,
    t1_tissue: f64,
    outflow: f64,
}

impl Kinetics {
    pub fn from_protocol(protocol: &Protocol) -> Self {
        Self::new(protocol, protocol.t1_tissue, 0.0)
    }

    pub fn new(protocol: &Protocol, t1_tissue: f64, outflow: f64) -> Self {
        Self {
            prefactor: 2.0 * protocol.alpha * protocol.m0b,
            inv_lambda: 1.0 / protocol.lambda_bt,
            r1_base: 1.0 / t1_tissue + outflow,
            r1b: 1.0 / protocol.t1b,
            tau: protocol.tau,
            t1_tissue,
            outflow,
        }
    }

    pub fn with_t1_tissue(&self, t1_tissue: f64) -> Self {
        Self {
            r1_base: 1.0 / t1_tissue + self.outflow,
            t1_tissue,
            ..*self
        }
    }

    pub fn with_outflow(&self, outflow: f64) -> Self {
        Self {
            r1_base: 1.0 / self.t1_tissue + outflow,
            outflow,
            ..*self
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn signal(&self, params: KineticParams, t: f64) -> f64 {
        let d = t - params.att;
        if d <= 0.0 {
            return 0.0;
        }
        let f_si = params.f / PERFUSION_UNIT_SCALE;
        let r1app = self.r1_base + f_si * self.inv_lambda;
        let k = r1app - self.r1b;
        let u = d.min(self.tau);
        self.prefactor * f_si * (-d * r1app).exp() * phi(k, u)
    }

    pub fn curve(&self, params: KineticParams, times: &[f64]) -> SignalCurve {
        SignalCurve {
            values: times.iter().map(|&t| self.signal(params, t)).collect(),
        }
    }

    pub fn curve_into(&self, params: KineticParams, times: &[f64], out: &mut [f64]) {
        for (o, &t) in out.iter_mut().zip(times) {
            *o = self.signal(params, t);
        }
    }

    /// Analytic value, gradient and Hessian at one sample time, with no
    /// kink check. At exact kinks the one-sided branch `t - att < tau` is
    /// taken for the plateau and zero for `t <= att`.
    pub fn derivatives_unchecked(&self, params: KineticParams, t: f64) -> SampleDerivatives {
        let d = t - params.att;
        if d <= 0.0 {
            return SampleDerivatives::default();
        }
        let c = self.prefactor;
        let a = self.inv_lambda;
        let f_si = params.f / PERFUSION_UNIT_SCALE;
        let r = self.r1_base + f_si * a;
        let k = r - self.r1b;
        let in_bolus = d < self.tau;
        let u = if in_bolus { d } else { self.tau };

        let (p, p_k, p_kk) = phi_with_k_derivatives(k, u);
        let eku = (k * u).exp();
        let (p_u, p_uu, p_ku) = if in_bolus {
            (eku, k * eku, u * eku)
        } else {
            (0.0, 0.0, 0.0)
        };
        let e = (-d * r).exp();

        let g = e * p;
        let g_f = a * e * (p_k - d * p);
        let g_d = e * (p_u - r * p);
        let g_ff = a * a * e * (d * d * p - 2.0 * d * p_k + p_kk);
        let g_fd = a * e * (-r * (p_k - d * p) + p_ku - p - d * p_u);
        let g_dd = e * (r * r * p - 2.0 * r * p_u + p_uu);

        let s = c * f_si * g;
        let s_f = c * (g + f_si * g_f);
        let s_ff = c * (2.0 * g_f + f_si * g_ff);
        let s_d = c * f_si * g_d;
        let s_dd = c * f_si * g_dd;
        let s_fd = c * (g_d + f_si * g_fd);

        let unit = PERFUSION_UNIT_SCALE;
        SampleDerivatives {
            value: s,
            d_f: s_f / unit,
            d_att: -s_d,
            d_ff: s_ff / (unit * unit),
            d_f_att: -s_fd / unit,
            d_att_att: s_dd,
        }
    }

    /// Fails with [`Error::KinkProximity`] if any time sits on a kink.
    pub fn check_kinks(&self, params: KineticParams, times: &[f64]) -> Result<()> {
        for &t in times {
            if (t - params.att).abs() < KINK_EPS || (t - params.att - self.tau).abs() < KINK_EPS {
                return Err(Error::KinkProximity {
                    time: t,
                    att: params.att,
                    eps: KINK_EPS,
                });
            }
        }
        Ok(())
    }

    /// Trapezoid-rule convolution of the input, residue and relaxation
    /// functions over `[0, t]`. The input function jumps at `att` and
    /// `att + tau`, so the grid is aligned to those breakpoints: the zero
    /// pieces contribute nothing and the bolus window receives its share of
    /// the `n_grid` intervals in proportion to its length.
    pub fn signal_by_quadrature(&self, params: KineticParams, t: f64, n_grid: usize) -> f64 {
        if t <= params.att || params.f == 0.0 {
            return 0.0;
        }
        let f_si = params.f / PERFUSION_UNIT_SCALE;
        let residue_rate = f_si * self.inv_lambda + self.outflow;
        let relax_rate = 1.0 / self.t1_tissue;
        let kernel = |s: f64| {
            let lag = t - s;
            (-residue_rate * lag).exp() * (-relax_rate * lag).exp()
        };

        // only the bolus window carries a non-zero input; its endpoints take
        // the limit from inside the window
        let lo = params.att;
        let hi = (params.att + self.tau).min(t);
        let total = t;
        let n = ((n_grid as f64) * (hi - lo) / total).ceil().max(1.0) as usize;
        let h = (hi - lo) / n as f64;
        let integrand = |s: f64| (-(s - params.att) * self.r1b).exp() * kernel(s);
        let mut acc = 0.5 * (integrand(lo) + integrand(hi));
        for i in 1..n {
            acc += integrand(lo + i as f64 * h);
        }
        let integral = acc * h;
        self.prefactor * f_si * integral
    }
}

/// `(exp(k u) - 1) / k`, with a Taylor series when `|k u|` is tiny.
pub fn phi(k: f64, u: f64) -> f64 {
    let x = k * u;
    if x.abs() < PHI_SERIES_THRESHOLD {
        u * (1.0 + x / 2.0 + x * x / 6.0 + x * x * x / 24.0)
    } else {
        x.exp_m1() / k
    }
}

/// `(Phi, dPhi/dk, d2Phi/dk2)` at fixed `u`.
fn phi_with_k_derivatives(k: f64, u: f64) -> (f64, f64, f64) {
    let x = k * u;
    if x.abs() < PHI_DERIV_SERIES_THRESHOLD {
        // Phi = sum_n q_n k^n with q_n = u^{n+1} / (n+1)!
        let mut q = u;
        let (mut p, mut p_k, mut p_kk) = (0.0, 0.0, 0.0);
        let mut kpow = 1.0; // k^n
        let mut kpow1 = 0.0; // k^{n-1}
        let mut kpow2 = 0.0; // k^{n-2}
        for n in 0..PHI_DERIV_SERIES_TERMS {
            let nf = n as f64;
            p += q * kpow;
            p_k += nf * q * kpow1;
            p_kk += nf * (nf - 1.0) * q * kpow2;
            kpow2 = if n == 0 { 1.0 } else { kpow1 };
            kpow1 = kpow;
            kpow *= k;
            q *= u / (nf + 2.0);
        }
        (p, p_k, p_kk)
    } else {
        let e = x.exp();
        let p = x.exp_m1() / k;
        let p_k = (u * e - p) / k;
        let p_kk = (u * u * e - 2.0 * p_k) / k;
        (p, p_k, p_kk)
    }
}

/// Closed-form Buxton signal at time `t`.
pub fn buxton_signal(params: KineticParams, protocol: &Protocol, t: f64) -> f64 {
    Kinetics::from_protocol(protocol).signal(params, t)
}

/// Numerical convolution of the Buxton model; a validation reference for
/// [`buxton_signal`].
pub fn buxton_signal_oracle(
    params: KineticParams,
    protocol: &Protocol,
    t: f64,
    n_grid: usize,
) -> f64 {
    Kinetics::from_protocol(protocol).signal_by_quadrature(params, t, n_grid)
}

pub fn signal_curve(params: KineticParams, protocol: &Protocol) -> SignalCurve {
    Kinetics::from_protocol(protocol).curve(params, &sample_times(protocol))
}

/// N x 2 sensitivity matrix, columns `[d/df, d/datt]`.
pub fn jacobian(params: KineticParams, protocol: &Protocol) -> Result<Vec<[f64; 2]>> {
    let kin = Kinetics::from_protocol(protocol);
    let times = sample_times(protocol);
    kin.check_kinks(params, &times)?;
    Ok(times
        .iter()
        .map(|&t| {
            let d = kin.derivatives_unchecked(params, t);
            [d.d_f, d.d_att]
        })
        .collect())
}

/// Per-sample second-derivative matrices `[[ff, f_att], [f_att, att_att]]`.
pub fn model_hessians(params: KineticParams, protocol: &Protocol) -> Result<Vec<[[f64; 2]; 2]>> {
    let kin = Kinetics::from_protocol(protocol);
    let times = sample_times(protocol);
    kin.check_kinks(params, &times)?;
    Ok(times
        .iter()
        .map(|&t| {
            let d = kin.derivatives_unchecked(params, t);
            [[d.d_ff, d.d_f_att], [d.d_f_att, d.d_att_att]]
        })
        .collect())
}
