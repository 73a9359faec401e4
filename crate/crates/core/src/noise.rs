//! Gaussian and Rician measurement noise.
//!
//! Every draw comes from a ChaCha stream keyed by `(seed, voxel,
//! repetition, bootstrap)`, so results never depend on evaluation order or
//! thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::SignalCurve;

/// Minimum background sample count for [`estimate_sigma_background`].
pub const MIN_BACKGROUND_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    Rician,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Per-channel standard deviation.
    pub sigma: f64,
    pub kind: NoiseKind,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, kind: NoiseKind, seed: u64) -> Self {
        Self { sigma, kind, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "noise sigma must be non-negative, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Counter triple identifying one independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct StreamId {
    pub voxel: u64,
    pub repetition: u64,
    pub bootstrap: u64,
}

impl StreamId {
    pub fn new(voxel: u64, repetition: u64, bootstrap: u64) -> Self {
        Self {
            voxel,
            repetition,
            bootstrap,
        }
    }
}

/// Purpose tag so unrelated consumers of the same counters never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum StreamDomain {
    Noise = 0,
    Phantom = 1,
    Bootstrap = 2,
}

pub(crate) fn stream_rng(seed: u64, domain: StreamDomain, id: StreamId) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&id.voxel.to_le_bytes());
    key[16..24].copy_from_slice(&id.repetition.to_le_bytes());
    key[24..32].copy_from_slice(&id.bootstrap.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(domain as u64);
    rng
}

/// One noisy realization of `clean`.
pub fn add_noise(clean: &SignalCurve, spec: &NoiseSpec, stream: StreamId) -> SignalCurve {
    let mut rng = stream_rng(spec.seed, StreamDomain::Noise, stream);
    let sigma = spec.sigma;
    let values = clean
        .values
        .iter()
        .map(|&s| match spec.kind {
            NoiseKind::Gaussian => {
                let n: f64 = StandardNormal.sample(&mut rng);
                s + sigma * n
            }
            NoiseKind::Rician => {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                (s + sigma * re).hypot(sigma * im)
            }
        })
        .collect();
    SignalCurve { values }
}

/// Rayleigh estimate `sqrt(mean(x^2) / 2)` from zero-signal magnitude samples.
pub fn estimate_sigma_background(samples: &[f64]) -> Result<f64> {
    if samples.len() < MIN_BACKGROUND_SAMPLES {
        return Err(Error::InsufficientSamples {
            needed: MIN_BACKGROUND_SAMPLES,
            got: samples.len(),
        });
    }
    if let Some(bad) = samples.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::InvalidInput(format!(
            "background magnitudes must be finite and non-negative, got {bad}"
        )));
    }
    let mean_sq = samples.iter().map(|x| x * x).sum::<f64>() / samples.len() as f64;
    Ok((mean_sq / 2.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(v: Vec<f64>) -> SignalCurve {
        SignalCurve { values: v }
    }

    #[test]
    fn deterministic_per_stream() {
        let clean = curve(vec![1.0, 2.0, 3.0]);
        let spec = NoiseSpec::new(0.1, NoiseKind::Rician, 7);
        let a = add_noise(&clean, &spec, StreamId::new(3, 4, 0));
        let _other = add_noise(&clean, &spec, StreamId::new(9, 9, 9));
        let b = add_noise(&clean, &spec, StreamId::new(3, 4, 0));
        assert_eq!(a, b);
        let c = add_noise(&clean, &spec, StreamId::new(3, 5, 0));
        assert_ne!(a, c);
        let d = add_noise(&clean, &NoiseSpec { seed: 8, ..spec }, StreamId::new(3, 4, 0));
        assert_ne!(a, d);
    }

    #[test]
    fn rician_is_nonnegative_and_tends_to_magnitude() {
        let clean = curve(vec![-0.5, 0.0, 0.25, 4.0]);
        let spec = NoiseSpec::new(1.0, NoiseKind::Rician, 1);
        for v in 0..200 {
            let x = add_noise(&clean, &spec, StreamId::new(v, 0, 0));
            assert!(x.values.iter().all(|v| *v >= 0.0));
        }
        let tiny = NoiseSpec::new(1e-12, NoiseKind::Rician, 1);
        let x = add_noise(&clean, &tiny, StreamId::default());
        for (xi, ci) in x.values.iter().zip(&clean.values) {
            assert!((xi - ci.abs()).abs() < 1e-10);
        }
    }

    #[test]
    fn background_estimator_edge_cases() {
        assert!(matches!(
            estimate_sigma_background(&[]),
            Err(Error::InsufficientSamples { needed: 100, got: 0 })
        ));
        let c = 0.3;
        let s = estimate_sigma_background(&vec![c; 150]).unwrap();
        assert!((s - c / 2f64.sqrt()).abs() < 1e-15);
        assert!(estimate_sigma_background(&vec![-1.0; 150]).is_err());
    }

    #[test]
    fn sigma_must_be_non_negative() {
        assert!(NoiseSpec::new(0.0, NoiseKind::Gaussian, 0).validate().is_ok());
        assert!(NoiseSpec::new(-1e-3, NoiseKind::Gaussian, 0).validate().is_err());
        assert!(NoiseSpec::new(f64::NAN, NoiseKind::Rician, 0).validate().is_err());
    }
}
