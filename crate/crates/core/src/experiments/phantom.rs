use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::dataset::{Provenance, TruthMaps, VoxelDataset};
use crate::noise::{add_noise, stream_rng, NoiseSpec, StreamDomain, StreamId};
use crate::signal::{sample_times, signal_curve, KineticParams, Kinetics, Protocol, SignalCurve};

/// Data-generating process for synthetic voxels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    /// The assumed model itself.
    Buxton,
    /// True tissue T1 is `assumed + delta_t1`; with `top_fraction` only the
    /// brightest voxels (by clean mean intensity at the assumed T1) get it.
    BuxtonWrongT1 {
        delta_t1: f64,
        top_fraction: Option<f64>,
    },
    /// Venous outflow at rate `k_out` (1/s) added to the residue function.
    BuxtonOutflow { k_out: f64 },
    /// `w dM(f, att) + (1 - w) dM(flow_ratio f, att + att_shift)`.
    BuxtonPartialVolume {
        weight: f64,
        flow_ratio: f64,
        att_shift: f64,
    },
}

impl Generator {
    pub fn name(&self) -> &'static str {
        match self {
            Generator::Buxton => "buxton",
            Generator::BuxtonWrongT1 { .. } => "buxton_wrong_t1",
            Generator::BuxtonOutflow { .. } => "buxton_outflow",
            Generator::BuxtonPartialVolume { .. } => "buxton_partial_volume",
        }
    }

    pub fn params(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        match *self {
            Generator::Buxton => {}
            Generator::BuxtonWrongT1 {
                delta_t1,
                top_fraction,
            } => {
                m.insert("delta_t1".into(), delta_t1);
                if let Some(f) = top_fraction {
                    m.insert("top_fraction".into(), f);
                }
            }
            Generator::BuxtonOutflow { k_out } => {
                m.insert("k_out".into(), k_out);
            }
            Generator::BuxtonPartialVolume {
                weight,
                flow_ratio,
                att_shift,
            } => {
                m.insert("weight".into(), weight);
                m.insert("flow_ratio".into(), flow_ratio);
                m.insert("att_shift".into(), att_shift);
            }
        }
        m
    }

    fn validate(&self, protocol: &Protocol) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        match *self {
            Generator::Buxton => Ok(()),
            Generator::BuxtonWrongT1 {
                delta_t1,
                top_fraction,
            } => {
                if !(protocol.t1_tissue + delta_t1 > 0.0) {
                    return bad(format!("true T1 {} is not positive", protocol.t1_tissue + delta_t1));
                }
                match top_fraction {
                    Some(f) if !(f > 0.0 && f < 1.0) => bad(format!("top_fraction {f} outside (0, 1)")),
                    _ => Ok(()),
                }
            }
            Generator::BuxtonOutflow { k_out } if !(k_out >= 0.0) => {
                bad(format!("k_out must be non-negative, got {k_out}"))
            }
            Generator::BuxtonOutflow { .. } => Ok(()),
            Generator::BuxtonPartialVolume {
                weight,
                flow_ratio,
                att_shift,
            } => {
                if !(0.0..=1.0).contains(&weight) || !(flow_ratio >= 0.0) || !(att_shift.is_finite()) {
                    return bad("invalid partial-volume parameters".into());
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub n_voxels: usize,
    pub f_range: (f64, f64),
    pub att_range: (f64, f64),
    pub generator: Generator,
    pub m_total: usize,
    pub noise: NoiseSpec,
}

impl PhantomSpec {
    /// Brain ranges: f 0-150 mL/min/100g, att 0-2 s.
    pub fn brain(n_voxels: usize, m_total: usize, noise: NoiseSpec) -> Self {
        Self {
            n_voxels,
            f_range: (0.0, 150.0),
            att_range: (0.0, 2.0),
            generator: Generator::Buxton,
            m_total,
            noise,
        }
    }

    /// Kidney ranges: f 0-900 mL/min/100g, att 0-2 s.
    pub fn kidney(n_voxels: usize, m_total: usize, noise: NoiseSpec) -> Self {
        Self {
            f_range: (0.0, 900.0),
            ..Self::brain(n_voxels, m_total, noise)
        }
    }

    pub fn with_generator(self, generator: Generator) -> Self {
        Self { generator, ..self }
    }

    pub fn validate(&self, protocol: &Protocol) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi;
        if self.n_voxels == 0 {
            return Err(Error::InvalidInput("phantom needs at least one voxel".into()));
        }
        if self.m_total < 2 {
            return Err(Error::InvalidInput("phantom needs at least two repetitions".into()));
        }
        if !range_ok(self.f_range) || !range_ok(self.att_range) {
            return Err(Error::InvalidInput("invalid parameter ranges".into()));
        }
        self.noise.validate()?;
        self.generator.validate(protocol)
    }
}

/// Noise level giving peak-signal SNR `snr` at `reference`.
pub fn sigma_for_snr(protocol: &Protocol, reference: KineticParams, snr: f64) -> f64 {
    signal_curve(reference, protocol).max_amplitude() / snr
}

fn draw_truth(spec: &PhantomSpec, voxel: usize) -> KineticParams {
    let mut rng = stream_rng(spec.noise.seed, StreamDomain::Phantom, StreamId::new(voxel as u64, 0, 0));
    let mut uniform = |(lo, hi): (f64, f64)| {
        let u: f64 = rng.random();
        lo + u * (hi - lo)
    };
    let f = uniform(spec.f_range);
    let att = uniform(spec.att_range);
    // truth maps are stored as f32; generate from exactly the stored values
    KineticParams::new(f as f32 as f64, att as f32 as f64)
}

/// Indices of the `ceil(fraction * n)` largest values; ties favour lower indices.
pub(crate) fn top_indices(values: &[(usize, f64)], fraction: f64) -> Vec<usize> {
    let count = ((fraction * values.len() as f64).ceil() as usize).min(values.len());
    let mut order: Vec<(usize, f64)> = values.to_vec();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut picked: Vec<usize> = order[..count].iter().map(|(i, _)| *i).collect();
    picked.sort_unstable();
    picked
}

/// Simulate a phantom: uniform truths, clean curves from the generator and
/// `m_total` noisy repetitions per voxel.
pub fn generate_phantom(spec: &PhantomSpec, protocol: &Protocol) -> Result<VoxelDataset> {
    protocol.validate()?;
    spec.validate(protocol)?;
    let times = sample_times(protocol);
    let assumed = Kinetics::from_protocol(protocol);
    let truths: Vec<KineticParams> = (0..spec.n_voxels).map(|v| draw_truth(spec, v)).collect();

    let mut t1_true = vec![protocol.t1_tissue; spec.n_voxels];
    if let Generator::BuxtonWrongT1 {
        delta_t1,
        top_fraction,
    } = spec.generator
    {
        let alt = protocol.t1_tissue + delta_t1;
        match top_fraction {
            None => t1_true.iter_mut().for_each(|t| *t = alt),
            Some(frac) => {
                let intensity: Vec<(usize, f64)> = truths
                    .iter()
                    .enumerate()
                    .map(|(v, th)| {
                        let c = assumed.curve(*th, &times);
                        (v, c.values.iter().sum::<f64>() / c.len() as f64)
                    })
                    .collect();
                for v in top_indices(&intensity, frac) {
                    t1_true[v] = alt;
                }
            }
        }
    }

    let clean_curve = |v: usize| -> SignalCurve {
        let theta = truths[v];
        match spec.generator {
            Generator::Buxton => assumed.curve(theta, &times),
            Generator::BuxtonWrongT1 { .. } => assumed.with_t1_tissue(t1_true[v]).curve(theta, &times),
            Generator::BuxtonOutflow { k_out } => assumed.with_outflow(k_out).curve(theta, &times),
            Generator::BuxtonPartialVolume {
                weight,
                flow_ratio,
                att_shift,
            } => {
                let second = KineticParams::new(theta.f * flow_ratio, (theta.att + att_shift).max(0.0));
                let a = assumed.curve(theta, &times);
                let b = assumed.curve(second, &times);
                SignalCurve {
                    values: a
                        .values
                        .iter()
                        .zip(&b.values)
                        .map(|(x, y)| weight * x + (1.0 - weight) * y)
                        .collect(),
                }
            }
        }
    };

    let n = times.len();
    let m = spec.m_total;
    let mut data = vec![0f32; spec.n_voxels * n * m];
    for v in 0..spec.n_voxels {
        let clean = clean_curve(v);
        for rep in 0..m {
            let noisy = add_noise(&clean, &spec.noise, StreamId::new(v as u64, rep as u64, 0));
            for (p, x) in noisy.values.iter().enumerate() {
                data[(v * n + p) * m + rep] = *x as f32;
            }
        }
    }

    let t1_map = matches!(spec.generator, Generator::BuxtonWrongT1 { .. })
        .then(|| t1_true.iter().map(|&t| t as f32).collect());

    let dataset = VoxelDataset {
        // noiseless phantoms keep the protocol's assumed sigma
        protocol: Protocol {
            sigma: if spec.noise.sigma > 0.0 { spec.noise.sigma } else { protocol.sigma },
            ..protocol.clone()
        },
        n_voxels: spec.n_voxels,
        n_reps: m,
        data,
        mask: vec![true; spec.n_voxels],
        provenance: Provenance {
            seed: Some(spec.noise.seed),
            generator: spec.generator.name().to_string(),
            generator_params: spec.generator.params(),
        },
        truth: Some(TruthMaps {
            f: truths.iter().map(|t| t.f as f32).collect(),
            att: truths.iter().map(|t| t.att as f32).collect(),
        }),
        t1_map,
    };
    dataset.validate()?;
    Ok(dataset)
}
