//! Directory container for voxel data.
//!
//! ```text
//! <dir>/manifest.json   protocol, dims, provenance (format_version 1)
//! <dir>/data.raw        V*N*M little-endian f32, voxel-major, then PLD, then repetition
//! <dir>/mask.raw        V bytes, 0 or 1
//! <dir>/truth_f.raw     optional, V f32
//! <dir>/truth_att.raw   optional, V f32
//! <dir>/t1_map.raw      optional, V f32
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::estimation::VoxelSeries;
use crate::signal::{Protocol, TimeConvention};

pub const FORMAT_VERSION: u64 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATA_FILE: &str = "data.raw";
pub const MASK_FILE: &str = "mask.raw";
pub const TRUTH_F_FILE: &str = "truth_f.raw";
pub const TRUTH_ATT_FILE: &str = "truth_att.raw";
pub const T1_MAP_FILE: &str = "t1_map.raw";

/// Ground-truth parameter maps carried by synthetic phantoms.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthMaps {
    pub f: Vec<f32>,
    pub att: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub generator: String,
    pub generator_params: BTreeMap<String, f64>,
}

/// `V x N x M` magnitude measurements plus mask and metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelDataset {
    pub protocol: Protocol,
    pub n_voxels: usize,
    pub n_reps: usize,
    pub data: Vec<f32>,
    pub mask: Vec<bool>,
    pub provenance: Provenance,
    pub truth: Option<TruthMaps>,
    pub t1_map: Option<Vec<f32>>,
}

impl VoxelDataset {
    pub fn n_plds(&self) -> usize {
        self.protocol.plds.len()
    }

    #[inline]
    pub fn index(&self, voxel: usize, pld: usize, rep: usize) -> usize {
        (voxel * self.n_plds() + pld) * self.n_reps + rep
    }

    pub fn value(&self, voxel: usize, pld: usize, rep: usize) -> f32 {
        self.data[self.index(voxel, pld, rep)]
    }

    pub fn validate(&self) -> Result<()> {
        self.protocol
            .validate()
            .map_err(|e| Error::format("plds", e.to_string()))?;
        let expected = self.n_voxels * self.n_plds() * self.n_reps;
        if self.data.len() != expected {
            return Err(Error::SizeMismatch {
                file: DATA_FILE.into(),
                expected: expected * 4,
                found: self.data.len() * 4,
            });
        }
        if self.mask.len() != self.n_voxels {
            return Err(Error::SizeMismatch {
                file: MASK_FILE.into(),
                expected: self.n_voxels,
                found: self.mask.len(),
            });
        }
        if self.n_reps == 0 {
            return Err(Error::format("dims", "repetition count must be at least 1"));
        }
        if let Some(bad) = self.data.iter().position(|x| !x.is_finite()) {
            return Err(Error::format(
                "data",
                format!("non-finite value at flat index {bad}"),
            ));
        }
        if let Some(t) = &self.truth {
            for (name, v) in [("truth_f", &t.f), ("truth_att", &t.att)] {
                if v.len() != self.n_voxels {
                    return Err(Error::format(name, "length differs from voxel count"));
                }
            }
        }
        if let Some(t1) = &self.t1_map {
            if t1.len() != self.n_voxels {
                return Err(Error::format("t1_map", "length differs from voxel count"));
            }
            if t1.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::format("t1_map", "values must be positive"));
            }
        }
        Ok(())
    }

    /// Series of one voxel using every repetition.
    pub fn series(&self, voxel: usize) -> VoxelSeries {
        let n = self.n_plds();
        let m = self.n_reps;
        let start = voxel * n * m;
        let data = self.data[start..start + n * m]
            .iter()
            .map(|&x| x as f64)
            .collect();
        VoxelSeries::new(n, m, data).expect("dataset dimensions are consistent")
    }

    /// Series of one voxel built from the listed repetitions (repeats allowed).
    pub fn series_with_reps(&self, voxel: usize, reps: &[usize]) -> VoxelSeries {
        let n = self.n_plds();
        let mut data = Vec::with_capacity(n * reps.len());
        for pld in 0..n {
            let row = self.index(voxel, pld, 0);
            data.extend(reps.iter().map(|&r| self.data[row + r] as f64));
        }
        VoxelSeries::new(n, reps.len(), data).expect("dataset dimensions are consistent")
    }

    /// Copy keeping only the first `m` repetitions.
    pub fn first_reps(&self, m: usize) -> Result<VoxelDataset> {
        if m == 0 || m > self.n_reps {
            return Err(Error::InvalidInput(format!(
                "cannot take {m} of {} repetitions",
                self.n_reps
            )));
        }
        let n = self.n_plds();
        let mut data = Vec::with_capacity(self.n_voxels * n * m);
        for v in 0..self.n_voxels {
            for p in 0..n {
                let row = self.index(v, p, 0);
                data.extend_from_slice(&self.data[row..row + m]);
            }
        }
        Ok(VoxelDataset {
            n_reps: m,
            data,
            ..self.clone()
        })
    }

    /// Copy keeping only the listed PLD indices (ascending).
    pub fn restrict_plds(&self, pld_indices: &[usize]) -> Result<VoxelDataset> {
        if pld_indices.windows(2).any(|w| w[1] <= w[0])
            || pld_indices.iter().any(|&i| i >= self.n_plds())
        {
            return Err(Error::InvalidInput(
                "PLD indices must be ascending and in range".into(),
            ));
        }
        let plds = pld_indices.iter().map(|&i| self.protocol.plds[i]).collect();
        let m = self.n_reps;
        let mut data = Vec::with_capacity(self.n_voxels * pld_indices.len() * m);
        for v in 0..self.n_voxels {
            for &p in pld_indices {
                let row = self.index(v, p, 0);
                data.extend_from_slice(&self.data[row..row + m]);
            }
        }
        Ok(VoxelDataset {
            protocol: self.protocol.with_plds(plds),
            data,
            ..self.clone()
        })
    }

    pub fn masked_voxels(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
    }
}

fn f32s_to_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn bytes_to_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn manifest_json(d: &VoxelDataset) -> Value {
    let p = &d.protocol;
    let params: Map<String, Value> = d
        .provenance
        .generator_params
        .iter()
        .map(|(k, v)| (k.clone(), json!(v)))
        .collect();
    json!({
        "format_version": FORMAT_VERSION,
        "dims": [d.n_voxels, d.n_plds(), d.n_reps],
        "plds": p.plds,
        "tau": p.tau,
        "alpha": p.alpha,
        "m0b": p.m0b,
        "lambda_bt": p.lambda_bt,
        "t1b": p.t1b,
        "t1_tissue": p.t1_tissue,
        "t1_map": d.t1_map.as_ref().map(|_| T1_MAP_FILE),
        "sigma": p.sigma,
        "seed": d.provenance.seed,
        "generator": d.provenance.generator,
        "generator_params": params,
        "time_convention": p.time_convention,
        "truth": d.truth.is_some(),
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_dataset(dataset: &VoxelDataset, dir: impl AsRef<Path>) -> Result<()> {
    dataset.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = serde_json::to_string_pretty(&manifest_json(dataset))
        .map_err(|e| Error::format("manifest", e.to_string()))?;
    write_file(&dir.join(MANIFEST_FILE), format!("{manifest}\n").as_bytes())?;
    write_file(&dir.join(DATA_FILE), &f32s_to_bytes(&dataset.data))?;
    let mask: Vec<u8> = dataset.mask.iter().map(|&m| m as u8).collect();
    write_file(&dir.join(MASK_FILE), &mask)?;
    if let Some(t) = &dataset.truth {
        write_file(&dir.join(TRUTH_F_FILE), &f32s_to_bytes(&t.f))?;
        write_file(&dir.join(TRUTH_ATT_FILE), &f32s_to_bytes(&t.att))?;
    }
    if let Some(t1) = &dataset.t1_map {
        write_file(&dir.join(T1_MAP_FILE), &f32s_to_bytes(t1))?;
    }
    Ok(())
}

struct Fields<'a>(&'a Map<String, Value>);

impl Fields<'_> {
    fn get(&self, key: &str) -> Result<&Value> {
        self.0
            .get(key)
            .ok_or_else(|| Error::format(key, "missing"))
    }

    fn f64(&self, key: &str) -> Result<f64> {
        self.get(key)?
            .as_f64()
            .ok_or_else(|| Error::format(key, "expected a number"))
    }

    fn u64(&self, key: &str) -> Result<u64> {
        self.get(key)?
            .as_u64()
            .ok_or_else(|| Error::format(key, "expected a non-negative integer"))
    }

    fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        let arr = self
            .get(key)?
            .as_array()
            .ok_or_else(|| Error::format(key, "expected an array"))?;
        arr.iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| Error::format(key, "expected numbers"))
            })
            .collect()
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_f32_map(dir: &Path, file: &str, len: usize) -> Result<Vec<f32>> {
    let bytes = read_file(&dir.join(file))?;
    if bytes.len() != len * 4 {
        return Err(Error::SizeMismatch {
            file: file.into(),
            expected: len * 4,
            found: bytes.len(),
        });
    }
    Ok(bytes_to_f32s(&bytes))
}

/// Protocol constants from a manifest-shaped JSON object.
pub fn protocol_from_manifest(obj: &Map<String, Value>) -> Result<Protocol> {
    let fields = Fields(obj);
    let time_convention = match obj.get("time_convention") {
        None | Some(Value::Null) => TimeConvention::default(),
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|e| Error::format("time_convention", e.to_string()))?,
    };
    let protocol = Protocol {
        plds: fields.f64_list("plds")?,
        tau: fields.f64("tau")?,
        alpha: fields.f64("alpha")?,
        m0b: fields.f64("m0b")?,
        lambda_bt: fields.f64("lambda_bt")?,
        t1b: fields.f64("t1b")?,
        t1_tissue: fields.f64("t1_tissue")?,
        sigma: fields.f64("sigma")?,
        time_convention,
    };
    check_protocol_fields(&protocol)?;
    Ok(protocol)
}

fn check_protocol_fields(p: &Protocol) -> Result<()> {
    if p.plds.len() < 2 || p.plds.windows(2).any(|w| w[1] <= w[0]) || p.plds[0] < 0.0 {
        return Err(Error::format(
            "plds",
            "need at least two strictly increasing, non-negative values",
        ));
    }
    let positive = [
        ("tau", p.tau),
        ("m0b", p.m0b),
        ("lambda_bt", p.lambda_bt),
        ("t1b", p.t1b),
        ("t1_tissue", p.t1_tissue),
        ("sigma", p.sigma),
    ];
    for (name, v) in positive {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::format(name, format!("must be positive, got {v}")));
        }
    }
    if !(p.alpha > 0.0 && p.alpha <= 1.0) {
        return Err(Error::format("alpha", "must lie in (0, 1]"));
    }
    Ok(())
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<VoxelDataset> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))
        .map_err(|e| Error::io(dir.join(MANIFEST_FILE), e))?;
    let root: Value =
        serde_json::from_str(&text).map_err(|e| Error::format("manifest", e.to_string()))?;
    let obj = root
        .as_object()
        .ok_or_else(|| Error::format("manifest", "expected a JSON object"))?;
    let fields = Fields(obj);

    let version = fields.u64("format_version")?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionUnsupported(version));
    }

    let dims = fields.get("dims")?.as_array().ok_or_else(|| {
        Error::format("dims", "expected [voxels, plds, repetitions]")
    })?;
    if dims.len() != 3 {
        return Err(Error::format("dims", "expected three entries"));
    }
    let dims: Vec<usize> = dims
        .iter()
        .map(|v| {
            v.as_u64()
                .map(|x| x as usize)
                .ok_or_else(|| Error::format("dims", "entries must be non-negative integers"))
        })
        .collect::<Result<_>>()?;
    let (n_voxels, n_plds, n_reps) = (dims[0], dims[1], dims[2]);
    if n_reps == 0 {
        return Err(Error::format("dims", "repetition count must be at least 1"));
    }

    let protocol = protocol_from_manifest(obj)?;
    if protocol.plds.len() != n_plds {
        return Err(Error::format(
            "plds",
            format!(
                "dims declares {n_plds} PLDs but the list has {}",
                protocol.plds.len()
            ),
        ));
    }

    let seed = match obj.get("seed") {
        None | Some(Value::Null) => None,
        Some(_) => Some(fields.u64("seed")?),
    };
    let generator = match obj.get("generator") {
        None | Some(Value::Null) => String::new(),
        Some(v) => v
            .as_str()
            .ok_or_else(|| Error::format("generator", "expected a string"))?
            .to_string(),
    };
    let mut generator_params = BTreeMap::new();
    if let Some(v) = obj.get("generator_params") {
        let m = v
            .as_object()
            .ok_or_else(|| Error::format("generator_params", "expected an object"))?;
        for (k, v) in m {
            let x = v
                .as_f64()
                .ok_or_else(|| Error::format("generator_params", format!("`{k}` is not a number")))?;
            generator_params.insert(k.clone(), x);
        }
    }

    let data_bytes = read_file(&dir.join(DATA_FILE))?;
    let expected = n_voxels * n_plds * n_reps * 4;
    if data_bytes.len() != expected {
        return Err(Error::SizeMismatch {
            file: DATA_FILE.into(),
            expected,
            found: data_bytes.len(),
        });
    }
    let data = bytes_to_f32s(&data_bytes);

    let mask_bytes = read_file(&dir.join(MASK_FILE))?;
    if mask_bytes.len() != n_voxels {
        return Err(Error::SizeMismatch {
            file: MASK_FILE.into(),
            expected: n_voxels,
            found: mask_bytes.len(),
        });
    }
    let mask = mask_bytes
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::format("mask", format!("byte value {other} is not 0 or 1"))),
        })
        .collect::<Result<Vec<_>>>()?;

    let has_truth = match obj.get("truth") {
        None | Some(Value::Null) => false,
        Some(v) => v
            .as_bool()
            .ok_or_else(|| Error::format("truth", "expected a boolean"))?,
    };
    let truth = if has_truth {
        Some(TruthMaps {
            f: read_f32_map(dir, TRUTH_F_FILE, n_voxels)?,
            att: read_f32_map(dir, TRUTH_ATT_FILE, n_voxels)?,
        })
    } else {
        None
    };
    let t1_map = match obj.get("t1_map") {
        None | Some(Value::Null) => None,
        Some(Value::String(name)) => Some(read_f32_map(dir, name, n_voxels)?),
        Some(_) => return Err(Error::format("t1_map", "expected a file name or null")),
    };

    let dataset = VoxelDataset {
        protocol,
        n_voxels,
        n_reps,
        data,
        mask,
        provenance: Provenance {
            seed,
            generator,
            generator_params,
        },
        truth,
        t1_map,
    };
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Protocol;

    fn tiny() -> VoxelDataset {
        let protocol = Protocol::brain(0.01).with_plds(vec![0.5, 1.0, 2.0]);
        let n = 2 * 3 * 2;
        VoxelDataset {
            protocol,
            n_voxels: 2,
            n_reps: 2,
            data: (0..n).map(|i| i as f32 * 0.25).collect(),
            mask: vec![true, false],
            provenance: Provenance::default(),
            truth: None,
            t1_map: None,
        }
    }

    #[test]
    fn layout_is_voxel_pld_rep() {
        let d = tiny();
        assert_eq!(d.index(1, 2, 1), 11);
        let s = d.series(1);
        assert_eq!(s.value(0, 0), 6.0 * 0.25);
        assert_eq!(s.value(2, 1), 11.0 * 0.25);
        let r = d.series_with_reps(0, &[1, 1]);
        assert_eq!(r.value(1, 0), 3.0 * 0.25);
        assert_eq!(r.value(1, 1), 3.0 * 0.25);
    }

    #[test]
    fn restrict_keeps_selected_plds() {
        let d = tiny();
        let r = d.restrict_plds(&[0, 2]).unwrap();
        assert_eq!(r.protocol.plds, vec![0.5, 2.0]);
        assert_eq!(r.value(1, 1, 0), d.value(1, 2, 0));
        let f = d.first_reps(1).unwrap();
        assert_eq!(f.value(1, 2, 0), d.value(1, 2, 0));
        assert!(d.first_reps(3).is_err());
    }

    #[test]
    fn validate_catches_mask_length() {
        let mut d = tiny();
        d.mask.pop();
        assert!(matches!(d.validate(), Err(Error::SizeMismatch { .. })));
    }
}
