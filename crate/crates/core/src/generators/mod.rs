//! Dataset synthesis and the on-disk GridPack container.
//!
//! A GridPack holds input/label field pairs at one resolution plus a JSON
//! sidecar describing where the data came from. Packs are written at a
//! master resolution; lower resolutions are derived by optional low-pass
//! filtering followed by spectral resampling, preserving sample order so
//! sample `i` depicts the same physical state at every resolution.

pub mod burgers;
pub mod darcy;

pub use burgers::{gen_burgers, BurgersOptions, BurgersSample};
pub use darcy::{gen_darcy, DarcyOptions, DarcySample};

use crate::error::{Error, Result};
use crate::spectral::{self, FieldMeta, GridField};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"GPK1";

/// PDE-specific constants recorded in the sidecar.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PackParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_levels: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f: Option<f64>,
}

/// Provenance of a derived pack.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub master: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub derivation: Option<String>,
}

/// JSON sidecar written next to each `.gpk` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackMeta {
    pub pde: String,
    pub params: PackParams,
    pub lowpass_limit: Option<u32>,
    pub seed: u64,
    pub lineage: Lineage,
    pub created_at: String,
}

/// An in-memory dataset of input/label pairs at one resolution.
#[derive(Debug, Clone)]
pub struct GridPack {
    pub dims: usize,
    pub resolution: usize,
    pub count: usize,
    /// `count * resolution^dims` values, sample-major.
    pub inputs: Vec<f64>,
    pub labels: Vec<f64>,
    pub meta: PackMeta,
}

/// RFC 3339 UTC timestamp; honors `SOURCE_DATE_EPOCH` for reproducible runs.
pub fn timestamp() -> String {
    use chrono::{DateTime, SecondsFormat, Utc};
    let now: DateTime<Utc> = match std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.parse::<i64>().ok())
        .and_then(|secs| DateTime::from_timestamp(secs, 0))
    {
        Some(t) => t,
        None => Utc::now(),
    };
    now.to_rfc3339_opts(SecondsFormat::Secs, true)
}

impl GridPack {
    pub fn from_fields(
        inputs: &[GridField],
        labels: &[GridField],
        meta: PackMeta,
    ) -> Result<GridPack> {
        if inputs.len() != labels.len() || inputs.is_empty() {
            return Err(Error::Data(format!(
                "pack needs equal non-zero counts, got {} inputs and {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        let dims = inputs[0].dims;
        let resolution = inputs[0].resolution;
        for f in inputs.iter().chain(labels) {
            if f.dims != dims || f.resolution != resolution {
                return Err(Error::Data(format!(
                    "pack fields disagree: {}^{} vs {resolution}^{dims}",
                    f.resolution, f.dims
                )));
            }
        }
        let mut pack = GridPack {
            dims,
            resolution,
            count: inputs.len(),
            inputs: Vec::with_capacity(inputs.len() * inputs[0].len()),
            labels: Vec::with_capacity(labels.len() * labels[0].len()),
            meta,
        };
        for f in inputs {
            pack.inputs.extend_from_slice(&f.values);
        }
        for f in labels {
            pack.labels.extend_from_slice(&f.values);
        }
        Ok(pack)
    }

    pub fn sample_len(&self) -> usize {
        self.resolution.pow(self.dims as u32)
    }

    pub fn input(&self, i: usize) -> &[f64] {
        let l = self.sample_len();
        &self.inputs[i * l..(i + 1) * l]
    }

    pub fn label(&self, i: usize) -> &[f64] {
        let l = self.sample_len();
        &self.labels[i * l..(i + 1) * l]
    }

    fn field_meta(&self) -> FieldMeta {
        FieldMeta {
            pde: Some(self.meta.pde.clone()),
            lowpass_limit: self.meta.lowpass_limit.map(|l| l as usize),
        }
    }

    pub fn input_field(&self, i: usize) -> GridField {
        GridField {
            dims: self.dims,
            resolution: self.resolution,
            values: self.input(i).to_vec(),
            meta: self.field_meta(),
        }
    }

    pub fn label_field(&self, i: usize) -> GridField {
        GridField {
            dims: self.dims,
            resolution: self.resolution,
            values: self.label(i).to_vec(),
            meta: self.field_meta(),
        }
    }

    /// Writes `<path>` (binary) and `<path minus extension>.json` (sidecar).
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + 16 * self.count * self.sample_len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(self.dims as u32).to_le_bytes());
        buf.extend_from_slice(&(self.resolution as u32).to_le_bytes());
        buf.extend_from_slice(&(self.count as u32).to_le_bytes());
        for v in self.inputs.iter().chain(&self.labels) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&buf)?;
        let sidecar = serde_json::to_vec_pretty(&self.meta)?;
        std::fs::write(sidecar_path(path), sidecar)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<GridPack> {
        let mut file = std::fs::File::open(path)
            .map_err(|e| Error::Data(format!("cannot open pack {}: {e}", path.display())))?;
        let mut header = [0u8; 16];
        file.read_exact(&mut header)?;
        if &header[0..4] != MAGIC {
            return Err(Error::Data(format!(
                "{} is not a GridPack (bad magic)",
                path.display()
            )));
        }
        let dims = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let resolution = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let count = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        if dims != 1 && dims != 2 {
            return Err(Error::Data(format!("pack dims {dims} unsupported")));
        }
        let sample_len = resolution.pow(dims as u32);
        let mut payload = Vec::new();
        file.read_to_end(&mut payload)?;
        let expect = 2 * count * sample_len * 8;
        if payload.len() != expect {
            return Err(Error::Data(format!(
                "{}: payload is {} bytes, expected {expect}",
                path.display(),
                payload.len()
            )));
        }
        let mut values = Vec::with_capacity(2 * count * sample_len);
        for chunk in payload.chunks_exact(8) {
            values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        let labels = values.split_off(count * sample_len);
        let meta_bytes = std::fs::read(sidecar_path(path)).map_err(|e| {
            Error::Data(format!(
                "missing sidecar {}: {e}",
                sidecar_path(path).display()
            ))
        })?;
        let meta: PackMeta = serde_json::from_slice(&meta_bytes)?;
        Ok(GridPack {
            dims,
            resolution,
            count,
            inputs: values,
            labels,
            meta,
        })
    }
}

/// `darcy_r128.gpk` → `darcy_r128.json`.
pub fn sidecar_path(pack_path: &Path) -> std::path::PathBuf {
    pack_path.with_extension("json")
}

/// Optionally low-pass filters at the master resolution, then spectrally
/// resamples to each target. Sample order is preserved, so sample `i`
/// depicts the same state in every derived pack.
pub fn derive_resolutions(
    pack: &GridPack,
    resolutions: &[usize],
    lowpass_limit: Option<usize>,
    master_label: &str,
) -> Result<Vec<GridPack>> {
    for &r in resolutions {
        if r > pack.resolution {
            return Err(Error::Usage(format!(
                "target resolution {r} exceeds master {}",
                pack.resolution
            )));
        }
    }
    if let Some(limit) = lowpass_limit {
        if 2 * limit > pack.resolution {
            return Err(Error::Usage(format!(
                "low-pass limit {limit} exceeds master Nyquist {}",
                pack.resolution / 2
            )));
        }
    }

    // byte-identical passthrough when nothing changes
    let no_op = |r: usize| r == pack.resolution && lowpass_limit.is_none();

    let mut filtered_inputs = Vec::new();
    let mut filtered_labels = Vec::new();
    if lowpass_limit.is_some() || resolutions.iter().any(|&r| !no_op(r)) {
        for i in 0..pack.count {
            let (mut fin, mut fla) = (pack.input_field(i), pack.label_field(i));
            if let Some(limit) = lowpass_limit {
                fin = spectral::lowpass(&fin, limit)?;
                fla = spectral::lowpass(&fla, limit)?;
            }
            filtered_inputs.push(fin);
            filtered_labels.push(fla);
        }
    }

    let mut out = Vec::with_capacity(resolutions.len());
    for &r in resolutions {
        if no_op(r) {
            let mut copy = pack.clone();
            copy.meta.lineage = Lineage {
                master: Some(master_label.to_string()),
                derivation: Some("copy".to_string()),
            };
            out.push(copy);
            continue;
        }
        let mut inputs = Vec::with_capacity(pack.count);
        let mut labels = Vec::with_capacity(pack.count);
        for i in 0..pack.count {
            inputs.push(spectral::resample(&filtered_inputs[i], r)?);
            labels.push(spectral::resample(&filtered_labels[i], r)?);
        }
        let derivation = match lowpass_limit {
            Some(l) => format!("lowpass({l}) at {} then resample({r})", pack.resolution),
            None => format!("resample({r}) from {}", pack.resolution),
        };
        let meta = PackMeta {
            pde: pack.meta.pde.clone(),
            params: pack.meta.params.clone(),
            lowpass_limit: lowpass_limit
                .map(|l| l as u32)
                .or(pack.meta.lowpass_limit)
                .map(|l| l.min((r / 2) as u32)),
            seed: pack.meta.seed,
            lineage: Lineage {
                master: Some(master_label.to_string()),
                derivation: Some(derivation),
            },
            created_at: timestamp(),
        };
        out.push(GridPack::from_fields(&inputs, &labels, meta)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::energy_spectrum;

    fn toy_pack() -> GridPack {
        let n = 32;
        let mk = |phase: f64| {
            let values: Vec<f64> = (0..n * n)
                .map(|j| {
                    let (r, c) = ((j / n) as f64, (j % n) as f64);
                    (std::f64::consts::TAU * (3.0 * r + 2.0 * c) / n as f64 + phase).sin()
                        + 0.3 * (std::f64::consts::TAU * 11.0 * c / n as f64).cos()
                })
                .collect();
            GridField::new(2, n, values).unwrap()
        };
        let inputs: Vec<GridField> = (0..4).map(|i| mk(i as f64)).collect();
        let labels: Vec<GridField> = (0..4).map(|i| mk(i as f64 + 0.5)).collect();
        GridPack::from_fields(
            &inputs,
            &labels,
            PackMeta {
                pde: "darcy".into(),
                params: PackParams {
                    a_levels: Some([3.0, 12.0]),
                    f: Some(1.0),
                    ..Default::default()
                },
                lowpass_limit: None,
                seed: 7,
                lineage: Lineage::default(),
                created_at: "1970-01-01T00:00:00Z".into(),
            },
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let pack = toy_pack();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy_r32.gpk");
        pack.write(&path).unwrap();
        let again = GridPack::read(&path).unwrap();
        assert_eq!(pack.inputs, again.inputs);
        assert_eq!(pack.labels, again.labels);
        assert_eq!(pack.meta, again.meta);
        // header spot check
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"GPK1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 32);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 4);
        assert_eq!(bytes.len(), 16 + 2 * 4 * 32 * 32 * 8);
    }

    #[test]
    fn derive_noop_is_bitwise_copy() {
        let pack = toy_pack();
        let derived = derive_resolutions(&pack, &[32], None, "toy_r32.gpk").unwrap();
        assert_eq!(derived[0].inputs, pack.inputs);
        assert_eq!(derived[0].labels, pack.labels);
        assert_eq!(derived[0].meta.lineage.master.as_deref(), Some("toy_r32.gpk"));
    }

    #[test]
    fn derived_packs_are_band_limited_and_order_stable() {
        let pack = toy_pack();
        let derived = derive_resolutions(&pack, &[16, 32], Some(5), "toy_r32.gpk").unwrap();
        for d in &derived {
            assert_eq!(d.count, pack.count);
            for i in 0..d.count {
                let bins = energy_spectrum(&d.label_field(i));
                for (k, &e) in bins.iter().enumerate() {
                    if k > 5 {
                        assert!(e < 1e-20, "res {} bin {k} has energy {e}", d.resolution);
                    }
                }
            }
        }
        // shared bins below the limit agree across resolutions
        for i in 0..pack.count {
            let lo = energy_spectrum(&derived[0].label_field(i));
            let hi = energy_spectrum(&derived[1].label_field(i));
            for k in 0..=5 {
                assert!(
                    (lo[k] - hi[k]).abs() <= 1e-9 * hi[k].max(1e-12),
                    "sample {i} bin {k}: {} vs {}",
                    lo[k],
                    hi[k]
                );
            }
        }
    }

    #[test]
    fn derive_rejects_upscaling() {
        let pack = toy_pack();
        assert!(derive_resolutions(&pack, &[64], None, "x").is_err());
    }
}
