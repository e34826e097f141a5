//! Checkpoints: a JSON manifest plus one raw little-endian f64 blob per
//! named parameter. Reloading is bitwise-stable.

use super::{FnoSpec, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, ParamTensor};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    spec: FnoSpec,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    lineage: Option<serde_json::Value>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

fn blob_name(name: &str) -> String {
    format!("{}.f64", name.replace('/', "_"))
}

/// Writes `dir/manifest.json` and `dir/params/<name>.f64` blobs.
pub fn save(params: &ModelParams, dir: &Path, lineage: Option<serde_json::Value>) -> Result<()> {
    let blob_dir = dir.join("params");
    std::fs::create_dir_all(&blob_dir)?;
    let mut tensors = Vec::with_capacity(params.store.tensors.len());
    for t in &params.store.tensors {
        let file = blob_name(&t.name);
        let mut bytes = Vec::with_capacity(t.data.len() * 8);
        for v in t.data.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(blob_dir.join(&file), bytes)?;
        tensors.push(TensorEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            file,
        });
    }
    let manifest = Manifest {
        spec: params.spec.clone(),
        seed: params.seed,
        lineage,
        tensors,
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(())
}

/// Reads a checkpoint written by [`save`].
pub fn load(dir: &Path) -> Result<ModelParams> {
    let manifest_path = dir.join("manifest.json");
    let bytes = std::fs::read(&manifest_path)
        .map_err(|e| Error::Data(format!("missing checkpoint manifest {}: {e}", manifest_path.display())))?;
    let manifest: Manifest = serde_json::from_slice(&bytes)?;
    let mut store = ParamStore::default();
    for entry in &manifest.tensors {
        let path = dir.join("params").join(&entry.file);
        let raw = std::fs::read(&path)
            .map_err(|e| Error::Data(format!("missing parameter blob {}: {e}", path.display())))?;
        let expect = entry.shape.iter().product::<usize>() * 8;
        if raw.len() != expect {
            return Err(Error::Data(format!(
                "parameter blob {} is {} bytes, expected {expect}",
                path.display(),
                raw.len()
            )));
        }
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.push(ParamTensor::new(entry.name.clone(), entry.shape.clone(), data));
    }
    Ok(ModelParams {
        spec: manifest.spec,
        seed: manifest.seed,
        store,
    })
}
