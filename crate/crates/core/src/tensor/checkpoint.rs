use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::npy;

use super::Matrix;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterEntry {
    pub name: String,
    pub file: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub parameters: Vec<ParameterEntry>,
    pub seed: u64,
    /// Model hyperparameters (resolutions, hidden width, temperature, ...).
    pub model: serde_json::Value,
}

/// Writes one `f64` NPY file per parameter plus `manifest.json` into `dir`.
pub fn save_checkpoint(
    dir: impl AsRef<Path>,
    names: &[String],
    params: &[Matrix],
    seed: u64,
    model: serde_json::Value,
) -> Result<CheckpointManifest> {
    let dir = dir.as_ref();
    if names.len() != params.len() {
        return Err(Error::Contract(format!(
            "{} names for {} parameters",
            names.len(),
            params.len()
        )));
    }
    fs::create_dir_all(dir)?;
    let mut parameters = Vec::with_capacity(params.len());
    for (i, (name, p)) in names.iter().zip(params).enumerate() {
        let file = format!("param_{i:02}_{name}.npy");
        npy::write_f64(dir.join(&file), &[p.rows(), p.cols()], p.data())?;
        parameters.push(ParameterEntry { name: name.clone(), file, rows: p.rows(), cols: p.cols() });
    }
    let manifest = CheckpointManifest { parameters, seed, model };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(CheckpointManifest, Vec<Matrix>)> {
    let dir = dir.as_ref();
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    let params = manifest
        .parameters
        .iter()
        .map(|entry| {
            let arr = npy::read_npy(dir.join(&entry.file))?;
            if arr.shape != [entry.rows, entry.cols] {
                return Err(Error::Data(format!(
                    "{} has shape {:?}, manifest says {}x{}",
                    entry.file, arr.shape, entry.rows, entry.cols
                )));
            }
            Matrix::new(entry.rows, entry.cols, arr.to_f64())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let params = vec![
            Matrix::from_fn(3, 2, |i, j| (i as f64 + 0.1) / (j as f64 + 7.0)),
            Matrix::from_fn(1, 4, |_, j| -(j as f64).sqrt()),
        ];
        let names = vec!["w".to_string(), "b".to_string()];
        let meta = serde_json::json!({"hidden": 32});
        let saved = save_checkpoint(dir.path(), &names, &params, 42, meta).unwrap();
        let (manifest, loaded) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(manifest, saved);
        assert_eq!(loaded, params);
    }
}
