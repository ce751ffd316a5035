//! On-disk checkpoint format shared by the motion codec and the language model.
//!
//! A checkpoint is a directory:
//!
//! ```text
//! <dir>/meta.json        format tag, kind, step, seed, config, array index, extra state
//! <dir>/<name>.f32       one raw row-major little-endian float32 array per named tensor
//! ```
//!
//! Array names are the dotted parameter paths (e.g. `blocks.0.attn.wq`), used
//! verbatim as file stems.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_TAG: &str = "umind-checkpoint-v1";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub kind: String,
    pub step: u64,
    pub seed: u64,
    pub config: serde_json::Value,
    pub arrays: Vec<ArrayEntry>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// A named float32 array.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn write_f32_file(path: &Path, data: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_f32_file(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::CheckpointFormat {
            path: path.to_path_buf(),
            detail: format!("length {} is not a multiple of 4", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub struct CheckpointWriter<'a> {
    pub kind: &'a str,
    pub step: u64,
    pub seed: u64,
    pub config: serde_json::Value,
    pub extra: serde_json::Value,
}

impl CheckpointWriter<'_> {
    pub fn write(&self, dir: &Path, arrays: &BTreeMap<String, NamedArray>) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(arrays.len());
        for (name, arr) in arrays {
            let expected: usize = arr.shape.iter().product();
            if expected != arr.data.len() {
                return Err(Error::ShapeMismatch(format!(
                    "array {name}: shape {:?} holds {expected} values, got {}",
                    arr.shape,
                    arr.data.len()
                )));
            }
            let file = format!("{name}.f32");
            write_f32_file(&dir.join(&file), &arr.data)?;
            entries.push(ArrayEntry {
                name: name.clone(),
                shape: arr.shape.clone(),
                file,
            });
        }
        let meta = CheckpointMeta {
            format: FORMAT_TAG.to_string(),
            kind: self.kind.to_string(),
            step: self.step,
            seed: self.seed,
            config: self.config.clone(),
            arrays: entries,
            extra: self.extra.clone(),
        };
        fs::write(dir.join(META_FILE), serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }
}

fn format_err(path: PathBuf, detail: impl Into<String>) -> Error {
    Error::CheckpointFormat {
        path,
        detail: detail.into(),
    }
}

/// Reads and validates every array against the shapes recorded in `meta.json`.
pub fn read_checkpoint(
    dir: &Path,
    expected_kind: &str,
) -> Result<(CheckpointMeta, BTreeMap<String, NamedArray>)> {
    let meta_path = dir.join(META_FILE);
    if !meta_path.exists() {
        return Err(Error::InputMissing(meta_path));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&fs::read(&meta_path)?)
        .map_err(|e| format_err(meta_path.clone(), e.to_string()))?;
    if meta.format != FORMAT_TAG {
        return Err(format_err(meta_path, format!("unknown format tag {}", meta.format)));
    }
    if meta.kind != expected_kind {
        return Err(format_err(
            meta_path,
            format!("checkpoint kind {} where {expected_kind} was expected", meta.kind),
        ));
    }
    let mut arrays = BTreeMap::new();
    for entry in &meta.arrays {
        let path = dir.join(&entry.file);
        let data = read_f32_file(&path)?;
        let expected: usize = entry.shape.iter().product();
        if data.len() != expected {
            return Err(format_err(
                path,
                format!("expected {expected} values for shape {:?}, found {}", entry.shape, data.len()),
            ));
        }
        arrays.insert(
            entry.name.clone(),
            NamedArray {
                shape: entry.shape.clone(),
                data,
            },
        );
    }
    Ok((meta, arrays))
}
