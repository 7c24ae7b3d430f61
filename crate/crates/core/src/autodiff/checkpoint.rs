use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ParamSet, Tensor};
use crate::error::{Error, Result};

const FORMAT_TAG: &str = "maze-agent-checkpoint";
const FORMAT_VERSION: u32 = 1;

/// A parameter snapshot together with the model variant that produced it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub params: ParamSet<f32>,
    pub variant: String,
    pub global_step: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    format_version: u32,
    variant: String,
    global_step: u64,
    dtype: String,
    byte_order: String,
    blob: String,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the blob file.
    offset: u64,
    /// Element count; the byte length is 4x this.
    numel: u64,
}

/// Write `<path>` (JSON manifest) and a sibling `.bin` blob with all tensor
/// data as little-endian f32, in name order.
pub fn save_checkpoint(ckpt: &Checkpoint, manifest_path: &Path) -> Result<()> {
    let blob_path = manifest_path.with_extension("bin");
    let blob_name = blob_path
        .file_name()
        .ok_or_else(|| Error::contract("checkpoint path has no file name"))?
        .to_string_lossy()
        .into_owned();

    let mut blob: Vec<u8> = Vec::with_capacity(ckpt.params.total_elems() * 4);
    let mut tensors = Vec::with_capacity(ckpt.params.len());
    for (name, tensor) in ckpt.params.iter() {
        let offset = blob.len() as u64;
        for &v in &tensor.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: tensor.shape.clone(),
            offset,
            numel: tensor.numel() as u64,
        });
    }

    let manifest = Manifest {
        format: FORMAT_TAG.to_string(),
        format_version: FORMAT_VERSION,
        variant: ckpt.variant.clone(),
        global_step: ckpt.global_step,
        dtype: "f32".to_string(),
        byte_order: "little".to_string(),
        blob: blob_name,
        tensors,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::contract(format!("manifest serialization failed: {e}")))?;

    let write = |path: &Path, bytes: &[u8]| -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        f.write_all(bytes).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(())
    };
    write(manifest_path, json.as_bytes())?;
    write(&blob_path, &blob)?;
    Ok(())
}

/// Load a checkpoint from its JSON manifest. The blob path is resolved
/// relative to the manifest's directory. Round-trips bit-exactly.
pub fn load_checkpoint(manifest_path: &Path) -> Result<Checkpoint> {
    let json = fs::read_to_string(manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let manifest: Manifest = serde_json::from_str(&json).map_err(|e| Error::InvalidCheckpoint {
        reason: format!("malformed manifest {}: {e}", manifest_path.display()),
    })?;

    if manifest.format != FORMAT_TAG {
        return Err(Error::InvalidCheckpoint {
            reason: format!("unexpected format tag {:?}", manifest.format),
        });
    }
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::InvalidCheckpoint {
            reason: format!("unsupported format version {}", manifest.format_version),
        });
    }
    if manifest.dtype != "f32" {
        return Err(Error::InvalidCheckpoint {
            reason: format!("unsupported dtype {:?}", manifest.dtype),
        });
    }
    if manifest.byte_order != "little" {
        return Err(Error::InvalidCheckpoint {
            reason: format!("unsupported byte order {:?}", manifest.byte_order),
        });
    }

    let blob_path = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.blob);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(blob_path.display().to_string(), e))?;

    let mut params = ParamSet::new();
    for entry in &manifest.tensors {
        let expected: usize = entry.shape.iter().product();
        if expected as u64 != entry.numel {
            return Err(Error::InvalidCheckpoint {
                reason: format!(
                    "tensor {}: shape {:?} disagrees with numel {}",
                    entry.name, entry.shape, entry.numel
                ),
            });
        }
        let start = entry.offset as usize;
        let byte_len = entry.numel as usize * 4;
        let end = start.checked_add(byte_len).filter(|&e| e <= blob.len()).ok_or_else(|| {
            Error::InvalidCheckpoint {
                reason: format!(
                    "tensor {}: range {}..{} exceeds blob of {} bytes",
                    entry.name,
                    start,
                    start + byte_len,
                    blob.len()
                ),
            }
        })?;
        let data: Vec<f32> = blob[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if params.contains(&entry.name) {
            return Err(Error::InvalidCheckpoint {
                reason: format!("duplicate tensor {}", entry.name),
            });
        }
        params.insert(entry.name.clone(), Tensor::new(entry.shape.clone(), data));
    }

    Ok(Checkpoint { params, variant: manifest.variant, global_step: manifest.global_step })
}
