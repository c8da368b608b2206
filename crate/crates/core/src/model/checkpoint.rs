//! Model checkpoints: a directory holding `manifest.json` (architecture
//! and bookkeeping) plus `weights.bin` (every tensor as little-endian f64
//! in the fixed parameter order).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::tensor::{s, Scalar};
use super::transformer::{ParamSet, TransformerConfig, TransformerModel};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Manifest {
    pub config: TransformerConfig,
    pub scalar: String,
    pub tensor_count: usize,
    pub param_count: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest error: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("weight file holds {found} values but the architecture needs {expected}")]
    SizeMismatch { expected: usize, found: usize },
}

pub fn save<S: Scalar>(model: &TransformerModel<S>, dir: &Path) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir)?;
    let tensors = model.params.tensors();
    let manifest = Manifest {
        config: model.cfg.clone(),
        scalar: std::any::type_name::<S>().rsplit("::").next().unwrap_or("f64").to_string(),
        tensor_count: tensors.len(),
        param_count: model.params.param_count(),
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    let mut buf: Vec<u8> = Vec::with_capacity(manifest.param_count * 8);
    for t in tensors {
        for v in t {
            let x = v.to_f64().expect("finite weight");
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let mut f = fs::File::create(dir.join(WEIGHTS_FILE))?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load<S: Scalar>(dir: &Path) -> Result<TransformerModel<S>, CheckpointError> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    let mut model =
        TransformerModel { cfg: manifest.config.clone(), params: ParamSet::zeros(&manifest.config) };
    let mut bytes = Vec::new();
    fs::File::open(dir.join(WEIGHTS_FILE))?.read_to_end(&mut bytes)?;
    let expected = model.params.param_count();
    if bytes.len() != expected * 8 {
        return Err(CheckpointError::SizeMismatch { expected, found: bytes.len() / 8 });
    }
    let mut offset = 0usize;
    for t in model.params.tensors_mut() {
        for v in t.iter_mut() {
            let mut arr = [0u8; 8];
            arr.copy_from_slice(&bytes[offset..offset + 8]);
            offset += 8;
            *v = s(f64::from_le_bytes(arr));
        }
    }
    Ok(model)
}
